"""Off-road vehicle simulation on deformable soil, lifted-linear predictor
identification, and receding-horizon control."""

__version__ = "0.1.0"
