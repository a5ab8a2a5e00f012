"""Built-in parameter sets and config loading.

Soil presets are stored in the units they are usually published in
(kN, kPa) and converted to SI base units (N, Pa) when loaded, so all
downstream computation is single-unit.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .exceptions import ConfigError
from .terramech import SoilParams, WheelGeometry

# Published-style soil tables: moduli in kN/m^(n+1), kN/m^(n+2); cohesion in
# kPa; angles in rad; deformation moduli in m.
SOIL_TABLES = {
    "sandy_loam": {
        "k_c_kN": 5.27,
        "k_phi_kN": 1515.04,
        "c_kPa": 1.72,
        "phi": 0.5061,
        "n": 0.7,
        "k_t": 0.025,
        "k_c_shear": 0.025,
        "a0": 0.18,
        "a1": 0.32,
        "lambda_r": 0.08,
    },
    "clay": {
        "k_c_kN": 13.19,
        "k_phi_kN": 692.15,
        "c_kPa": 4.14,
        "phi": 0.2269,
        "n": 0.5,
        "k_t": 0.01,
        "k_c_shear": 0.01,
        "a0": 0.43,
        "a1": 0.32,
        "lambda_r": 0.08,
    },
}


def load_soil(soil) -> SoilParams:
    """Build SoilParams from a preset tag or a table-style dict.

    Conversion to SI happens here (kN -> N, kPa -> Pa).
    """
    if isinstance(soil, SoilParams):
        return soil
    if isinstance(soil, str):
        if soil not in SOIL_TABLES:
            raise ConfigError(
                f"unknown soil tag {soil!r}; known: {sorted(SOIL_TABLES)}")
        table = SOIL_TABLES[soil]
    elif isinstance(soil, dict):
        table = soil
    else:
        raise ConfigError(f"cannot interpret soil spec of type {type(soil)}")
    try:
        return SoilParams(
            k_c=table["k_c_kN"] * 1e3,
            k_phi=table["k_phi_kN"] * 1e3,
            c=table["c_kPa"] * 1e3,
            phi=table["phi"],
            n=table["n"],
            k_t=table["k_t"],
            k_c_shear=table["k_c_shear"],
            a0=table["a0"],
            a1=table["a1"],
            lambda_r=table["lambda_r"],
        )
    except KeyError as err:
        raise ConfigError(f"soil table missing field {err}") from None
    except ValueError as err:
        raise ConfigError(f"invalid soil table: {err}") from None


# Vehicle mechanical and geometric parameters. Measured values: wheel radius
# 0.33 m, width 0.2286 m, sprung mass 452 kg, unsprung mass 30 kg, wheelbase
# 2.719 m, suspension stiffness 5e3 N/m, damping 300 N*s/m. The remaining
# entries are engineering defaults for quantities the source tables omit
# (inertias, CG split, aero) -- override in config if better data exists.
VEHICLE_DEFAULTS = {
    "m": 452.0,
    "m_w": 30.0,
    "I_z": 600.0,        # default, not measured
    "I_y": 600.0,        # default, not measured
    "I_wf": 1.8,         # default, not measured
    "I_wr": 1.8,         # default, not measured
    "l_f": 1.3595,       # default: wheelbase split 50/50
    "l_r": 1.3595,
    "k_f": 5.0e3,
    "k_r": 5.0e3,
    "c_f": 300.0,
    "c_r": 300.0,
    "wheel_r": 0.33,
    "wheel_b": 0.2286,
    "rho_air": 1.225,    # default, not measured
    "C_d": 0.5,          # default, not measured
    "A_fx": 1.5,         # default, not measured
    "A_fy": 2.5,         # default, not measured
    # rolling resistance disabled by default (no published coefficients)
    "rolling_P": 2.0e5,
    "rolling_alpha": 0.0,
    "rolling_beta": 0.0,
    "rolling_A": 0.0,
    "rolling_B": 0.0,
    "rolling_C": 0.0,
}

# Actuator saturation caps: steering [rad], rear drive torque [N*m].
STEER_MAX = 0.35
TORQUE_MAX = 130.0
TORQUE_CMD_FRAC = 0.95   # commands limited to [0, 0.95 * TORQUE_MAX]


def default_wheel() -> WheelGeometry:
    return WheelGeometry(r=VEHICLE_DEFAULTS["wheel_r"],
                         b=VEHICLE_DEFAULTS["wheel_b"])


def canonical_json(obj) -> str:
    """Stable serialization used for hashing configs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def read_json(path) -> dict:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"malformed JSON in {path}: {err}") from None
