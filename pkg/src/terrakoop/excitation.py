"""Steering and torque excitation families plus the input-richness check.

Every family is deterministic for a fixed seed and emits values already
clamped to its saturation bounds. A small seeded stochastic overlay
(dither) can be mixed in to guarantee persistence of excitation for
otherwise low-rank profiles (ramps, constants).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigError

FAMILIES = ("straight", "circle", "multisine", "slalom", "fishhook", "prbs",
            "chirp", "ramp")

PE_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class SignalSpec:
    """Parameters of one excitation signal.

    amplitude is the family's main level; (lo, hi) are hard saturation
    bounds applied on top of whatever the family produces. freq_pool is
    the tone candidate set [Hz] for the oscillatory families.
    """

    family: str
    seed: int
    amplitude: float = 0.1
    lo: float = -0.35
    hi: float = 0.35
    freq_pool: tuple = (0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.2, 1.6, 2.0)
    n_tones: int = 3
    dwell: float = 0.6
    slope: float = 0.3
    dither: float = 0.0
    # fishhook shape: ramp to +amplitude, hold, countersteer to
    # counter_scale * amplitude, hold to the end
    ramp_rate: float = 0.25
    hold: float = 1.0
    counter_scale: float = -1.25
    offset: float = 0.0   # constant added before saturation (torque bias)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown signal family {self.family!r}")
        if self.lo >= self.hi:
            raise ConfigError("saturation bounds must satisfy lo < hi")
        cap = max(abs(self.lo), abs(self.hi))
        if abs(self.amplitude) > cap + 1e-12:
            raise ConfigError(
                f"amplitude {self.amplitude} exceeds saturation cap {cap}")

    def to_dict(self) -> dict:
        return {
            "family": self.family, "seed": self.seed,
            "amplitude": self.amplitude, "lo": self.lo, "hi": self.hi,
            "freq_pool": list(self.freq_pool), "n_tones": self.n_tones,
            "dwell": self.dwell, "slope": self.slope, "dither": self.dither,
            "ramp_rate": self.ramp_rate, "hold": self.hold,
            "counter_scale": self.counter_scale, "offset": self.offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SignalSpec":
        d = dict(d)
        d["freq_pool"] = tuple(d.get("freq_pool", cls.freq_pool))
        return cls(**d)

    def reseeded(self, seed: int) -> "SignalSpec":
        return replace(self, seed=seed)


def saturate(seq, lo: float, hi: float) -> np.ndarray:
    """Elementwise clamp to [lo, hi]."""
    if lo >= hi:
        raise ConfigError("saturate requires lo < hi")
    return np.clip(np.asarray(seq, dtype=float), lo, hi)


def make_signal(spec: SignalSpec, duration: float, dt: float) -> np.ndarray:
    """Sampled scalar excitation over [0, duration) at step dt.

    Returns ceil(duration/dt) samples; sample k is the zero-order-hold
    value over [k*dt, (k+1)*dt).
    """
    if dt <= 0:
        raise ConfigError("dt must be > 0")
    if duration < dt:
        raise ConfigError("duration must be >= dt")
    n = int(np.ceil(duration / dt - 1e-9))
    t = np.arange(n) * dt
    rng = np.random.default_rng(spec.seed)

    fam = spec.family
    if fam == "straight":
        sig = np.zeros(n)
    elif fam == "circle":
        sig = np.full(n, spec.amplitude)
    elif fam == "multisine":
        sig = _multisine(spec, t, rng)
    elif fam == "slalom":
        sig = _slalom(spec, t, rng)
    elif fam == "fishhook":
        sig = _fishhook(spec, t)
    elif fam == "prbs":
        sig = _prbs(spec, t, rng)
    elif fam == "chirp":
        f0 = min(spec.freq_pool)
        f1 = max(spec.freq_pool)
        sweep = f0 * t + 0.5 * (f1 - f0) / max(t[-1], dt) * t ** 2
        sig = spec.amplitude * np.sin(2.0 * np.pi * sweep)
    elif fam == "ramp":
        sig = _ramp(spec, t, rng)
    else:  # pragma: no cover - guarded by SignalSpec
        raise ConfigError(f"unknown signal family {fam!r}")

    if spec.offset != 0.0:
        sig = sig + spec.offset
    if spec.dither > 0.0:
        sig = sig + rng.normal(0.0, spec.dither, n)
    return saturate(sig, spec.lo, spec.hi)


def _multisine(spec, t, rng):
    pool = np.asarray(spec.freq_pool, dtype=float)
    k = min(spec.n_tones, len(pool))
    freqs = rng.choice(pool, size=k, replace=False)
    amps = rng.uniform(0.3, 1.0, k)
    amps *= spec.amplitude / np.sum(amps)
    phases = rng.uniform(0.0, 2.0 * np.pi, k)
    sig = np.zeros_like(t)
    for a, f, ph in zip(amps, freqs, phases):
        sig += a * np.sin(2.0 * np.pi * f * t + ph)
    return sig


def _slalom(spec, t, rng):
    """Amplitude-modulated low-frequency weave."""
    pool = sorted(spec.freq_pool)
    f = rng.choice(pool[: max(2, len(pool) // 3)])
    phase = rng.uniform(0.0, 2.0 * np.pi)
    f_mod = f / 5.0
    mod = 0.6 + 0.4 * np.sin(2.0 * np.pi * f_mod * t)
    return spec.amplitude * mod * np.sin(2.0 * np.pi * f * t + phase)


def _fishhook(spec, t):
    """Two-phase ramp / hold / countersteer / hold profile."""
    a = spec.amplitude
    rate = max(spec.ramp_rate, 1e-6)
    t_ramp1 = abs(a) / rate
    t_hold1 = t_ramp1 + spec.hold
    target2 = spec.counter_scale * a
    t_ramp2 = t_hold1 + abs(target2 - a) / rate
    sig = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti < t_ramp1:
            sig[i] = np.sign(a) * rate * ti
        elif ti < t_hold1:
            sig[i] = a
        elif ti < t_ramp2:
            frac = (ti - t_hold1) / max(t_ramp2 - t_hold1, 1e-12)
            sig[i] = a + frac * (target2 - a)
        else:
            sig[i] = target2
    return sig


def _prbs(spec, t, rng):
    """Seeded +/- amplitude switching at dwell multiples."""
    n = len(t)
    dt = t[1] - t[0] if n > 1 else 1.0
    hold = max(1, int(round(spec.dwell / dt)))
    n_blocks = n // hold + 1
    signs = rng.choice([-1.0, 1.0], size=n_blocks)
    return spec.amplitude * np.repeat(signs, hold)[:n]


def _ramp(spec, t, rng):
    """Slope-limited moves toward seeded targets, one per dwell window."""
    n = len(t)
    dt = t[1] - t[0] if n > 1 else 1.0
    hold = max(1, int(round(spec.dwell / dt)))
    n_blocks = n // hold + 1
    targets = rng.uniform(spec.lo, spec.hi, size=n_blocks)
    sig = np.empty(n)
    level = targets[0]
    max_step = spec.slope * dt
    for i in range(n):
        tgt = targets[min(i // hold, n_blocks - 1)]
        gap = tgt - level
        level += np.clip(gap, -max_step, max_step)
        sig[i] = level
    return sig


def pe_rank_check(u_seq, l: int) -> tuple[int, bool]:
    """Persistence-of-excitation check via the input block-Hankel rank.

    u_seq is (n,) or (m, n). Builds the depth-l block Hankel, reports the
    numerical rank (singular values above 1e-10 * sigma_max), and flags
    persistent excitation iff rank == l * m.
    """
    u = np.atleast_2d(np.asarray(u_seq, dtype=float))
    m, n = u.shape
    if n < 2 * l:
        raise ConfigError(
            f"sequence length {n} too short for depth {l} (need >= {2 * l})")
    s = n - l + 1
    H = np.empty((m * l, s))
    for i in range(l):
        H[i * m:(i + 1) * m] = u[:, i:i + s]
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[0] == 0.0:
        return 0, False
    rank = int(np.sum(sv > PE_RANK_RTOL * sv[0]))
    return rank, rank == l * m
