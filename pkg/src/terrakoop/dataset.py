"""Batch trajectory generation, CSV storage, manifests, and splits."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .excitation import SignalSpec, make_signal, pe_rank_check
from .exceptions import ConfigError, TerrakoopError
from .vehicle import (
    ControlSignal,
    TerrainField,
    Trajectory,
    VehicleParams,
    rolling_state,
    simulate,
)

MANIFEST_FORMAT_VERSION = 1

CSV_HEADER = ("t,u,v,psi,psi_dot,X,Y,z,z_dot,theta,theta_dot,omega_f,"
              "omega_r,delta,tau,N_f,N_r,s_f,s_r,hf_f,hf_r,event")

EVENT_CODES = {"time": 0, "liftoff": 1, "slow_speed": 2}


def save_trajectory(traj: Trajectory, path) -> None:
    """Write the resampled record in the canonical CSV layout.

    Floats use repr (shortest round-trip), so save -> load reproduces
    every value exactly and the bytes are deterministic.
    """
    path = Path(path)
    code = EVENT_CODES.get(traj.termination, 0)
    n = len(traj)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for i in range(n):
            cells = [repr(float(traj.t[i]))]
            cells += [repr(float(v)) for v in traj.states[i]]
            cells += [repr(float(v)) for v in traj.inputs[i]]
            cells += [repr(float(v)) for v in traj.wheel_aux[i]]
            cells.append(str(code if i == n - 1 else 0))
            fh.write(",".join(cells) + "\n")


def load_trajectory(path) -> Trajectory:
    """Parse a canonical trajectory CSV back into a Trajectory."""
    path = Path(path)
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or ",".join(header) != CSV_HEADER:
            raise ConfigError(f"{path}: unrecognized trajectory header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 22:
                raise ConfigError(
                    f"{path}:{lineno}: expected 22 fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as err:
                raise ConfigError(f"{path}:{lineno}: {err}") from None
    if not rows:
        raise ConfigError(f"{path}: empty trajectory file")
    data = np.asarray(rows)
    code = int(data[-1, 21])
    termination = {v: k for k, v in EVENT_CODES.items()}.get(code, "time")
    return Trajectory(
        t=data[:, 0], states=data[:, 1:13], inputs=data[:, 13:15],
        wheel_aux=data[:, 15:21], termination=termination,
        t_end=float(data[-1, 0]))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class GenConfig:
    """Dataset generation settings (desk-scale defaults)."""

    soil: str = "sandy_loam"
    n_trajectories: int = 100
    duration: float = 10.0
    dt_out: float = 0.01
    master_seed: int = 0
    vehicle_overrides: dict = field(default_factory=dict)
    u0_range: tuple = (2.0, 8.0)
    psi0_range: tuple = (-math.pi, math.pi)
    # initial wheel speeds omega0 = u0/r * (1 + eps). Driving-side only by
    # default: under the adopted slip convention a free wheel seeded on
    # the braking side (eps < 0) runs away to zero spin and the
    # integration degenerates.
    wheel_slip_range: tuple = (0.0, 0.1)
    steer_families: tuple = ("multisine", "slalom", "fishhook", "circle",
                             "straight")
    steer_weights: tuple = (0.3, 0.25, 0.2, 0.15, 0.1)
    steer_amplitude_range: tuple = (0.05, 0.3)
    steer_freq_pool: tuple = (0.1, 0.2, 0.3, 0.5, 0.7, 0.9)
    steer_dither: float = 0.005
    torque_families: tuple = ("ramp", "multisine", "prbs", "chirp")
    torque_weights: tuple = (0.3, 0.3, 0.2, 0.2)
    torque_amplitude_range: tuple = (15.0, 50.0)
    torque_offset_range: tuple = (25.0, 75.0)
    torque_freq_pool: tuple = (0.15, 0.25, 0.45, 0.8, 1.1, 1.5)
    torque_dither: float = 1.5
    pe_depth: int = 40
    pe_retries: int = 5
    terrain_amplitude: float = 0.0   # 0 -> flat
    terrain_bumps: int = 16
    terrain_extent: float = 150.0
    sign_convention: str = "standard"
    workers: int = 1

    def terrain(self) -> TerrainField:
        if self.terrain_amplitude <= 0.0:
            return TerrainField.flat()
        return TerrainField.random_bumps(
            self.terrain_amplitude, self.terrain_extent, self.terrain_bumps,
            seed=self.master_seed + 777)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown generation keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        if "vehicle_overrides" in kw and isinstance(kw["vehicle_overrides"],
                                                    tuple):
            kw["vehicle_overrides"] = dict(kw["vehicle_overrides"])
        return cls(**kw)


def _draw_specs(cfg: GenConfig, rng) -> tuple[SignalSpec, SignalSpec]:
    """Seeded steering and torque excitation specs (fixed draw order)."""
    steer_fam = rng.choice(cfg.steer_families,
                           p=np.asarray(cfg.steer_weights)
                           / np.sum(cfg.steer_weights))
    torque_fam = rng.choice(cfg.torque_families,
                            p=np.asarray(cfg.torque_weights)
                            / np.sum(cfg.torque_weights))
    steer_amp = rng.uniform(*cfg.steer_amplitude_range)
    torque_amp = rng.uniform(*cfg.torque_amplitude_range)
    torque_off = rng.uniform(*cfg.torque_offset_range)
    steer_seed = int(rng.integers(0, 2 ** 63 - 1))
    torque_seed = int(rng.integers(0, 2 ** 63 - 1))
    steer = SignalSpec(
        family=str(steer_fam), seed=steer_seed, amplitude=float(steer_amp),
        lo=-cfgmod.STEER_MAX, hi=cfgmod.STEER_MAX,
        freq_pool=cfg.steer_freq_pool, dither=cfg.steer_dither)
    tau_hi = cfgmod.TORQUE_CMD_FRAC * cfgmod.TORQUE_MAX
    torque = SignalSpec(
        family=str(torque_fam), seed=torque_seed,
        amplitude=float(torque_amp), lo=0.0, hi=tau_hi,
        freq_pool=cfg.torque_freq_pool, dither=cfg.torque_dither,
        slope=25.0, offset=float(torque_off))
    return steer, torque


def generate_one(cfg: GenConfig, index: int):
    """Simulate trajectory `index`, retrying seeds until the input passes
    the persistence-of-excitation rank test.

    Returns (Trajectory, entry_dict_without_file_fields).
    """
    params = VehicleParams.from_config(cfg.vehicle_overrides)
    soil = cfgmod.load_soil(cfg.soil)
    terrain = cfg.terrain()
    n_samples = int(round(cfg.duration / cfg.dt_out))
    last_spec = None
    for retry in range(cfg.pe_retries + 1):
        ss = np.random.SeedSequence(cfg.master_seed,
                                    spawn_key=(index, retry))
        rng = np.random.default_rng(ss)
        u0 = rng.uniform(*cfg.u0_range)
        psi0 = rng.uniform(*cfg.psi0_range)
        eps_f = rng.uniform(*cfg.wheel_slip_range)
        eps_r = rng.uniform(*cfg.wheel_slip_range)
        steer_spec, torque_spec = _draw_specs(cfg, rng)
        last_spec = (steer_spec, torque_spec)
        delta = make_signal(steer_spec, cfg.duration, cfg.dt_out)
        tau = make_signal(torque_spec, cfg.duration, cfg.dt_out)
        u_mat = np.vstack([delta, tau])
        if n_samples >= 2 * cfg.pe_depth:
            rank, ok = pe_rank_check(u_mat, cfg.pe_depth)
        else:
            rank, ok = pe_rank_check(u_mat, n_samples // 2)
        if not ok:
            continue
        state0 = rolling_state(u0, params.wheel.r, psi0, eps_f, eps_r)
        signal = ControlSignal(dt=cfg.dt_out, delta=delta, tau=tau)
        traj = simulate(state0, signal, terrain, soil, params,
                        duration=cfg.duration, dt_out=cfg.dt_out,
                        sign_convention=cfg.sign_convention)
        entry = {
            "seed": [cfg.master_seed, index, retry],
            "steering": steer_spec.to_dict(),
            "torque": torque_spec.to_dict(),
            "duration": float(traj.t[-1]),
            "n_rows": len(traj),
            "termination": traj.termination,
            "pe_rank": int(rank),
            "initial": {"u0": float(u0), "psi0": float(psi0),
                        "eps_f": float(eps_f), "eps_r": float(eps_r)},
        }
        return traj, entry
    raise TerrakoopError(
        f"trajectory {index}: input failed the excitation rank test after "
        f"{cfg.pe_retries + 1} seeds (last specs: {last_spec})")


def _generate_and_save(args):
    cfg, index, out_dir = args
    traj, entry = generate_one(cfg, index)
    rel = f"trajectories/traj_{index:05d}.csv"
    path = Path(out_dir) / rel
    save_trajectory(traj, path)
    entry["path"] = rel
    entry["sha256"] = file_sha256(path)
    return index, entry


def generate_dataset(cfg: GenConfig, out_dir) -> dict:
    """Generate the corpus, write trajectory CSVs and the manifest.

    Deterministic for a fixed master seed: every trajectory file is
    byte-identical across runs regardless of worker count.
    """
    out_dir = Path(out_dir)
    (out_dir / "trajectories").mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, i, out_dir) for i in range(cfg.n_trajectories)]
    entries = [None] * cfg.n_trajectories
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for index, entry in pool.map(_generate_and_save, jobs):
                entries[index] = entry
    else:
        for job in jobs:
            index, entry = _generate_and_save(job)
            entries[index] = entry
    vehicle_cfg = dict(cfgmod.VEHICLE_DEFAULTS)
    vehicle_cfg.update(cfg.vehicle_overrides)
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "soil": cfg.soil,
        "vehicle_config_hash": cfgmod.config_hash(vehicle_cfg),
        "generation_config": cfg.to_dict(),
        "created": datetime.now(timezone.utc).isoformat(),
        "trajectories": entries,
    }
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def save_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def load_manifest(path) -> dict:
    path = Path(path)
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != MANIFEST_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported manifest version {manifest.get('format_version')}")
    return manifest


def verify_manifest(manifest: dict, base_dir) -> None:
    """Check that every referenced file exists and re-hashes correctly."""
    base = Path(base_dir)
    seeds = set()
    for entry in manifest["trajectories"]:
        p = base / entry["path"]
        if not p.exists():
            raise ConfigError(f"manifest references missing file {p}")
        if file_sha256(p) != entry["sha256"]:
            raise ConfigError(f"hash mismatch for {p}")
        key = tuple(entry["seed"])
        if key in seeds:
            raise ConfigError(f"duplicate seed {key} in manifest")
        seeds.add(key)


def load_records(manifest: dict, base_dir, min_samples: int = 0):
    """Load (outputs, inputs) channel-first pairs for identification."""
    base = Path(base_dir)
    records = []
    for entry in manifest["trajectories"]:
        traj = load_trajectory(base / entry["path"])
        if len(traj) >= min_samples:
            records.append((traj.outputs.T.copy(), traj.inputs.T.copy()))
    return records


def load_trajectories(manifest: dict, base_dir, min_samples: int = 0):
    base = Path(base_dir)
    out = []
    for entry in manifest["trajectories"]:
        traj = load_trajectory(base / entry["path"])
        if len(traj) >= min_samples:
            out.append(traj)
    return out


def split(manifest: dict, test_fraction: float, seed: int) -> tuple[dict, dict]:
    """Seed-deterministic disjoint train/test partition of a manifest."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")
    entries = manifest["trajectories"]
    n = len(entries)
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(int(i) for i in order[:n_test])
    train = dict(manifest)
    test = dict(manifest)
    train["trajectories"] = [e for i, e in enumerate(entries)
                             if i not in test_idx]
    test["trajectories"] = [e for i, e in enumerate(entries)
                            if i in test_idx]
    train["split"] = {"role": "train", "test_fraction": test_fraction,
                      "seed": seed}
    test["split"] = {"role": "test", "test_fraction": test_fraction,
                     "seed": seed}
    return train, test
