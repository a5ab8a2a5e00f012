"""Command-line entry point.

Subcommands:
    gen       generate a trajectory dataset from a declarative config
    identify  run the recursive identification pipeline -> model + lifting
    sweep     model-order sweep -> metrics CSV
    eval      rollout metrics over refresh periods ((cross-)terrain,
              elevation variants by pointing --data at other corpora)
    mpc       closed-loop receding-horizon run -> log CSV
    forces    wheel-soil force sweep tables

Exit codes: 0 success, 1 configuration error, 2 numerical failure. Every
run writes a reproducibility stamp (config hash, seeds, versions) into the
output directory and prints one machine-readable JSON summary line.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import dataset as ds
from . import kmpc, predict, ssid
from . import lifting as lifting_mod
from .excitation import SignalSpec, make_signal
from .exceptions import ConfigError, TerrakoopError
from .vehicle import ControlSignal, VehicleParams, rolling_state, simulate


def _load_schema() -> dict:
    with resources.files("terrakoop.schemas").joinpath(
            "experiment.schema.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


def load_experiment_config(path) -> dict:
    """Read and schema-validate an experiment config file."""
    import jsonschema

    cfg = cfgmod.read_json(path)
    try:
        jsonschema.validate(cfg, _load_schema())
    except jsonschema.ValidationError as err:
        raise ConfigError(f"config validation failed: {err.message}") \
            from None
    return cfg


def _write_stamp(out_dir, cfg, args, seed=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    import numba
    import scipy
    stamp = {
        "config_hash": cfgmod.config_hash(cfg),
        "cli": [str(a) for a in args],
        "seed": seed,
        "versions": {
            "terrakoop": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "numba": numba.__version__,
        },
        "created": datetime.now(timezone.utc).isoformat(),
    }
    (out_dir / "stamp.json").write_text(json.dumps(stamp, indent=1),
                                        encoding="utf-8")
    return stamp


def _summary(**kw):
    print(json.dumps(kw, sort_keys=True))


def _gen_config(cfg: dict, seed=None, workers=None) -> ds.GenConfig:
    d = dict(cfg.get("dataset", {}))
    d.setdefault("soil", cfg.get("soil", "sandy_loam"))
    if cfg.get("vehicle"):
        d.setdefault("vehicle_overrides", cfg["vehicle"])
    if seed is not None:
        d["master_seed"] = seed
    if workers is not None:
        d["workers"] = workers
    return ds.GenConfig.from_dict(d)


def _ssid_config(cfg: dict) -> ssid.SsidConfig:
    d = cfg.get("ssid", {})
    return ssid.SsidConfig(
        l=d.get("l", 40), r=d.get("r", "auto"),
        epsilon=d.get("epsilon", None), dt=d.get("dt", 0.01),
        order_energy=d.get("order_energy", 0.9999),
        b_solver=d.get("b_solver", "gradient"),
        decimate=d.get("decimate", 1))


def _lifting_config(cfg: dict) -> lifting_mod.LiftingConfig:
    d = cfg.get("lifting", {})
    return lifting_mod.LiftingConfig(
        hyper=d.get("hyper", "mle"),
        max_pairs=d.get("max_pairs", 2000),
        mle_pairs=d.get("mle_pairs", 300),
        noise_ratio=d.get("noise_ratio", 1e-4),
        jitter=d.get("jitter", 1e-8),
        mle_restarts=d.get("mle_restarts", 1))


def _mpc_config(cfg: dict) -> kmpc.MpcConfig:
    d = dict(cfg.get("mpc", {}))
    d.pop("reference", None)
    kw = {}
    for k, v in d.items():
        kw[k] = tuple(v) if isinstance(v, list) else v
    return kmpc.MpcConfig(**kw)


def _split_records(cfg, manifest, data_dir):
    ev = cfg.get("eval", {})
    frac = ev.get("test_fraction", 0.2)
    seed = ev.get("split_seed", 1)
    min_rows = ev.get("min_samples", cfg.get("ssid", {}).get("l", 40) + 1)
    train_m, test_m = ds.split(manifest, frac, seed)
    train = ds.load_records(train_m, data_dir, min_samples=min_rows)
    test_trajs = ds.load_trajectories(test_m, data_dir,
                                      min_samples=min_rows)
    return train_m, test_m, train, test_trajs


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(
                repr(float(v)) if isinstance(v, (float, np.floating))
                else str(v) for v in row) + "\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen(args):
    cfg = load_experiment_config(args.config)
    gen_cfg = _gen_config(cfg, seed=args.seed, workers=args.workers)
    out = Path(args.out)
    _write_stamp(out, cfg, sys.argv[1:], seed=gen_cfg.master_seed)
    manifest = ds.generate_dataset(gen_cfg, out)
    terminated = sum(1 for e in manifest["trajectories"]
                     if e["termination"] != "time")
    _summary(cmd="gen", status="ok", out=str(out), soil=gen_cfg.soil,
             n=gen_cfg.n_trajectories, early_terminated=terminated,
             seed=gen_cfg.master_seed)
    return 0


def cmd_identify(args):
    cfg = load_experiment_config(args.config)
    out = Path(args.out)
    data_dir = Path(args.data)
    manifest = ds.load_manifest(data_dir / "manifest.json")
    ds.verify_manifest(manifest, data_dir)
    _write_stamp(out, cfg, sys.argv[1:],
                 seed=manifest["generation_config"]["master_seed"])
    scfg = _ssid_config(cfg)
    train_m, test_m, train, _ = _split_records(cfg, manifest, data_dir)
    model, realization, log = ssid.identify(train, scfg)
    model.soil = manifest["soil"]
    lm = lifting_mod.fit_lifting_from_realization(
        train, realization, model, config=_lifting_config(cfg))
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    lm.save(out / "lifting.json")
    ds.save_manifest(train_m, out / "train_manifest.json")
    ds.save_manifest(test_m, out / "test_manifest.json")
    accepted = sum(1 for e in log if e["accepted"])
    _summary(cmd="identify", status="ok", out=str(out), r=model.r,
             l=model.l, soil=model.soil,
             spectral_radius=model.spectral_radius,
             records_accepted=accepted, records_seen=len(log))
    return 0


def cmd_sweep(args):
    cfg = load_experiment_config(args.config)
    out = Path(args.out)
    data_dir = Path(args.data)
    manifest = ds.load_manifest(data_dir / "manifest.json")
    _write_stamp(out, cfg, sys.argv[1:],
                 seed=manifest["generation_config"]["master_seed"])
    scfg = _ssid_config(cfg)
    _, _, train, test_trajs = _split_records(cfg, manifest, data_dir)
    orders = (args.orders or cfg.get("eval", {}).get("orders")
              or [6, 10, 14, 18, 22])
    refresh = args.refresh or 2.5
    rows = ssid.order_sweep(train, test_trajs, orders, refresh, scfg,
                            lifting_config=_lifting_config(cfg))
    out_rows = []
    labels = ("u", "v", "psi_dot")
    for row in rows:
        for i, lab in enumerate(labels):
            out_rows.append((row["order"], lab, row["rmse"][i],
                             row["n_rmse"][i], row["mean_n_rmse"],
                             row["spectral_radius"]))
    _write_csv(out / "order_sweep.csv",
               "order,output,rmse,n_rmse,mean_n_rmse,spectral_radius",
               out_rows)
    best = min(rows, key=lambda r: r["mean_n_rmse"])
    _summary(cmd="sweep", status="ok", out=str(out),
             orders=[r["order"] for r in rows], best_order=best["order"])
    return 0


def cmd_eval(args):
    cfg = load_experiment_config(args.config)
    out = Path(args.out)
    _write_stamp(out, cfg, sys.argv[1:])
    model = ssid.KoopmanModel.load(args.model)
    lm = lifting_mod.LiftingMap.load(args.lifting)
    data_dir = Path(args.data)
    manifest = ds.load_manifest(data_dir / "manifest.json")
    min_rows = model.l + 1
    if args.use_split == "test":
        ev = cfg.get("eval", {})
        _, test_m = ds.split(manifest, ev.get("test_fraction", 0.2),
                             ev.get("split_seed", 1))
        trajs = ds.load_trajectories(test_m, data_dir,
                                     min_samples=min_rows)
    else:
        trajs = ds.load_trajectories(manifest, data_dir,
                                     min_samples=min_rows)
    refresh_list = (args.refresh_list
                    or cfg.get("eval", {}).get("refresh")
                    or [0.25, 0.5, 1.25, 2.5])
    labels = ("u", "v", "psi_dot")
    rows = []
    table = {}
    for rf in refresh_list:
        runs = [predict.rollout(model, lm, tr, rf) for tr in trajs]
        r_nested = predict.rmse(runs)
        r_mean = predict.rmse_mean_of_trajectories(runs)
        table[rf] = r_nested
        for i, lab in enumerate(labels):
            rows.append((model.soil, manifest["soil"], rf, lab,
                         r_nested[i], r_mean[i]))
    _write_csv(out / "rollout_rmse.csv",
               "model_soil,data_soil,refresh,output,rmse,rmse_mean_traj",
               rows)
    eig, max_mod, stable = predict.spectrum(model)
    _write_csv(out / "spectrum.csv", "re,im",
               [(float(e.real), float(e.imag)) for e in eig])
    result = {"cmd": "eval", "status": "ok", "out": str(out),
              "model_soil": model.soil, "data_soil": manifest["soil"],
              "n_test": len(trajs), "max_eig_modulus": max_mod,
              "stable": bool(stable)}
    if args.flat_data:
        flat_dir = Path(args.flat_data)
        flat_manifest = ds.load_manifest(flat_dir / "manifest.json")
        flat_trajs = ds.load_trajectories(flat_manifest, flat_dir,
                                          min_samples=min_rows)
        pct_rows = []
        for rf in refresh_list:
            elev_runs = [predict.rollout(model, lm, tr, rf)
                         for tr in trajs]
            flat_runs = [predict.rollout(model, lm, tr, rf)
                         for tr in flat_trajs]
            pct = predict.pct_rmse(elev_runs, flat_runs)
            for i, lab in enumerate(labels):
                pct_rows.append((model.soil, rf, lab, pct[i]))
        _write_csv(out / "pct_rmse.csv",
                   "model_soil,refresh,output,pct_rmse", pct_rows)
    _summary(**result)
    return 0


def _build_reference(cfg, plant, mcfg, seed):
    """Feasible reference: open-loop plant run under a fishhook steer."""
    ref_cfg = cfg.get("mpc", {}).get("reference", {})
    kind = ref_cfg.get("kind", "fishhook")
    if kind == "trajectory_file":
        traj = ds.load_trajectory(ref_cfg["path"])
        return kmpc.reference_from_trajectory(traj, mcfg.dt_mpc)
    duration = ref_cfg.get("duration", 12.0)
    u0 = ref_cfg.get("u0", 4.0)
    torque = ref_cfg.get("torque", 45.0)
    amp = ref_cfg.get("steer_amplitude", 0.18)
    spec = SignalSpec(family="fishhook", seed=ref_cfg.get("seed", seed or 0),
                      amplitude=amp, ramp_rate=0.12, hold=2.5,
                      counter_scale=-1.0)
    dt = 0.01
    delta = make_signal(spec, duration, dt)
    n = len(delta)
    sig = ControlSignal(dt=dt, delta=delta, tau=np.full(n, torque))
    state0 = rolling_state(u0, plant.vehicle.wheel.r)
    traj = simulate(state0, sig, plant.terrain, plant.soil, plant.vehicle,
                    duration=duration, dt_out=dt,
                    sign_convention=plant.sign_convention)
    return kmpc.reference_from_trajectory(traj, mcfg.dt_mpc)


def cmd_mpc(args):
    cfg = load_experiment_config(args.config)
    out = Path(args.out)
    _write_stamp(out, cfg, sys.argv[1:], seed=args.seed)
    model = ssid.KoopmanModel.load(args.model)
    lm = lifting_mod.LiftingMap.load(args.lifting)
    soil_tag = args.soil or cfg.get("soil", model.soil or "sandy_loam")
    plant = kmpc.PlantConfig(
        soil=cfgmod.load_soil(soil_tag),
        vehicle=VehicleParams.from_config(cfg.get("vehicle", {})),
        terrain=ds.GenConfig.from_dict(
            {**cfg.get("dataset", {}), "soil": soil_tag}).terrain())
    mcfg = _mpc_config(cfg)
    reference = _build_reference(cfg, plant, mcfg, args.seed)
    log = kmpc.run_closed_loop(plant, model, lm, mcfg, reference)
    rows = []
    for i in range(len(log)):
        rows.append((log.t[i], *log.states[i], *log.refs[i],
                     *log.inputs[i], log.costs[i], log.solve_ms[i],
                     int(log.saturated[i])))
    _write_csv(out / "closedloop.csv",
               "t,X,Y,psi,u,v,psi_dot,X_ref,Y_ref,psi_ref,delta,tau,"
               "cost,solve_ms,saturated", rows)
    _summary(cmd="mpc", status="ok", out=str(out), model_soil=model.soil,
             plant_soil=soil_tag, steps=len(log),
             termination=log.termination, mean_cost=log.mean_cost,
             mean_solve_ms=log.mean_solve_ms)
    return 0


def cmd_forces(args):
    cfg = load_experiment_config(args.config)
    out = Path(args.out)
    _write_stamp(out, cfg, sys.argv[1:])
    from . import terramech as tm
    wheel = VehicleParams.from_config(cfg.get("vehicle", {})).wheel
    soils = args.soils or list(cfgmod.SOIL_TABLES)
    rows = []
    slips = np.linspace(-1.0, 1.0, 41)
    betas = np.linspace(-0.5, 0.5, 21)
    loads = [1000.0, 2000.0, 3000.0]
    for tag in soils:
        soil = cfgmod.load_soil(tag)
        for N in loads:
            for s in slips:
                st = tm.ContactState(s=float(s), beta=0.0, N=N)
                h = tm.solve_sinkage(N, st, soil, wheel)
                wf = tm.integrate_forces(h, st, soil, wheel)
                rows.append((tag, N, float(s), 0.0, wf.h_f, wf.F_l,
                             wf.F_c, wf.F_z))
            for b in betas:
                st = tm.ContactState(s=0.2, beta=float(b), N=N)
                h = tm.solve_sinkage(N, st, soil, wheel)
                wf = tm.integrate_forces(h, st, soil, wheel)
                rows.append((tag, N, 0.2, float(b), wf.h_f, wf.F_l,
                             wf.F_c, wf.F_z))
    _write_csv(out / "forces.csv", "soil,N,s,beta,h_f,F_l,F_c,F_z", rows)
    _summary(cmd="forces", status="ok", out=str(out), soils=soils,
             rows=len(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="terrakoop", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a trajectory dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("identify", help="identify predictor + lifting map")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("sweep", help="model-order sweep metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--orders", type=lambda s: [int(v) for v in s.split(",")],
                   default=None)
    p.add_argument("--refresh", type=float, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="rollout metrics over refresh periods")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--lifting", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--use-split", choices=["all", "test"], default="all")
    p.add_argument("--refresh-list",
                   type=lambda s: [float(v) for v in s.split(",")],
                   default=None)
    p.add_argument("--flat-data", default=None,
                   help="baseline corpus for percentage-RMSE comparison")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mpc", help="closed-loop receding-horizon run")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--lifting", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--soil", default=None, help="plant soil tag")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_mpc)

    p = sub.add_parser("forces", help="terramechanics force sweep tables")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--soils", type=lambda s: s.split(","), default=None)
    p.set_defaults(func=cmd_forces)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        _summary(cmd=args.command, status="config_error", error=str(err))
        return 1
    except TerrakoopError as err:
        _summary(cmd=args.command, status="numerical_error", error=str(err))
        return 2


if __name__ == "__main__":
    sys.exit(main())
