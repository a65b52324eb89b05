"""Command-line experiment runner.

Commands (``kktembed <command> [--config PATH] [--seed N] [--out DIR] ...``):

``verify``   property suites for the configured network and splits
``flow``     gradient flow run, limit direction and KKT alignment
``compare``  paired source/target runs through the configured splits
``kkt``      KKT report for a parameter file (``--params``, optional ``--split``)
``split``    apply a split file to a parameter file

Exit codes: 0 success or inconclusive run, 1 property violation,
2 usage or config error, 3 numeric abort.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from kktembed import __version__, _backend, sampling
from kktembed import flow as fl
from kktembed.config import ConfigError, ExperimentConfig, load
from kktembed.kkt import check_embedding, kkt_residual
from kktembed.net import LayoutError, backprop, euler_check, load_params, save_params
from kktembed.oracle import KinkProximityError, dense_map_check, finite_difference_gradient, MAX_DENSE_DIM
from kktembed.transform import (
    SplitError,
    apply,
    build_split,
    build_splits,
    load_splits,
    verify_embedding,
)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_ABORT = 3


class UsageError(ValueError):
    pass


# -- report plumbing --------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2) + "\n", encoding="utf-8")


def _envelope(cfg: ExperimentConfig, command: str, result: dict) -> dict:
    return {
        "command": command,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "kink_rule": {"slope_at_zero": cfg.rule.slope_at_zero},
        "result": result,
        "metadata": {
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "version": __version__,
            "backend": _backend.name,
        },
    }


def _outdir(cfg: ExperimentConfig) -> Path:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check(value: float, tol: float) -> dict:
    return {"value": value, "tol": tol, "passed": bool(value <= tol)}


# -- verify -----------------------------------------------------------------------

def _suite(errors, tol) -> dict:
    errors = list(errors)
    worst = max(errors) if errors else 0.0
    return {"count": len(errors), "max_error": worst, "tol": tol, "passed": bool(worst <= tol)}


def run_verify(cfg: ExperimentConfig) -> tuple[dict, int]:
    v = cfg.verify
    tol, iso_tol = float(v["tol"]), float(v["isometry_tol"])
    rng = np.random.default_rng(cfg.seed)
    spec, T = cfg.spec, cfg.transform()
    thetas = [sampling.random_params(rng, spec) for _ in range(int(v["thetas"]))]
    xs = [rng.normal(size=spec.input_dim) for _ in range(int(v["inputs"]))] + list(cfg.data.X)

    suites = {}
    iso = []
    for th in thetas:
        nrm = float(np.linalg.norm(th))
        iso.append(abs(float(np.linalg.norm(apply(T, th))) - nrm) / nrm)
    suites["isometry"] = _suite(iso, iso_tol)
    if max(spec.num_params, T.target.num_params) <= MAX_DENSE_DIM:
        d = dense_map_check(T, seed=cfg.seed)
        suites["dense_map"] = _suite([d.max_gram_error, d.max_apply_error], iso_tol)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        emb = verify_embedding(T, thetas, xs, cfg.rule)
        out_err, sub_err = [emb.max_output_error], [emb.max_subgradient_error]
        near = 0
        if cfg.splits:
            first = build_split(spec, cfg.splits[0]).splits[0]
            for th, x in sampling.kink_samples(rng, spec, first, int(v["kink_samples"])):
                r = verify_embedding(T, [th], [x], cfg.rule)
                out_err.append(r.max_output_error)
                sub_err.append(r.max_subgradient_error)
                near += 1
    suites["output"] = _suite(out_err, tol) | {"samples": emb.samples + near, "near_kink": near}
    suites["subgradient"] = _suite(sub_err, tol) | {"samples": emb.samples + near, "near_kink": near}

    eul = []
    for net, params in ((spec, thetas), (T.target, [apply(T, th) for th in thetas])):
        for th in params[: max(1, int(v["euler_samples"]) // (2 * len(xs)) + 1)]:
            for x in xs:
                phi = backprop(net, th, x, cfg.rule).output
                eul.append(euler_check(net, th, x, cfg.rule) / (1.0 + abs(phi)))
    suites["euler"] = _suite(eul, tol)

    fd = []
    attempts = 0
    while len(fd) < int(v["fd_samples"]) and attempts < 20 * int(v["fd_samples"]) + 20:
        attempts += 1
        th, x = sampling.random_params(rng, spec), rng.normal(size=spec.input_dim)
        try:
            g_fd = finite_difference_gradient(spec, th, x)
        except KinkProximityError:
            continue
        g = backprop(spec, th, x, cfg.rule).gradient
        fd.append(float(np.linalg.norm(g - g_fd)) / max(1.0, float(np.linalg.norm(g))))
    suites["finite_difference"] = _suite(fd, 1e-6)

    pairs_iso, pairs_gram = [], []
    for _ in range(int(v["random_pairs"])):
        net = sampling.random_network(rng)
        Tr = build_split(net, sampling.random_split(rng, net))
        th = sampling.random_params(rng, net)
        nrm = float(np.linalg.norm(th))
        pairs_iso.append(abs(float(np.linalg.norm(apply(Tr, th))) - nrm) / nrm)
        pairs_gram.append(dense_map_check(Tr, vectors=2, seed=cfg.seed).max_gram_error)
    suites["random_isometry"] = _suite(pairs_iso, iso_tol)
    suites["random_dense_map"] = _suite(pairs_gram, iso_tol)

    passed = all(s["passed"] for s in suites.values())
    result = {
        "passed": passed,
        "network": spec.to_dict(),
        "target_network": T.target.to_dict(),
        "splits": [s.to_dict() for s in cfg.splits],
        "suites": suites,
    }
    return result, EXIT_OK if passed else EXIT_VIOLATION


# -- flow -------------------------------------------------------------------------

def _alignment(spec, traj, cfg: ExperimentConfig, steps=None) -> list[dict]:
    """Alignment reports at each configured horizon.

    Horizons are located by norm growth, or at the given checkpoint steps
    (used to cut a target run exactly where its source run was cut).
    """
    opts = cfg.options
    rows = []
    for i, g in enumerate(opts["horizons"]):
        entry = {"horizon": g}
        try:
            if steps is None:
                sub = traj.truncate_at_growth(g)
            elif steps[i] is None:
                raise ValueError("source run did not reach this horizon")
            else:
                sub = traj.prefix(steps[i])
            rep = fl.kkt_alignment(spec, sub, cfg.data, cfg.kkt, window=int(opts["window"]))
        except ValueError as exc:
            entry["skipped"] = str(exc)
            rows.append(entry)
            continue
        entry.update(
            step=sub.checkpoints[-1].step,
            log_t=sub.checkpoints[-1].log_t,
            q_min=sub.checkpoints[-1].q_min,
            stationarity_residual=rep.stationarity_residual,
            feasibility_violation=rep.feasibility_violation,
            complementarity_residual=rep.complementarity_residual,
            active=[int(k) for k in np.flatnonzero(rep.active)],
            lambdas=rep.lambdas,
        )
        rows.append(entry)
    return rows


def _trend(rows) -> dict:
    vals = [r["stationarity_residual"] for r in rows if "stationarity_residual" in r]
    return {
        "values": vals,
        "complete": len(vals) == len(rows),
        "non_increasing": all(b <= a for a, b in zip(vals, vals[1:])),
        "final": vals[-1] if vals else math.nan,
    }


def _direction(traj, opts) -> dict | None:
    try:
        rep = fl.direction_limit(traj, window=int(opts["window"]), angle_tol=float(opts["angle_tol"]))
    except ValueError:
        return None
    return rep


def _run_summary(traj: fl.Trajectory) -> dict:
    last = traj.checkpoints[-1]
    return {
        "stop_reason": traj.stop_reason,
        "status": "conclusive" if traj.conclusive else "inconclusive",
        "steps": last.step,
        "log_t": last.log_t,
        "log_loss": last.log_loss,
        "norm": last.norm,
        "q_min": last.q_min,
        "norm_growth": traj.norm_growth,
        "kink_landings": int(traj.kink_landings),
        "rejected_steps": int(traj.rejections),
        "assumption": fl.NORM_DIVERGENCE_PROXY,
    }


def _warn_zero(theta0, result):
    if not np.any(theta0):
        msg = ("zero initialization: every gradient element vanishes, so the "
               "trajectory stays at 0")
        print(f"warning: {msg}", file=sys.stderr)
        result.setdefault("warnings", []).append(msg)


def run_flow(cfg: ExperimentConfig) -> tuple[dict, int]:
    out = _outdir(cfg)
    opts = cfg.options
    theta0 = cfg.initial_params()
    result: dict = {}
    _warn_zero(theta0, result)
    try:
        traj = fl.integrate(cfg.spec, theta0, cfg.data, cfg.loss, cfg.flow, cfg.rule)
    except fl.FlowAbort as exc:
        fl.write_trajectory_csv(out / "trajectory.csv", exc.trajectory)
        result.update(status="aborted", error=str(exc), run=_run_summary(exc.trajectory))
        return result, EXIT_ABORT
    fl.write_trajectory_csv(out / "trajectory.csv", traj)
    fl.write_snapshots_json(out / "snapshots.json", traj, int(opts["snapshot_stride"]))

    result["run"] = _run_summary(traj)
    result["status"] = result["run"]["status"]
    d = _direction(traj, opts)
    result["direction"] = d.to_dict() if d is not None else None
    checks = {}
    if traj.conclusive:
        rows = _alignment(cfg.spec, traj, cfg)
        trend = _trend(rows)
        result["alignment"] = {"horizons": rows, "trend": trend, "kkt": cfg.kkt.to_dict()}
        if opts["alignment_tol"] is not None and trend["complete"]:
            checks["alignment_final"] = _check(trend["final"], float(opts["alignment_tol"]))
            checks["alignment_non_increasing"] = {"passed": trend["non_increasing"]}
    else:
        result["alignment"] = None
    result["checks"] = checks
    passed = all(c["passed"] for c in checks.values())
    result["passed"] = passed
    return result, EXIT_OK if passed else EXIT_VIOLATION


# -- compare ----------------------------------------------------------------------

def run_compare(cfg: ExperimentConfig) -> tuple[dict, int]:
    if not cfg.splits:
        raise ConfigError("splits: compare needs at least one split")
    out = _outdir(cfg)
    opts = cfg.options
    T = cfg.transform()
    theta0 = cfg.initial_params()
    result: dict = {}
    _warn_zero(theta0, result)
    try:
        run = fl.paired_integrate(cfg.spec, T, theta0, cfg.data, cfg.loss, cfg.flow, cfg.rule)
    except fl.FlowAbort as exc:
        fl.write_trajectory_csv(out / "source.csv", exc.trajectory)
        result.update(status="aborted", error=str(exc), run=_run_summary(exc.trajectory))
        return result, EXIT_ABORT
    src, tgt = run.source, run.target
    fl.write_trajectory_csv(out / "source.csv", src, run.deviation)
    fl.write_trajectory_csv(out / "target.csv", tgt, run.deviation)

    norm_gap = max(abs(a.norm - b.norm) / max(1.0, a.norm)
                   for a, b in zip(src.checkpoints, tgt.checkpoints))
    result["run"] = _run_summary(src)
    result["status"] = result["run"]["status"]
    result["splits"] = [s.to_dict() for s in cfg.splits]
    result["target_network"] = T.target.to_dict()
    checks = {
        "max_deviation": _check(run.max_deviation, float(opts["deviation_tol"])),
        "norm_equality": _check(norm_gap, 1e-10),
    }
    ds, dt = _direction(src, opts), _direction(tgt, opts)
    if ds is not None and dt is not None:
        lim = fl.check_limit_embedding(ds, dt, T, float(opts["limit_angle_tol"]))
        result["limit"] = lim.to_dict() | {"source_direction": ds.to_dict(),
                                          "target_direction": dt.to_dict()}
        checks["limit_embedding"] = {"passed": lim.passed,
                                     "limit_angle": lim.limit_angle,
                                     "hausdorff_angle": lim.hausdorff_angle}
    else:
        result["limit"] = None
    if src.conclusive:
        rows_s = _alignment(cfg.spec, src, cfg)
        rows_t = _alignment(T.target, tgt, cfg, steps=[r.get("step") for r in rows_s])
        deltas = []
        for a, b in zip(rows_s, rows_t):
            if "stationarity_residual" in a and "stationarity_residual" in b:
                deltas.append(max(abs(a[k] - b[k]) for k in
                                  ("stationarity_residual", "feasibility_violation",
                                   "complementarity_residual")))
        result["alignment"] = {"source": rows_s, "target": rows_t, "deltas": deltas}
        if deltas:
            checks["alignment_match"] = _check(max(deltas), float(opts["alignment_match_tol"]))
    else:
        result["alignment"] = None
    result["checks"] = checks
    passed = all(c["passed"] for c in checks.values())
    result["passed"] = passed
    return result, EXIT_OK if passed else EXIT_VIOLATION


# -- kkt / split ------------------------------------------------------------------

def run_kkt(cfg: ExperimentConfig, params: Path, split: Path | None) -> tuple[dict, int]:
    spec, theta = load_params(params)
    if cfg.given_network and spec != cfg.spec:
        raise LayoutError(f"parameter file network {spec.widths} does not match config {cfg.spec.widths}")
    if cfg.data.dim != spec.input_dim:
        raise LayoutError(f"dataset dimension {cfg.data.dim} does not match network input {spec.input_dim}")
    _outdir(cfg)
    if split is None:
        rep = kkt_residual(spec, theta, cfg.data, cfg.kkt)
        result = {"network": spec.to_dict(), "report": rep.to_dict()}
        ok = rep.epsilon_kkt
    else:
        splits = load_splits(split)
        T = build_splits(spec, splits)
        rep = check_embedding(spec, T, theta, cfg.data, cfg.kkt)
        result = {"network": spec.to_dict(), "target_network": T.target.to_dict(),
                  "splits": [s.to_dict() for s in splits], "embedding": rep.to_dict()}
        ok = rep.source.epsilon_kkt and rep.preserved
    result["passed"] = bool(ok)
    return result, EXIT_OK if ok else EXIT_VIOLATION


def run_split(cfg: ExperimentConfig, params: Path, split: Path) -> tuple[dict, int]:
    spec, theta = load_params(params)
    splits = load_splits(split)
    T = build_splits(spec, splits)
    eta = apply(T, theta)
    out = _outdir(cfg)
    dest = out / "params_split.json"
    save_params(dest, T.target, eta)
    nrm = float(np.linalg.norm(theta))
    result = {
        "source_network": spec.to_dict(),
        "target_network": T.target.to_dict(),
        "splits": [s.to_dict() for s in splits],
        "params": str(dest),
        "norm_source": nrm,
        "norm_target": float(np.linalg.norm(eta)),
    }
    return result, EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kktembed", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("verify", "run property suites for the configured network and splits"),
        ("flow", "integrate gradient flow and check limit-direction alignment"),
        ("compare", "paired source/target runs through the configured splits"),
        ("kkt", "KKT report for a parameter file"),
        ("split", "apply a split file to a parameter file"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", type=Path, help="experiment config (JSON)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="output directory")
        if name in ("kkt", "split"):
            sp.add_argument("--params", type=Path, required=True, help="parameter file (JSON)")
            sp.add_argument("--split", type=Path, required=name == "split",
                            help="split file (JSON)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load(args.config, seed=args.seed, out=args.out)
        if args.command == "verify":
            result, code = run_verify(cfg)
        elif args.command == "flow":
            result, code = run_flow(cfg)
        elif args.command == "compare":
            result, code = run_compare(cfg)
        elif args.command == "kkt":
            result, code = run_kkt(cfg, args.params, args.split)
        else:
            result, code = run_split(cfg, args.params, args.split)
    except (ConfigError, LayoutError, SplitError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = _envelope(cfg, args.command, result)
    path = _outdir(cfg) / f"{args.command}.json"
    _write_json(path, report)
    status = result.get("status", "passed" if result.get("passed", True) else "failed")
    print(f"{args.command}: {status} (exit {code}) -> {path}")
    return code


if __name__ == "__main__":
    sys.exit(main())
