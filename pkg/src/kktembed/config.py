"""Experiment configuration files.

A config is a JSON object; every section is optional and falls back to
:data:`DEFAULTS`, which is the two-layer blob fixture used by the test suite::

    {
      "seed": 0,
      "network": {"widths": [2, 4, 1], "activations": ["relu"]},
      "dataset": {"generator": "gaussian-blobs", "n": 20, "dim": 2,
                  "separation": 1.0, "gap": 0.2},
      "init": {"scale": 0.5},
      "splits": [{"layer": 1, "neuron": 0, "coeffs": [0.7071067811865476, 0.7071067811865476]}],
      "kink_rule": {"slope_at_zero": 0.0},
      "loss": "exponential",
      "flow": {"integrator": "rk4", "norm_growth": 30, ...},
      "kkt": {"active_margin": 0.01, ...},
      "out": "runs/fixture"
    }

``dataset`` is either ``{"file": "data.csv"}`` (relative to the config
file), a generator (``gaussian-blobs`` or ``xor``) or inline
``{"X": [[...]], "y": [...]}``. The generator seed defaults to the top-level
seed. A config that sets ``network`` but not ``splits`` gets no splits.
``init`` is ``{"scale": s}`` (Gaussian, seeded), ``{"zero": true}`` or
``{"file": "params.json"}``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from kktembed.data import Dataset, gaussian_blobs, load_csv, xor
from kktembed.flow import FlowConfig, LossSpec
from kktembed.kkt import KKTConfig
from kktembed.net import KinkRule, NetworkSpec, load_params
from kktembed.transform import SplitSpec, SplitTransform, build_splits, splits_from_dict

INV_SQRT2 = 1.0 / math.sqrt(2.0)

DEFAULTS: dict = {
    "seed": 0,
    "network": {"widths": [2, 4, 1], "activations": ["relu"]},
    "dataset": {"generator": "gaussian-blobs", "n": 20, "dim": 2, "separation": 1.0, "gap": 0.2},
    "init": {"scale": 0.5},
    "splits": [{"layer": 1, "neuron": 0, "coeffs": [INV_SQRT2, INV_SQRT2]}],
    "kink_rule": {"slope_at_zero": 0.0},
    "loss": "exponential",
    "flow": {
        "integrator": "rk4",
        "step_policy": "loss-scaled",
        "base_step": 0.1,
        "c_step": 0.1,
        "h_max": None,
        "norm_growth": 30.0,
        "max_steps": 100000,
        "loss_floor": 0.0,
        "t_max": None,
        "checkpoint_stride": 1,
        "max_rejections": 30,
        "window": 10,
        "angle_tol": 1e-2,
        "horizons": [3.0, 10.0, 30.0],
        "alignment_tol": None,
        "deviation_tol": 1e-6,
        "limit_angle_tol": 1e-6,
        "alignment_match_tol": 1e-8,
        "snapshot_stride": 100,
    },
    "kkt": {
        "active_margin": 1e-2,
        "stationarity_tol": 1e-8,
        "feasibility_tol": 1e-8,
        "complementarity_tol": 1e-8,
    },
    "verify": {"thetas": 20, "inputs": 25, "kink_samples": 50, "random_pairs": 20,
               "euler_samples": 200, "fd_samples": 20, "tol": 1e-10, "isometry_tol": 1e-12},
    "out": "runs",
}

_FLOW_FIELDS = {f.name for f in fields(FlowConfig)}
_FLOW_EXTRA = {"window", "angle_tol", "horizons", "alignment_tol", "deviation_tol",
               "limit_angle_tol", "alignment_match_tol", "snapshot_stride"}


class ConfigError(ValueError):
    """Invalid config; the message names the offending field."""


def _merge(base: dict, over: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown field {where!r}")
        if isinstance(base[key], dict) and key not in ("dataset", "init"):
            if not isinstance(val, dict):
                raise ConfigError(f"field {where!r} must be an object")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return raw


@dataclass
class ExperimentConfig:
    raw: dict  # fully merged settings
    base_dir: Path
    spec: NetworkSpec
    data: Dataset
    splits: list[SplitSpec]
    rule: KinkRule
    loss: LossSpec
    flow: FlowConfig
    kkt: KKTConfig
    given_network: bool = False

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def options(self) -> dict:
        """Flow-stage settings that are not integrator parameters."""
        return {k: self.raw["flow"][k] for k in _FLOW_EXTRA}

    @property
    def verify(self) -> dict:
        return self.raw["verify"]

    @property
    def out(self) -> Path:
        p = Path(self.raw["out"])
        return p if p.is_absolute() else Path.cwd() / p

    def transform(self) -> SplitTransform:
        return build_splits(self.spec, self.splits)

    def initial_params(self) -> np.ndarray:
        init = self.raw["init"]
        if init.get("zero"):
            return np.zeros(self.spec.num_params)
        if "file" in init:
            spec, theta = load_params(self.base_dir / init["file"])
            if spec != self.spec:
                raise ConfigError(f"init.file: network {spec.widths} does not match {self.spec.widths}")
            return theta
        rng = np.random.default_rng(self.seed)
        return float(init.get("scale", 0.5)) * rng.normal(size=self.spec.num_params)

    def hash(self) -> str:
        """SHA-256 of the canonical settings, excluding the output directory."""
        body = {k: v for k, v in self.raw.items() if k != "out"}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _dataset(d: dict, seed: int, base_dir: Path) -> Dataset:
    if "file" in d:
        path = base_dir / d["file"]
        if not path.exists():
            raise ConfigError(f"dataset.file: {path} does not exist")
        return load_csv(path)
    if "X" in d:
        return Dataset(np.array(d["X"], dtype=np.float64), np.array(d["y"], dtype=np.float64))
    gen = d.get("generator")
    if gen == "gaussian-blobs":
        allowed = {"generator", "n", "dim", "separation", "gap", "seed"}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown field 'dataset.{sorted(extra)[0]}'")
        return gaussian_blobs(int(d.get("n", 20)), int(d.get("dim", 2)),
                              float(d.get("separation", 1.0)), float(d.get("gap", 0.2)),
                              int(d.get("seed", seed)))
    if gen == "xor":
        return xor(float(d.get("scale", 1.0)))
    raise ConfigError(f"dataset: expected 'file', 'X'/'y' or a generator, got {d!r}")


def _section(name, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def build(raw: dict, base_dir=".", seed: int | None = None, out=None) -> ExperimentConfig:
    merged = _merge(DEFAULTS, raw, "")
    if "network" in raw and "splits" not in raw:
        # the default split only fits the default network
        merged["splits"] = []
    if seed is not None:
        merged["seed"] = int(seed)
    if out is not None:
        merged["out"] = str(out)
    base_dir = Path(base_dir)
    seed_ = _section("seed", lambda: int(merged["seed"]))
    spec = _section("network", lambda: NetworkSpec(tuple(merged["network"]["widths"]),
                                                   tuple(merged["network"]["activations"] or ()) or None))
    data = _section("dataset", lambda: _dataset(merged["dataset"], seed_, base_dir))
    if data.dim != spec.input_dim:
        raise ConfigError(f"dataset: dimension {data.dim} does not match network input {spec.input_dim}")
    splits = _section("splits", lambda: splits_from_dict(merged["splits"]))
    _section("splits", lambda: build_splits(spec, splits))
    rule = _section("kink_rule", lambda: KinkRule(float(merged["kink_rule"]["slope_at_zero"])))
    loss = _section("loss", lambda: LossSpec(merged["loss"]))

    def flow_cfg():
        kw = {k: v for k, v in merged["flow"].items() if k in _FLOW_FIELDS and v is not None}
        return FlowConfig(**kw)

    flow = _section("flow", flow_cfg)
    opts = merged["flow"]
    if not all(h > 0 for h in opts["horizons"]):
        raise ConfigError("flow.horizons: growth factors must be positive")
    if int(opts["window"]) < 1:
        raise ConfigError("flow.window: must be positive")
    kkt = _section("kkt", lambda: KKTConfig(rule=rule, **merged["kkt"]))
    return ExperimentConfig(merged, base_dir, spec, data, splits, rule, loss, flow, kkt,
                            "network" in raw)


def load(path=None, seed: int | None = None, out=None) -> ExperimentConfig:
    if path is None:
        return build({}, ".", seed, out)
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return build(parse_text(text, str(path)), path.parent, seed, out)
