"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line; the lines are
collected again in the terminal summary.
"""
import filecmp
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

import conftest
from kktembed import cli, flow, sampling
from kktembed.data import Dataset
from kktembed.kkt import KKTConfig, check_embedding, kkt_residual
from kktembed.net import KinkRule, NetworkSpec, backprop, euler_check
from kktembed.oracle import dense_map_check, linear_svm_solver, single_neuron_solution
from kktembed.transform import SplitSpec, apply, build_split, build_splits, identity, verify_embedding

INV_SQRT2 = 1.0 / np.sqrt(2.0)
FIXTURE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "fixture.json"

pytestmark = pytest.mark.acceptance

# (network, split) fixtures for the sampled criteria
FIXTURES = [
    (NetworkSpec((2, 4, 1)), SplitSpec(1, 0, (INV_SQRT2, INV_SQRT2))),
    (NetworkSpec((3, 8, 6, 1), ("leaky-relu:0.1", "relu")), SplitSpec(2, 3, (0.6, 0.8))),
    (NetworkSpec((4, 5, 5, 5, 1)), SplitSpec(1, 2, (0.5, 0.5, INV_SQRT2))),
]


def _report(n, passed, detail, elapsed=None):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}"
    if elapsed is not None:
        line += f" [{elapsed:.2f} s]"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def test_criterion_1_isometry():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_norm = worst_gram = 0.0
    for _ in range(200):
        spec = sampling.random_network(rng, depth=(2, 4), max_width=16)
        T = build_split(spec, sampling.random_split(rng, spec, max_m=4))
        theta = sampling.random_params(rng, spec)
        nrm = np.linalg.norm(theta)
        worst_norm = max(worst_norm, abs(np.linalg.norm(apply(T, theta)) - nrm) / nrm)
        worst_gram = max(worst_gram, dense_map_check(T, vectors=1).max_gram_error)
    dt = time.perf_counter() - t0
    ok = worst_norm <= 1e-12 and worst_gram <= 1e-12 and dt < 10
    _report(1, ok, f"200 pairs, norm error {worst_norm:.2e} <= 1e-12, "
                   f"max |T^T T - I| {worst_gram:.2e} <= 1e-12", dt)


def test_criterion_2_output_and_subgradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    worst_out = worst_sub = 0.0
    kinks = 0
    for spec, s in FIXTURES:
        T = build_split(spec, s)
        for rule in (KinkRule(0.0), KinkRule(0.5)):
            samples = [(sampling.random_params(rng, spec), rng.normal(size=spec.input_dim))
                       for _ in range(450)]
            samples += sampling.kink_samples(rng, spec, s, 50)
            kinks += sum(abs(sampling.split_preactivation(spec, th, x, s)) <= 1e-9
                         for th, x in samples[450:])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for th, x in samples:
                    rep = verify_embedding(T, [th], [x], rule)
                    worst_out = max(worst_out, rep.max_output_error)
                    worst_sub = max(worst_sub, rep.max_subgradient_error)
    dt = time.perf_counter() - t0
    n_fix = 2 * len(FIXTURES)
    ok = worst_out <= 1e-10 and worst_sub <= 1e-10 and kinks == 50 * n_fix and dt < 30
    _report(2, ok, f"{n_fix} x 500 samples ({kinks} within 1e-9 of a kink), "
                   f"output {worst_out:.2e}, subgradient {worst_sub:.2e} <= 1e-10", dt)


def test_criterion_3_euler_identity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    worst = 0.0
    count = 0
    while count < 1000:
        for spec, s in FIXTURES:
            T = build_split(spec, s)
            theta = sampling.random_params(rng, spec)
            x = rng.normal(size=spec.input_dim)
            for net, th in ((spec, theta), (T.target, apply(T, theta))):
                phi = backprop(net, th, x).output
                worst = max(worst, euler_check(net, th, x) / (1.0 + abs(phi)))
                count += 1
    dt = time.perf_counter() - t0
    _report(3, worst <= 1e-10 and dt < 10,
            f"{count} samples, max |<g,theta> - L Phi|/(1+|Phi|) {worst:.2e} <= 1e-10", dt)


def _separable(rng, n, d):
    w = rng.normal(size=d)
    X = rng.normal(size=(n, d))
    y = np.sign(X @ w)
    y[y == 0] = 1.0
    X += 0.3 * y[:, None] * w / np.linalg.norm(w)
    return Dataset(X, y)


def test_criterion_4_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(104)
    worst_svm = 0.0
    for _ in range(20):
        D = _separable(rng, int(rng.integers(1, 9)), int(rng.integers(1, 4)))
        sol = linear_svm_solver(D)
        rep = kkt_residual(sol.spec, sol.params, D)
        worst_svm = max(worst_svm, rep.stationarity_residual, rep.feasibility_violation,
                        rep.complementarity_residual)
    worst_neuron = 0.0
    for x in ([1.0, 0.0], [2.0, 0.0], [3.0, -4.0], [0.5, 0.5, 0.5]):
        for y in (1.0, -1.0):
            sol = single_neuron_solution(x, y)
            rep = kkt_residual(sol.spec, sol.params, Dataset.from_pairs([(tuple(x), y)]))
            worst_neuron = max(worst_neuron, rep.stationarity_residual,
                               rep.feasibility_violation, rep.complementarity_residual)
    dt = time.perf_counter() - t0
    ok = worst_svm <= 1e-8 and worst_neuron <= 1e-9 and dt < 20
    _report(4, ok, f"20 SVM datasets max residual {worst_svm:.2e} <= 1e-8, "
                   f"single neuron {worst_neuron:.2e} <= 1e-9", dt)


def test_criterion_5_static_embedding():
    details, ok = [], True
    cases = [
        ("single", [1.0, 0.0], [SplitSpec(1, 0, (INV_SQRT2, INV_SQRT2))]),
        ("double", [2.0, 0.0], [SplitSpec(1, 0, (INV_SQRT2, INV_SQRT2)), SplitSpec(1, 1, (0.6, 0.8))]),
    ]
    for name, x, splits in cases:
        sol = single_neuron_solution(x)
        D = Dataset.from_pairs([(tuple(x), 1.0)])
        T = build_splits(sol.spec, splits)
        rep = check_embedding(sol.spec, T, sol.params, D)
        r = rep.recertified
        worst = max(r.stationarity_residual, r.feasibility_violation, r.complementarity_residual)
        ok &= bool(rep.preserved and rep.max_multiplier_difference <= 1e-12 and worst <= 1e-9)
        details.append(f"{name}: multiplier diff {rep.max_multiplier_difference:.1e}, residual {worst:.2e}")
    _report(5, ok, "; ".join(details) + " (multipliers <= 1e-12, residuals <= 1e-9)")


@pytest.fixture(scope="module")
def run_10x(two_layer, half_split, theta0, blobs):
    t0 = time.perf_counter()
    run = flow.paired_integrate(two_layer, half_split, theta0, blobs, flow.LossSpec(),
                                flow.FlowConfig(norm_growth=10.0))
    return run, time.perf_counter() - t0


def test_criterion_6_trajectory(run_10x, two_layer, theta0, blobs):
    run, dt = run_10x
    t0 = time.perf_counter()
    ctrl = flow.paired_integrate(two_layer, identity(two_layer), theta0, blobs,
                                 cfg=flow.FlowConfig(norm_growth=10.0))
    dt += time.perf_counter() - t0
    ok = (run.source.stop_reason == "norm_growth" and run.max_deviation <= 1e-6
          and ctrl.max_deviation == 0.0 and dt < 120)
    _report(6, ok, f"{run.source.checkpoints[-1].step} RK4 steps to 10x growth, "
                   f"max deviation {run.max_deviation:.2e} <= 1e-6, "
                   f"identity control {ctrl.max_deviation:.1e}", dt)


def test_criterion_7_limit_direction(run_10x, half_split):
    run, _ = run_10x
    a = flow.direction_limit(run.source, window=10)
    b = flow.direction_limit(run.target, window=10)
    rep = flow.check_limit_embedding(a, b, half_split, angle_tol=1e-6)
    ok = rep.passed and rep.limit_angle <= 1e-6 and rep.hausdorff_angle <= 1e-6
    _report(7, ok, f"limit angle {rep.limit_angle:.2e}, tail Hausdorff angle "
                   f"{rep.hausdorff_angle:.2e} <= 1e-6")


def test_criterion_8_alignment_trend(two_layer, half_split, theta0, blobs):
    t0 = time.perf_counter()
    paired_run = flow.paired_integrate(two_layer, half_split, theta0, blobs, flow.LossSpec(),
                                       flow.FlowConfig(norm_growth=30.0))
    cfg = KKTConfig(active_margin=1e-2)
    src_res, gaps = [], []
    for g in (3.0, 10.0, 30.0):
        sub = paired_run.source.truncate_at_growth(g)
        step = sub.checkpoints[-1].step
        a = flow.kkt_alignment(two_layer, sub, blobs, cfg)
        b = flow.kkt_alignment(half_split.target, paired_run.target.prefix(step), blobs, cfg)
        src_res.append(a.stationarity_residual)
        gaps.append(max(abs(a.stationarity_residual - b.stationarity_residual),
                        abs(a.feasibility_violation - b.feasibility_violation),
                        abs(a.complementarity_residual - b.complementarity_residual)))
    dt = time.perf_counter() - t0
    ok = (all(y <= x for x, y in zip(src_res, src_res[1:])) and src_res[-1] <= 1e-2
          and max(gaps) <= 1e-8 and dt < 300)
    vals = ", ".join(f"{v:.2e}" for v in src_res)
    _report(8, ok, f"stationarity at 3x/10x/30x: {vals} (final <= 1e-2, active margin 1e-2), "
                   f"source/target gap {max(gaps):.1e} <= 1e-8", dt)


def test_criterion_9_reproducible_csv(tmp_path):
    config = str(FIXTURE_CONFIG)
    t0 = time.perf_counter()
    codes = [cli.main(["compare", "--config", config, "--out", str(tmp_path / d)]) for d in ("a", "b")]
    dt = time.perf_counter() - t0
    same = [filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)
            for f in ("source.csv", "target.csv")]
    ok = codes == [0, 0] and all(same)
    _report(9, ok, f"compare run twice, source.csv and target.csv byte-identical: {same}", dt)

