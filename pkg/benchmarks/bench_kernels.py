"""Compare the compiled and numpy kernel backends.

Times batched forward/backward at several sizes and one short flow run on
the two-layer blob fixture, for each available backend. Also checks that
both backends return the same numbers.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import platform
import time

import numpy as np

from kktembed import _backend, flow
from kktembed.data import gaussian_blobs
from kktembed.net import KinkRule, NetworkSpec, batch_gradients

CASES = [
    ("tiny   [2,4,1] n=20", (2, 4, 1), 20),
    ("small  [4,16,16,1] n=200", (4, 16, 16, 1), 200),
    ("medium [8,64,64,1] n=1000", (8, 64, 64, 1), 1000),
]


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(backend, repeat):
    _backend.use(backend)
    rows, outputs = [], []
    rng = np.random.default_rng(0)
    for label, widths, n in CASES:
        spec = NetworkSpec(widths)
        theta = rng.normal(size=spec.num_params)
        X = rng.normal(size=(n, widths[0]))
        inner = max(1, 2000 // n)

        def run():
            for _ in range(inner):
                batch_gradients(spec, theta, X, KinkRule())

        rows.append((label, _best(run, repeat) / inner))
        outputs.append(batch_gradients(spec, theta, X, KinkRule()))
    return rows, outputs


def bench_flow(backend, steps):
    _backend.use(backend)
    data = gaussian_blobs(20, 2, seed=0)
    spec = NetworkSpec((2, 4, 1))
    theta0 = 0.5 * np.random.default_rng(0).normal(size=spec.num_params)
    cfg = flow.FlowConfig(max_steps=steps, norm_growth=1e9, checkpoint_stride=steps)
    t0 = time.perf_counter()
    traj = flow.integrate(spec, theta0, data, flow.LossSpec(), cfg)
    return time.perf_counter() - t0, traj.checkpoints[-1].theta


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--flow-steps", type=int, default=2000)
    p.add_argument("--json", help="write results to this file")
    args = p.parse_args(argv)

    backends = ["python"]
    try:
        _backend.use("cython")
        backends.insert(0, "cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")

    results = {"python": platform.python_version(), "numpy": np.__version__, "runs": {}}
    kern, flows = {}, {}
    for b in backends:
        rows, outs = bench_kernels(b, args.repeat)
        secs, theta = bench_flow(b, args.flow_steps)
        kern[b], flows[b] = (rows, outs), (secs, theta)
        results["runs"][b] = {
            "batch_gradients_s": {label: t for label, t in rows},
            f"flow_{args.flow_steps}_steps_s": secs,
        }

    print(f"{'case':30s}" + "".join(f"{b:>14s}" for b in backends)
          + ("     speedup" if len(backends) == 2 else ""))
    for i, (label, _, _) in enumerate(CASES):
        ts = [kern[b][0][i][1] for b in backends]
        line = f"{label:30s}" + "".join(f"{t * 1e3:12.3f}ms" for t in ts)
        if len(ts) == 2:
            line += f"{ts[1] / ts[0]:11.1f}x"
        print(line)
    ts = [flows[b][0] for b in backends]
    line = f"{'flow ' + str(args.flow_steps) + ' RK4 steps':30s}" + "".join(f"{t:13.3f}s" for t in ts)
    if len(ts) == 2:
        line += f"{ts[1] / ts[0]:11.1f}x"
    print(line)

    if len(backends) == 2:
        diff = 0.0
        for (oa, ob) in zip(kern["cython"][1], kern["python"][1]):
            diff = max(diff, float(np.max(np.abs(oa[0] - ob[0]))), float(np.max(np.abs(oa[1] - ob[1]))))
        tdiff = float(np.max(np.abs(flows["cython"][1] - flows["python"][1])))
        print(f"max |cython - python|: kernels {diff:.2e}, flow endpoint {tdiff:.2e}")
        results["max_kernel_difference"] = diff
        results["max_flow_difference"] = tdiff
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(results, fh, indent=2)
            fh.write("\n")


if __name__ == "__main__":
    main()
