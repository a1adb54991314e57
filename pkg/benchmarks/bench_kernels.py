"""Time the compiled dense kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

For each workload the forward pass and the input VJP are timed with both
backends on identical inputs; outputs are checked to agree before timing.
"""

import argparse
import timeit

import numpy as np

from xsecbench import kernels
from xsecbench.netcore import init_model

# (label, layer sizes, batch rows); the first two mirror single-sample attribution
# calls, the rest the batched IG / KernelSHAP / training shapes
WORKLOADS = [
    ("single 20-32-2", [20, 32, 2], 1),
    ("single 64-64-10", [64, 64, 10], 1),
    ("ig 20-32-2", [20, 32, 2], 50),
    ("shap 64-64-10", [64, 64, 10], 1000),
    ("deep 128-256-256-10", [128, 256, 256, 10], 512),
]


def _time(fn, repeats):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeats)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)
    if kernels._native is None:
        raise SystemExit("compiled extension not available (built? XSECBENCH_PURE set?)")
    pure, native = kernels._pure, kernels._native

    print(f"{'workload':<22}{'kernel':<9}{'pure us':>12}{'native us':>12}{'speedup':>10}")
    for label, sizes, rows in WORKLOADS:
        model = init_model(sizes, "tanh", "softmax", 0)
        w, b, acts = model._packed
        x = np.random.default_rng(0).normal(size=(rows, sizes[0]))
        cot = np.random.default_rng(1).normal(size=(rows, sizes[-1]))
        np.testing.assert_allclose(native.forward_batch(w, b, acts, x, True),
                                   pure.forward_batch(w, b, acts, x, True), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(native.vjp_batch(w, b, acts, x, cot, False)[1],
                                   pure.vjp_batch(w, b, acts, x, cot, False)[1], rtol=1e-10, atol=1e-12)
        for kernel, call in (
            ("forward", lambda k: k.forward_batch(w, b, acts, x, True)),
            ("vjp", lambda k: k.vjp_batch(w, b, acts, x, cot, False)),
        ):
            tp = _time(lambda: call(pure), args.repeats)
            tn = _time(lambda: call(native), args.repeats)
            print(f"{label:<22}{kernel:<9}{tp * 1e6:>12.1f}{tn * 1e6:>12.1f}{tp / tn:>9.2f}x")


if __name__ == "__main__":
    main()
