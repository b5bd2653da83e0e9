"""Compare the compiled and pure-numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints one line per kernel and shape with the median time of each backend
and the speedup. Shapes match a default training step (N=256, S=4, D_S=8).
"""

import argparse
import statistics
import time

import numpy as np

from musicssl import kernels


def timeit(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def cases(n, s, ds):
    rng = np.random.default_rng(0)
    d = s * ds
    logits = rng.standard_normal((n, s, ds))
    y = kernels.softmax_lastaxis(logits, kernels.get_backend("python"))
    g = rng.standard_normal(y.shape)
    joint = rng.random((d, d))
    joint /= joint.sum()
    mask = np.kron(np.ones((s, s)), np.ones((ds, ds))) - np.kron(np.eye(s), np.ones((ds, ds)))
    mask = (mask + np.eye(d)).astype(bool)
    return {
        f"softmax {logits.shape}": lambda be: kernels.softmax_lastaxis(logits, be),
        f"softmax_grad {y.shape}": lambda be: kernels.softmax_lastaxis_grad(y, g, be),
        f"masked_xlogx {joint.shape}": lambda be: kernels.masked_xlogx_sum(joint, mask, 1e-12, be),
        f"masked_xlogx_grad {joint.shape}": lambda be: kernels.masked_xlogx_grad(joint, mask, 1e-12, 1.0, be),
        f"clamped_log {y.shape}": lambda be: kernels.clamped_log(y, 1e-12, be),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    parser.add_argument("--n", type=int, default=256)
    parser.add_argument("--segments", type=int, default=4)
    parser.add_argument("--segment-dim", type=int, default=8)
    args = parser.parse_args()
    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled backend not built; only the python backend is available")
    backends = {name: kernels.get_backend(name) for name in names}
    print(f"{'kernel':<32}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases(args.n, args.segments, args.segment_dim).items():
        t = {name: timeit(lambda: fn(be), args.repeat) for name, be in backends.items()}
        row = f"{label:<32}" + "".join(f"{t[name] * 1e6:>10.1f}us" for name in backends)
        if "cython" in t:
            row += f"{t['python'] / t['cython']:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
