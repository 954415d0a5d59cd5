"""Time the compiled and pure-numpy kernel backends on LeNet-sized workloads.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from dann import kernels


def workloads(rng):
    x = rng.normal(size=(128, 3, 28, 28))
    k = rng.normal(size=(32, 3, 5, 5))
    b = rng.normal(size=32)
    g = rng.normal(size=(128, 32, 24, 24))
    p = rng.normal(size=(128, 32, 24, 24))
    out, idx = kernels.python_backend.maxpool_forward(p, 2, 2, 2, 2)
    gp = rng.normal(size=out.shape)
    return {
        "conv2d forward": lambda m: m.conv2d_forward(x, k, b),
        "conv2d backward": lambda m: m.conv2d_backward(x, k, g),
        "maxpool forward": lambda m: m.maxpool_forward(p, 2, 2, 2, 2),
        "maxpool backward": lambda m: m.maxpool_backward(gp, idx, p.shape),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [kernels.python_backend]
    if kernels.compiled_backend is not None:
        backends.append(kernels.compiled_backend)
    else:
        print("compiled backend not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}" + "".join(f"{m.NAME:>12}" for m in backends) + ("   speedup" if len(backends) == 2 else ""))
    for name, fn in workloads(rng).items():
        times = [min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for m in backends]
        row = f"{name:<18}" + "".join(f"{t * 1e3:>10.1f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
