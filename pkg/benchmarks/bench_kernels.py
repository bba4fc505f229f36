"""Time the NumPy and Cython kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]

Each row reports the best-of-R wall time per backend, the speedup and
whether the two results are bit-identical.
"""
import argparse
import timeit

import numpy as np

from homconc import kernels


def cases(n3):
    rng = np.random.default_rng(0)
    n = n3 ** 3
    P = rng.normal(size=(n, 3, 3))
    xi = np.array([1.0, 0.3, -0.2])
    labels = (rng.random(n) < 0.4).astype(np.uint8)
    x = rng.normal(size=n)
    e = rng.normal(size=(3, n))
    centers = np.array([[0.5, 0.5, 0.5], [0.1, 0.2, 0.3]])
    radii = np.array([0.3, 0.1])
    return {
        "pairwise_sum": lambda k: k.pairwise_sum(x),
        "image_norms": lambda k: k.image_norms(P, xi),
        "moment_sum (phase 1, p=4.5)": lambda k: k.moment_sum(P, xi, 4.5, labels, 1),
        "voxel_matvec": lambda k: k.voxel_matvec(P, e),
        "rasterize_balls": lambda k: k.rasterize_balls(n3, centers, radii, 2.0, 0.75),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64, help="voxels per axis (default 64, i.e. 64^3)")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    mods = {b: kernels.get_backend(b) for b in backends}
    print(f"{args.size}^3 voxels, best of {args.repeat}; backends: {', '.join(backends)}")
    print(f"{'kernel':30s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup  identical")
    for name, fn in cases(args.size).items():
        times = {b: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat)) for b, m in mods.items()}
        row = f"{name:30s} " + " ".join(f"{times[b] * 1e3:8.2f}ms" for b in backends)
        if "cython" in mods:
            ident = same(fn(mods["numpy"]), fn(mods["cython"]))
            row += f"   {times['numpy'] / times['cython']:6.2f}x  {ident}"
        print(row)


if __name__ == "__main__":
    main()
