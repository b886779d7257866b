"""Time the pixel kernels on every available backend.

    python benchmarks/bench_kernels.py [--size 256] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from burstdiff import kernels
from burstdiff.burst import transform_matrix


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    img = rng.random((args.size, args.size, 3))
    mat = transform_matrix(5.3, -7.1, 0.8, args.size, args.size)
    planes = rng.random((4, args.size // 2, args.size // 2))
    cases = {
        "warp_affine": lambda b: kernels.warp_affine(img, mat, backend=b),
        "demosaic_bilinear": lambda b: kernels.demosaic_bilinear(planes, backend=b),
    }
    print(f"default backend: {kernels.BACKEND}; image {args.size}x{args.size}")
    for name, fn in cases.items():
        times = {}
        for backend in kernels.available_backends():
            fn(backend)
            times[backend] = min(timeit.repeat(lambda: fn(backend), number=1, repeat=args.repeat))
        row = "  ".join(f"{b}={t * 1e3:8.2f} ms" for b, t in times.items())
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:18s} {row}  speedup x{speedup:.1f}")


if __name__ == "__main__":
    main()
