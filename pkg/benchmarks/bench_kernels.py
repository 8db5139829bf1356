"""Time the numba and numpy kernel paths side by side.

    python benchmarks/bench_kernels.py [--size 64] [--repeat 200]

Both paths are called directly through ``kernels.IMPLS`` so one process can
compare them regardless of ``AUGSWEEP_DISABLE_NUMBA``. Outputs are checked
for bit equality before timing.
"""

import argparse
import time

import numpy as np

from augsweep import kernels


def _cases(size, rng):
    rgb = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    gray = rng.integers(0, 256, (size, size), dtype=np.uint8)
    th = np.deg2rad(30.0)
    c, s = np.cos(th), np.sin(th)
    inv = np.array([[c, -s, 0.5 * size * (1 - c) + 0.5 * size * s],
                    [s, c, 0.5 * size * (1 - c) - 0.5 * size * s]])
    hsv = rgb.astype(np.float64) / 255.0
    return {
        "warp_affine": (rgb, inv, 255.0),
        "clahe_plane": (gray, 8, 8, 2.0, 256),
        "clahe_rgb": (rgb, 8, 8, 2.0, 256),
        "rgb_to_hsv": (hsv,),
        "color_jitter": (rgb, 1.1, 0.9, 1.2, 0.05),
    }


def _time(fn, args, repeat):
    fn(*args)  # warm-up / JIT compile
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if kernels.numba is None:
        print("numba not importable; the 'numba' column runs the same loops in plain Python")
    cases = _cases(args.size, np.random.default_rng(args.seed))
    print(f"image {args.size}x{args.size}, {args.repeat} calls per kernel")
    print(f"{'kernel':<14}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, call_args in cases.items():
        fast = kernels.IMPLS["numba"][name]
        slow = kernels.IMPLS["numpy"][name]
        a, b = fast(*call_args), slow(*call_args)
        if not np.array_equal(a, b):
            raise SystemExit(f"{name}: backends disagree")
        t_fast = _time(fast, call_args, args.repeat)
        t_slow = _time(slow, call_args, args.repeat)
        print(f"{name:<14}{t_fast:>10.3f}{t_slow:>10.3f}{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
