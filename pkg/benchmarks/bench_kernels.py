"""Time the numba and numpy variants of every hot kernel on realistic shapes.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Shapes default to one 3 s scene at the default STFT settings (4097 bins x 136
frames) and the 614-point MUSIC grid. The first numba call is timed separately
as compile/cache-load time.
"""
import argparse
import time

import numpy as np

from ivdoa import kernels
from ivdoa._accel import HAVE_NUMBA
from ivdoa.music import direction_grid, steering_vector


def _inputs(scale, rng):
    bins, frames = 4097, max(int(136 * scale), 1)
    spec = rng.standard_normal((4, bins, frames)) + 1j * rng.standard_normal((4, bins, frames))
    field = rng.standard_normal((bins, frames, 3))
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    herm = a @ a.conj().T
    g = direction_grid(10.0)
    steer = np.ascontiguousarray(np.stack([steering_vector(az, el) for az, el in zip(g.azimuth, g.elevation)]).real)
    return {
        "jacobi_eigh": (herm, 1e-12, 50),
        "intensity": (np.ascontiguousarray(spec),),
        "frame_sums": (field, rng.uniform(size=(bins, frames))),
        "angle_mask": (field, rng.uniform(-np.pi, np.pi, frames)),
        "music_denominators": (herm, steer),
        "majority_smooth": (rng.integers(0, 3, 100 * frames).astype(np.int64), 11),
    }


def _best(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplier on the frame count")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    inputs = _inputs(args.scale, np.random.default_rng(args.seed))
    print(f"numba available: {HAVE_NUMBA}")
    print(f"{'kernel':<20}{'first nb call':>15}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, (nb, npy) in kernels.IMPLEMENTATIONS.items():
        a = inputs[name]
        t0 = time.perf_counter()
        nb(*a)
        first = time.perf_counter() - t0
        t_nb = _best(nb, a, args.repeat)
        t_np = _best(npy, a, args.repeat)
        print(f"{name:<20}{first * 1e3:>13.1f}ms{t_nb * 1e3:>10.3f}ms{t_np * 1e3:>10.3f}ms{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
