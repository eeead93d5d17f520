#!/usr/bin/env python3
"""Head-to-head timing of the compiled kernels vs the numpy fallback.

Runs each hot kernel (batch pose composition, rotation-vector conversion,
box-overlap masking) over a range of batch sizes and prints per-call times
plus the speedup. Also cross-checks that both backends agree on every batch
it times, so a benchmark run doubles as a parity smoke test.

Usage: python benchmarks/bench_kernels.py [--sizes 100,1000,10000] [--repeat 30]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lappdt.kernels import _numpy

try:
    from lappdt.kernels import _native
except ImportError:
    _native = None


def _time(fn, args, repeat: int) -> float:
    fn(*args)  # warm up / JIT caches out of the measurement
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def _random_poses(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.ascontiguousarray(rng.uniform(-1000.0, 1000.0, size=(n, 3)))
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    flip = q[:, 0] < 0
    q[flip] *= -1.0
    return t, np.ascontiguousarray(q)


def make_cases(rng: np.random.Generator, n: int) -> dict[str, tuple]:
    t1, q1 = _random_poses(rng, n)
    t2, q2 = _random_poses(rng, n)
    rv = np.ascontiguousarray(rng.normal(0.0, 0.8, size=(n, 3)))
    tb, qb = _random_poses(rng, 1)
    half_a = np.array([63.88, 42.74, 7.175])
    half_b = np.array([120.0, 80.0, 90.0])
    return {
        "compose_batch": (t1, q1, t2, q2),
        "rotvec_to_quat": (rv,),
        "obb_hit_mask": (t1 * 0.1, q1, half_a, tb[0], qb[0], half_b),
    }


def check_parity(name: str, args: tuple) -> float:
    """Worst absolute deviation between backends on this batch."""
    a = getattr(_numpy, name)(*args)
    b = getattr(_native, name)(*args)
    if not isinstance(a, tuple):
        a, b = (a,), (b,)
    worst = 0.0
    for x, y in zip(a, b):
        if x.dtype == bool:
            if not np.array_equal(x, y):
                raise AssertionError(f"{name}: boolean masks disagree")
        else:
            worst = max(worst, float(np.max(np.abs(x - y))))
    return worst


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100,1000,10000,100000",
                    help="comma-separated batch sizes")
    ap.add_argument("--repeat", type=int, default=30, help="timing repeats (best-of)")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    if _native is None:
        print("native backend not built; only timing the numpy fallback")

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)

    header = f"{'kernel':<16} {'n':>8} {'numpy':>12} {'native':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        cases = make_cases(rng, n)
        for name, call_args in cases.items():
            t_py = _time(getattr(_numpy, name), call_args, args.repeat)
            if _native is None:
                print(f"{name:<16} {n:>8} {t_py * 1e6:>10.1f}us {'-':>12} {'-':>8}")
                continue
            deviation = check_parity(name, call_args)
            if deviation > 1e-9:
                raise AssertionError(f"{name} parity off by {deviation:g}")
            t_c = _time(getattr(_native, name), call_args, args.repeat)
            print(
                f"{name:<16} {n:>8} {t_py * 1e6:>10.1f}us {t_c * 1e6:>10.1f}us "
                f"{t_py / t_c:>7.1f}x"
            )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
