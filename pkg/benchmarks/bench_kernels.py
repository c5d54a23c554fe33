"""Time each accelerated kernel against its pure numpy/Python reference.

    python3 benchmarks/bench_kernels.py [--repeat N]

With ``ICSRANGE_NUMBA=0`` both columns time the fallback.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from icsrange import _accel


def cases(rng: np.random.Generator) -> dict[str, tuple]:
    flows = rng.normal(0.0, 1e-3, 100_000)
    levels = rng.uniform(0.0, 1.0, 8)
    return {
        "integrate_levels": (0.5, flows, 0.1, 1.5, 2.0),
        "step_levels": (levels, rng.normal(0.0, 1e-3, 8), 0.1, np.full(8, 1.5), np.full(8, 2.0)),
        "sustained_run": (rng.random(100_000) < 0.95, 200),
        "xor_repeat": (rng.integers(0, 256, 1 << 20, dtype=np.uint8),
                       np.frombuffer(b"k3y!", dtype=np.uint8)),
        "printable_counts": (rng.integers(0, 256, 4096, dtype=np.uint8),),
    }


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    print(f"backend: {_accel.BACKEND}")
    print(f"{'kernel':<18}{'active ms':>12}{'reference ms':>14}{'speedup':>10}")
    for name, call_args in cases(np.random.default_rng(0)).items():
        fast, ref = getattr(_accel, name), _accel.PURE[name]
        fast(*call_args)  # compile outside the timed region
        t_fast = min(timeit.repeat(lambda: fast(*call_args), number=1, repeat=args.repeat))
        t_ref = min(timeit.repeat(lambda: ref(*call_args), number=1, repeat=args.repeat))
        print(f"{name:<18}{t_fast * 1e3:>12.3f}{t_ref * 1e3:>14.3f}{t_ref / t_fast:>10.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
