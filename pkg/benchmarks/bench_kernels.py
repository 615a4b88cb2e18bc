"""Time the numba and numpy paths of every kernel on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from rayflow import _kernels

CASES = {
    "svgd_phi": lambda r: (r.normal(size=256), r.normal(size=256), 0.5),
    "kde_score": lambda r: (r.normal(size=32), np.abs(r.normal(size=32)), 0.5, r.normal(size=256)),
    "responsibilities": lambda r: (r.normal(size=(512, 2)), r.normal(size=(512, 2)),
                                   np.full(512, 0.1), np.zeros(512)),
    "rbf_mean": lambda r: (r.normal(size=(512, 2)), r.normal(size=(512, 2)), 0.7),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not _kernels._HAVE_NUMBA:
        raise SystemExit("numba is not importable")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, make in CASES.items():
        inputs = make(rng)
        fast = getattr(_kernels, name + "_numba")
        slow = getattr(_kernels, name + "_numpy")
        fast(*inputs)  # compile
        np.testing.assert_allclose(fast(*inputs), slow(*inputs), rtol=1e-9, atol=1e-12)
        t_np = min(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
