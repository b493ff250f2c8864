"""Time the compiled kernels against the numpy fallback.

Run ``python benchmarks/bench_kernels.py``. Both backends are imported
directly, so the environment switch does not matter here. Each case also
checks that the two backends agree.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from twinpurify import _kernels_py

try:
    from twinpurify import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def _cases(rng):
    n, p = 2000, 40
    X = rng.standard_normal((n, p))
    time = rng.exponential(10.0, n).round(1) + 0.1
    event = rng.random(n) < 0.7
    beta = rng.standard_normal(p) * 0.1
    scores = rng.standard_normal(n)
    G, k, top = 2000, 4, 400
    members = np.concatenate([rng.choice(G, top, replace=False) for _ in range(k)])
    offsets = np.arange(k + 1) * top
    grid = np.unique(time)
    shapes = [(2000, 512), (512,), (512, 128), (128,), (128, 4)]
    adam = [tuple(rng.standard_normal(s) for _ in range(3)) + (np.abs(rng.standard_normal(s)),) for s in shapes]

    def adam_all(mod):
        for p_, g, m, v in adam:
            mod.adam_update(p_.copy(), g, m.copy(), v.copy(), 1e-3, 0.9, 0.999, 0.1, 0.001, 1e-8)

    return {
        "cox_breslow (n=2000, p=40)": lambda mod: mod.cox_breslow(X, time, event, beta, True),
        "concordance_counts (n=2000)": lambda mod: mod.concordance_counts(time, event, scores),
        "unique_fractions (4 x 400 of 2000)": lambda mod: mod.unique_fractions(members, offsets, G),
        "risk_table (n=2000)": lambda mod: mod.risk_table(time, event, grid),
        "adam_update (default encoder)": adam_all,
    }


def _same(a, b) -> bool:
    if a is None or b is None:
        return a is b
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, float), np.asarray(b, float), rtol=1e-10, atol=1e-10)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    cases = _cases(np.random.default_rng(0))
    backends = [("python", _kernels_py)] + ([("cython", _kernels_c)] if _kernels_c else [])
    print(f"{'kernel':38s} " + " ".join(f"{b:>12s}" for b, _ in backends) + ("   speedup  agree" if _kernels_c else ""))
    for name, fn in cases.items():
        times = []
        for _, mod in backends:
            number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            times.append(best)
        line = f"{name:38s} " + " ".join(f"{t * 1e3:10.3f}ms" for t in times)
        if _kernels_c:
            agree = _same(fn(_kernels_py), fn(_kernels_c))
            line += f"  {times[0] / times[1]:7.1f}x  {'yes' if agree else 'NO'}"
        print(line)
    if not _kernels_c:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
