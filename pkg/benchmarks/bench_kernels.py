"""Time the compiled and pure-Python kernels side by side.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from lps.kernels import available_backends


def _contrastive_inputs(n, rng):
    sim = rng.standard_normal((n, n)) * 2
    labels = rng.integers(0, 8, n)
    cand = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & cand
    return sim, pos, cand, np.ones(n, dtype=bool)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    backends = available_backends()
    cases = [("lsap", n, (rng.random((n, n)),)) for n in (8, 32, 128)]
    cases += [("contrastive", n, _contrastive_inputs(n, rng)) for n in (64, 256, 512)]

    print(f"{'kernel':12s} {'n':>5s} " + " ".join(f"{b + ' ms':>12s}" for b in backends) + "   speedup")
    for kernel, n, inputs in cases:
        times = {}
        for name, mod in backends.items():
            fn = getattr(mod, kernel)
            number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*inputs), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: fn(*inputs), number=number, repeat=args.repeat)) / number
            times[name] = best * 1e3
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{kernel:12s} {n:5d} " + " ".join(f"{t:12.3f}" for t in times.values()) + f"   {speed:6.1f}x")


if __name__ == "__main__":
    main()
