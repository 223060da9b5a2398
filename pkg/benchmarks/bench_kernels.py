"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes cover one training step (small batch, one segment book) and bulk ID
generation (many vectors against a large book). Results are also cross-checked
so a speedup never hides a numerical divergence.
"""
import argparse
import timeit

import numpy as np

from visualid import _pykernels

try:
    from visualid import _ckernels
except ImportError:
    _ckernels = None

SHAPES = [
    # (rows, codewords, dim)
    (2, 256, 4),
    (64, 64, 16),
    (64, 1024, 4),
    (2000, 256, 16),
]


def _cases(n, m, d, rng):
    X = rng.normal(size=(n, d))
    C = rng.normal(size=(m, d))
    G = rng.normal(size=(n, d))
    return X, C, G


def _time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def run(repeat=20, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for n, m, d in SHAPES:
        X, C, G = _cases(n, m, d, rng)
        beta = 5.0
        for name in ("forward", "backward", "nearest"):
            timings = {}
            outs = {}
            for label, mod in (("numpy", _pykernels), ("cython", _ckernels)):
                if mod is None:
                    continue
                W, D, _ = mod.soft_assign_forward(X, C, beta)
                fn = {
                    "forward": lambda mod=mod: mod.soft_assign_forward(X, C, beta),
                    "backward": lambda mod=mod, W=W, D=D: mod.soft_assign_backward(X, C, W, D, G, beta),
                    "nearest": lambda mod=mod: mod.nearest_codeword(X, C),
                }[name]
                timings[label] = _time(fn, repeat)
                outs[label] = fn()
            err = 0.0
            if len(outs) == 2:
                err = max(float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
                          for a, b in zip(outs["numpy"], outs["cython"]))
            rows.append(((n, m, d), name, timings, err))
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    if _ckernels is None:
        print("compiled extension not built; showing numpy timings only")
    print(f"{'shape (n,m,d)':>18} {'kernel':>9} {'numpy us':>10} {'cython us':>10} {'speedup':>8} {'max|diff|':>10}")
    for shape, name, t, err in run(a.repeat, a.seed):
        npy = t["numpy"] * 1e6
        cy = t.get("cython")
        cy_s = f"{cy * 1e6:10.1f}" if cy else f"{'-':>10}"
        sp = f"{t['numpy'] / cy:8.2f}" if cy else f"{'-':>8}"
        print(f"{str(shape):>18} {name:>9} {npy:10.1f} {cy_s} {sp} {err:10.2e}")


if __name__ == "__main__":
    main()
