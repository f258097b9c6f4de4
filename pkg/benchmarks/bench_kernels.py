"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 5]

Prints one line per kernel with the best-of-N wall time for each backend,
the speedup, and the max absolute difference between the two outputs.
"""

import argparse
import timeit

import numpy as np

from bqnes import _pykernels
from bqnes.archspace import SpaceConfig, sample_prior_vectors
from bqnes.kernels import WLKernel

try:
    from bqnes import _ckernels
except ImportError:
    _ckernels = None


def _wl_csr(n, seed):
    space = SpaceConfig.cell()
    kern = WLKernel(space)
    V = sample_prior_vectors(space, np.random.default_rng(seed), n)
    return kern._csr(V, 2)


def cases(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, size=(1500, 28)).astype(np.float64)
    Y = rng.integers(0, 4, size=(4096, 28)).astype(np.float64)
    inv_ls = np.full(28, 0.7)
    a = _wl_csr(400, seed)
    b = _wl_csr(1200, seed + 1)
    V = rng.integers(0, 4, size=(20000, 12)).astype(np.int64)
    anchors = V[:5].copy()
    return {
        "rbf_gram 1500x4096 d=28": ("rbf_gram", (X, Y, inv_ls, 1.0)),
        "sparse_gram WL h=2 400x1200": ("sparse_gram", (*a, *b)),
        "hamming_min 20000x5": ("hamming_min", (V, anchors)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; only the fallback is available")
    for name, (fn, inputs) in cases().items():
        py = getattr(_pykernels, fn)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeats))
        if _ckernels is None:
            print(f"{name:32s} python {t_py * 1e3:9.2f} ms")
            continue
        cy = getattr(_ckernels, fn)
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeats))
        diff = float(np.max(np.abs(np.asarray(py(*inputs), dtype=float) - np.asarray(cy(*inputs), dtype=float))))
        print(f"{name:32s} python {t_py * 1e3:9.2f} ms  cython {t_cy * 1e3:9.2f} ms  "
              f"speedup {t_py / t_cy:6.2f}x  max|diff| {diff:.2e}")


if __name__ == "__main__":
    main()
