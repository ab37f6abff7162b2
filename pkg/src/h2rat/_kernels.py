"""Fixed-order matrix product.

Each output element is accumulated left to right over the inner index,
exactly like a naive triple loop, so results are reproducible bit for bit
independent of BLAS threading or SIMD width. Numba compiles the loop when
available; the numpy fallback performs the same sequence of IEEE operations.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None


def _matmul_numpy(a, b):
    p, q = a.shape
    out = np.zeros((p, b.shape[1]))
    for k in range(q):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


if njit is not None:

    @njit(cache=True)
    def _matmul_numba(a, b):
        p, q = a.shape
        r = b.shape[1]
        out = np.zeros((p, r))
        for i in range(p):
            for j in range(r):
                s = 0.0
                for k in range(q):
                    s += a[i, k] * b[k, j]
                out[i, j] = s
        return out

    def matmul_fixed(a, b):
        return _matmul_numba(np.ascontiguousarray(a), np.ascontiguousarray(b))

else:  # pragma: no cover
    matmul_fixed = _matmul_numpy
