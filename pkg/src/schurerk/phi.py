"""The phi functions of exponential integrators and the matrix exponential.

``phi_0(z) = exp(z)`` and ``phi_{k+1}(z) = (phi_k(z) - 1/k!) / z`` with
``phi_k(0) = 1/k!``.  Near the origin the recurrence cancels catastrophically,
so a truncated Taylor series is used there instead.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

__all__ = ["MAX_ORDER", "phi_scalar", "phi_all", "phi_diag", "expm", "phi_matrix"]

MAX_ORDER = 8
MAX_TAYLOR_TERMS = 40
TAYLOR_RTOL = 1e-20

# Pade(13) numerator coefficients; the denominator uses alternating signs.
_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.4


def taylor_radius(k: int) -> float:
    """Below this modulus phi_k is summed as a Taylor series.

    The recurrence amplifies rounding error by roughly ``k! / |z|^k``; the
    radius grows with ``k`` to keep that factor bounded.
    """
    return max(0.5, 0.5 * k)


def _check_order(k):
    if not (0 <= int(k) <= MAX_ORDER) or int(k) != k:
        raise ValueError(f"phi order must be an integer in [0, {MAX_ORDER}], got {k}")
    return int(k)


def _taylor(k, z):
    # phi_k(z) = sum_j z^j / (j + k)!, summed backwards (Horner)
    zmax = float(np.max(np.abs(z), initial=0.0))
    terms = 1
    term = 1.0 / math.factorial(k)
    first = term
    while terms < MAX_TAYLOR_TERMS:
        term *= zmax / (k + terms)
        if term <= TAYLOR_RTOL * first:
            break
        terms += 1
    acc = np.zeros_like(z) + 1.0 / math.factorial(k + terms - 1)
    for j in range(terms - 2, -1, -1):
        acc = acc * z + 1.0 / math.factorial(k + j)
    return acc


def phi_all(kmax: int, z) -> np.ndarray:
    """Evaluate ``phi_0 .. phi_kmax`` elementwise on an array ``z``.

    Returns an array of shape ``(kmax + 1,) + z.shape``.
    """
    kmax = _check_order(kmax)
    z = np.asarray(z, dtype=complex)
    out = np.empty((kmax + 1,) + z.shape, dtype=complex)
    out[0] = np.exp(z)
    mag = np.abs(z)
    for k in range(1, kmax + 1):
        small = mag < taylor_radius(k)
        val = np.empty(z.shape, dtype=complex)
        if np.any(~small):
            zb = z[~small]
            val[~small] = (out[k - 1][~small] - 1.0 / math.factorial(k - 1)) / zb
        if np.any(small):
            val[small] = _taylor(k, z[small])
        out[k] = val
    return out


def phi_scalar(k: int, z) -> complex:
    """phi_k at a single complex point; ``k <= 8``."""
    k = _check_order(k)
    val = phi_all(k, np.array([z], dtype=complex))[k, 0]
    return complex(val)


def phi_diag(k: int, d, scale=1) -> np.ndarray:
    """Entrywise ``phi_k(scale * d_i)`` for a diagonal stored as a vector."""
    k = _check_order(k)
    z = float(Fraction(scale)) * np.asarray(d, dtype=complex)
    return phi_all(k, z)[k]


def _pade13(a, ident):
    b = _PADE13
    a2 = a @ a
    a4 = a2 @ a2
    a6 = a2 @ a4
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
             + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
         + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident)
    return np.linalg.solve(v - u, v + u)


def expm(a) -> np.ndarray:
    """Matrix exponential by Pade(13) with scaling and squaring.

    The scaling exponent is ``s = max(0, ceil(log2(||a||_1 / 5.4)))``.
    """
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expm needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("expm requires finite entries")
    if not np.iscomplexobj(a):
        a = a.astype(float)
    n = a.shape[0]
    ident = np.eye(n, dtype=a.dtype)
    norm1 = np.linalg.norm(a, 1) if n else 0.0
    if norm1 == 0:
        return ident
    s = max(0, int(math.ceil(math.log2(norm1 / _THETA13)))) if norm1 > 0 else 0
    r = _pade13(a / 2.0**s, ident)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            r = r @ r
    if not np.all(np.isfinite(r)):
        raise OverflowError("matrix exponential overflowed")
    return r


def phi_matrix(kmax: int, a) -> list[np.ndarray]:
    """``[phi_0(a), ..., phi_kmax(a)]`` for a square matrix ``a``.

    All orders come from a single exponential of the block matrix

        [[a, I, 0, ...], [0, 0, I, ...], ..., [0, ..., 0]]

    of size ``n (kmax + 1)``, whose first block row holds ``phi_k(a)`` in
    block column ``k``.  No inverse of ``a`` is needed, so singular ``a`` is
    fine.
    """
    kmax = int(kmax)
    if not 0 <= kmax <= 3:
        raise ValueError(f"phi_matrix supports kmax <= 3, got {kmax}")
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"phi_matrix needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if kmax == 0:
        return [expm(a)]
    if not np.any(a):
        # exact values at zero; the augmented matrix itself is not zero
        return [np.eye(n, dtype=a.dtype) / math.factorial(k) for k in range(kmax + 1)]
    m = n * (kmax + 1)
    dtype = complex if np.iscomplexobj(a) else float
    big = np.zeros((m, m), dtype=dtype)
    big[:n, :n] = a
    eye = np.eye(n)
    for k in range(kmax):
        big[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = eye
    e = expm(big)
    return [e[:n, k * n:(k + 1) * n].copy() for k in range(kmax + 1)]
