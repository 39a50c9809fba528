"""Dense complex linear algebra: Hessenberg reduction and complex Schur form.

The Schur factorization ``A = U T U^H`` is computed with a single-shift
complex QR iteration (Wilkinson shifts, Givens rotations, deflation) on the
upper Hessenberg form.  ``T`` is split into its diagonal ``d`` and strictly
upper triangular remainder ``S``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = [
    "SchurForm",
    "SchurConvergenceError",
    "hessenberg",
    "schur_decompose",
    "split_triangular",
    "reconstruct",
]

DEFLATION_EPS = 1e-15
SWEEPS_PER_DIM = 30


class SchurConvergenceError(ArithmeticError):
    """QR iteration ran out of sweeps before the matrix became triangular."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SchurForm:
    """Complex Schur factorization ``A = u (diag(d) + s) u^H``.

    Attributes
    ----------
    u : (n, n) complex ndarray
        Unitary factor.
    t : (n, n) complex ndarray
        Upper triangular factor.
    d : (n,) complex ndarray
        Diagonal of ``t`` (the eigenvalues, in QR order).
    s : (n, n) complex ndarray
        Strictly upper triangular part of ``t``; lower triangle and diagonal
        are exact zeros.
    """

    u: np.ndarray
    t: np.ndarray
    d: np.ndarray
    s: np.ndarray

    @property
    def n(self) -> int:
        return self.d.shape[0]


def _as_square(a, name="a") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def hessenberg(a):
    """Reduce ``a`` to upper Hessenberg form with Householder reflections.

    Returns ``(h, q)`` with ``q`` unitary and ``q @ h @ q^H == a`` up to
    roundoff.  Columns that are already reduced are skipped, so an upper
    Hessenberg input comes back unchanged with ``q = I``.
    """
    a = _as_square(a)
    n = a.shape[0]
    h = np.array(a, dtype=complex)
    q = np.eye(n, dtype=complex)
    for k in range(n - 2):
        x = h[k + 1:, k]
        tail = np.linalg.norm(x[1:])
        if tail == 0.0:
            continue
        norm_x = np.hypot(abs(x[0]), tail)
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x.copy()
        v[0] += phase * norm_x
        v /= np.linalg.norm(v)
        # H <- P H P with P = I - 2 v v^H acting on rows/cols k+1:
        h[k + 1:, k:] -= 2.0 * np.outer(v, v.conj() @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v.conj())
        q[:, k + 1:] -= 2.0 * np.outer(q[:, k + 1:] @ v, v.conj())
        h[k + 2:, k] = 0.0
    return h, q


@nb.njit(cache=True)
def _givens(a, b):
    # c real, s complex: [[c, s], [-conj(s), c]] @ [a, b] = [r, 0]
    if b == 0:
        return 1.0, 0.0 + 0.0j
    if a == 0:
        return 0.0, np.conj(b) / abs(b)
    aa = abs(a)
    nrm = np.hypot(aa, abs(b))
    c = aa / nrm
    s = (a / aa) * np.conj(b) / nrm
    return c, s


@nb.njit(cache=True)
def _wilkinson(a, b, c, d):
    # eigenvalue of [[a, b], [c, d]] closer to d
    half = 0.5 * (a - d)
    disc = np.sqrt(half * half + b * c)
    l1 = d + half + disc
    l2 = d + half - disc
    if abs(l1 - d) < abs(l2 - d):
        return l1
    return l2


@nb.njit(cache=True)
def _qr_iterate(h, ut, eps, max_sweeps):
    """In-place complex QR iteration on Hessenberg ``h``.

    ``ut`` holds the transpose of the accumulated unitary factor so that its
    column rotations touch contiguous rows.  Returns the sweeps used, or -1
    when the budget runs out.
    """
    n = h.shape[0]
    cs = np.empty(n, dtype=np.float64)
    sn = np.empty(n, dtype=np.complex128)
    hnorm = 0.0
    for i in range(n):
        for j in range(n):
            hnorm = max(hnorm, abs(h[i, j]))
    hi = n - 1
    sweeps = 0
    since_deflation = 0
    while hi > 0:
        lo = hi
        while lo > 0:
            scale = abs(h[lo - 1, lo - 1]) + abs(h[lo, lo])
            if scale == 0.0:
                scale = hnorm
            if abs(h[lo, lo - 1]) <= eps * scale:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            hi -= 1
            since_deflation = 0
            continue
        if sweeps >= max_sweeps:
            return -1
        sweeps += 1
        since_deflation += 1
        if since_deflation % 10 == 0:
            # exceptional shift to break cycles
            sigma = h[hi, hi] + 0.75 * abs(h[hi, hi - 1])
        else:
            sigma = _wilkinson(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])
        for k in range(lo, hi + 1):
            h[k, k] -= sigma
        # left rotations: H <- G^H H, eliminating the subdiagonal of the block
        for k in range(lo, hi):
            c, s = _givens(h[k, k], h[k + 1, k])
            cs[k] = c
            sn[k] = s
            sc = -np.conj(s)
            for j in range(k, n):
                x = h[k, j]
                y = h[k + 1, j]
                h[k, j] = c * x + s * y
                h[k + 1, j] = sc * x + c * y
            h[k + 1, k] = 0.0
        # right rotations: H <- H G, U <- U G
        for k in range(lo, hi):
            c = cs[k]
            s = sn[k]
            s_conj = np.conj(s)
            top = min(k + 2, hi) + 1
            for i in range(top):
                x = h[i, k]
                y = h[i, k + 1]
                h[i, k] = c * x + s_conj * y
                h[i, k + 1] = c * y - s * x
            for i in range(n):
                x = ut[k, i]
                y = ut[k + 1, i]
                ut[k, i] = c * x + s_conj * y
                ut[k + 1, i] = c * y - s * x
        for k in range(lo, hi + 1):
            h[k, k] += sigma
    return sweeps


def schur_decompose(a) -> SchurForm:
    """Complex Schur decomposition ``a = u t u^H``.

    Real input is promoted to complex.  Eigenvalues on the diagonal are left
    in the order the QR iteration produces them.

    Raises
    ------
    ValueError
        If ``a`` is not square or contains non-finite entries.
    SchurConvergenceError
        If ``30 n`` QR sweeps do not reduce ``a`` to triangular form.
    """
    a = _as_square(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("schur_decompose requires finite entries")
    n = a.shape[0]
    h, q = hessenberg(a)
    if n > 1:
        h = np.ascontiguousarray(h)
        qt = np.ascontiguousarray(q.T)
        used = _qr_iterate(h, qt, DEFLATION_EPS, SWEEPS_PER_DIM * n)
        q = np.ascontiguousarray(qt.T)
        if used < 0:
            residual = float(np.linalg.norm(np.tril(h, -1)))
            raise SchurConvergenceError(
                f"QR iteration did not converge in {SWEEPS_PER_DIM * n} sweeps "
                f"(subdiagonal residual {residual:.3e})",
                residual,
            )
    t = np.triu(h)
    d, s = split_triangular(t)
    return SchurForm(u=q, t=t, d=d, s=s)


def split_triangular(t):
    """Split upper triangular ``t`` into ``(d, s)`` with ``t = diag(d) + s``.

    Entries below the diagonal larger than ``1e-13 * ||t||_F`` are treated as
    corrupted input.
    """
    t = _as_square(t, "t")
    lower = np.tril(t, -1)
    scale = np.linalg.norm(t)
    if lower.size and np.max(np.abs(lower), initial=0.0) > 1e-13 * scale:
        raise ValueError("t is not upper triangular")
    d = np.diag(t).astype(complex)
    s = np.triu(t, 1).astype(complex)
    return d, s


def reconstruct(f: SchurForm) -> np.ndarray:
    """Return ``u (diag(d) + s) u^H``."""
    return f.u @ (np.diag(f.d) + f.s) @ f.u.conj().T
