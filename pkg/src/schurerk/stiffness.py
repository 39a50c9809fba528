"""Stiffness diagnostics: stiffness ratio, local Lyapunov exponents,
curvature, the ratio ``R_nl`` and fixed-curve probes of planar fields.

A problem is flagged stiff near a point when its most negative local
Lyapunov exponent is much larger in magnitude than the curvature of the
solution there, ``R_nl = |min gamma| / kappa``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .integrate import InstabilityError, IVProblem, build_weights, erk_step
from .matlib import schur_decompose
from .tableaux import tableau

__all__ = [
    "LyapunovWindow",
    "StiffnessReport",
    "AlignmentReport",
    "stiffness_ratio",
    "local_lyapunov",
    "finite_difference_jacobian",
    "curvature",
    "r_nl",
    "stiffness_report",
    "fixed_curve_probe",
]

ZERO_REAL_PART = 1e-12
DEFAULT_THRESHOLD = 100.0


@dataclass(frozen=True)
class LyapunovWindow:
    """Local Lyapunov exponents over ``[t, t + tau]``, sorted descending."""

    t: float
    tau: float
    gamma: np.ndarray


@dataclass
class StiffnessReport:
    """Diagnostics along a trajectory, one entry per window.

    ``kappa[i]`` is the curvature used for window ``i`` and ``r_nl[i]`` the
    resulting ratio.  ``threshold`` only affects :attr:`stiff`.
    """

    ratio: float
    windows: list
    kappa: np.ndarray
    r_nl: np.ndarray
    threshold: float = DEFAULT_THRESHOLD

    @property
    def stiff(self) -> np.ndarray:
        return self.r_nl > self.threshold


@dataclass(frozen=True)
class AlignmentReport:
    """Slope-field alignment across the fixed curve of one component.

    For every point on the curve, ``angles`` holds the angle between the
    on-curve field vector and the vectors at ``+epsilon`` and ``-epsilon``
    along the free coordinate, and the angle between those two.  Angles are
    ``nan`` where a field vector vanishes.
    """

    component: int
    y_fixed: float
    epsilon: float
    points: list
    angles: list = field(default_factory=list)

    @property
    def max_angle(self) -> float:
        vals = [a for row in self.angles for a in row if not math.isnan(a)]
        return max(vals) if vals else math.nan


def _spectrum(linear) -> np.ndarray:
    lin = np.asarray(linear)
    if lin.ndim < 2:
        return np.atleast_1d(lin).astype(complex)
    return schur_decompose(lin).d


def stiffness_ratio(linear) -> float:
    """``max |Re lambda| / min |Re lambda|`` over the spectrum of ``L``.

    ``linear`` may be a scalar, a diagonal or a square matrix; eigenvalues of
    a matrix come from its Schur diagonal.  Returns ``inf`` when some real
    part is zero to within ``1e-12``.
    """
    re = np.abs(_spectrum(linear).real)
    if re.size == 0:
        raise ValueError("empty linear part")
    lo = float(re.min())
    if lo <= ZERO_REAL_PART:
        return math.inf
    return float(re.max()) / lo


def finite_difference_jacobian(f, t, y) -> np.ndarray:
    """Central-difference ``df/dy`` with steps ``max(1e-7, 1e-7 |y_i|)``."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    jac = np.empty((n, n))
    for i in range(n):
        step = max(1e-7, 1e-7 * abs(y[i]))
        yp = y.copy()
        ym = y.copy()
        yp[i] += step
        ym[i] -= step
        jac[:, i] = (np.asarray(f(t, yp)) - np.asarray(f(t, ym))) / (2.0 * step)
    return jac


def _frames(problem: IVProblem):
    # unitary u, diagonal d and strict upper s with L = u (diag(d) + s) u^H
    n = problem.n
    if problem.kind == "matrix":
        f = schur_decompose(problem.linear)
        return f.u, f.d, f.s
    d = np.broadcast_to(np.asarray(problem.linear, dtype=complex), (n,)).copy()
    return np.eye(n, dtype=complex), d, np.zeros((n, n), dtype=complex)


def _lyapunov_window(problem, y, t, tau, substeps, jacobian, frames=None):
    """Integrate trajectory and tangent frame over one window.

    Returns ``(window, times, states)`` with states in original
    coordinates at every substep.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    n = problem.n
    u, d, s = frames if frames is not None else _frames(problem)
    uh = u.conj().T
    real = problem.is_real
    jac = jacobian or problem.jacobian
    if jac is None:
        jac = lambda tt, yy: finite_difference_jacobian(problem.nonlinearity, tt, yy)

    def orig(Y):
        v = u @ Y
        return v.real if real else v

    def rhs(tt, z):
        Y = z[:n]
        W = z[n:].reshape(n, n)
        yy = orig(Y)
        gY = uh @ np.asarray(problem.nonlinearity(tt, yy), dtype=complex) - s @ Y
        gW = uh @ (np.asarray(jac(tt, yy)) @ (u @ W)) - s @ W
        return np.concatenate([gY, gW.ravel()])

    aug = IVProblem(linear=np.concatenate([d, np.repeat(d, n)]), nonlinearity=rhs,
                    y0=np.zeros(n * (n + 1), dtype=complex), t0=t, t_end=t + tau)

    # start from the Schur frame of the full Jacobian, which the QR flow of
    # a constant Jacobian leaves invariant (no orthonormalization transient)
    y = np.asarray(y)
    J0 = np.asarray(jac(t, y)) - problem.linear_matrix()
    W = uh @ schur_decompose(J0).u
    Y = uh @ y.astype(complex)

    tab = tableau("ERK4HO5")
    h = tau / substeps
    weights = build_weights(tab, aug.linear, h)
    log_r = np.zeros(n)
    times, states = [t], [orig(Y)]
    for k in range(substeps):
        tk = t + k * h
        z = np.concatenate([Y, W.ravel()])
        z, _, _ = erk_step(tab, weights, aug, tk, z, h)
        if not np.all(np.isfinite(z)):
            raise InstabilityError(f"trajectory blew up in the window at t={tk + h:.6g}")
        Y = z[:n]
        q, r = np.linalg.qr(z[n:].reshape(n, n))
        diag = np.abs(np.diag(r))
        if np.any(diag == 0):
            raise InstabilityError("tangent frame collapsed")
        log_r += np.log(diag)
        W = q
        times.append(t + (k + 1) * h)
        states.append(orig(Y))
    gamma = np.sort(log_r / tau)[::-1]
    return LyapunovWindow(t=t, tau=tau, gamma=gamma), np.array(times), np.array(states)


def local_lyapunov(problem: IVProblem, y, t: float, tau: float, substeps: int = 50,
                   jacobian=None) -> LyapunovWindow:
    """Local Lyapunov exponents of ``y' = F(t, y) - L y`` over ``[t, t + tau]``.

    The variational equation ``v' = (dF/dy - L) v`` is integrated alongside
    the trajectory in Schur coordinates of ``L`` with ERK4HO5, and the tangent
    frame is re-orthonormalized by QR after each of the ``substeps``.
    ``gamma_i = sum(log r_ii) / tau``.  ``dF/dy`` comes from ``jacobian``,
    then ``problem.jacobian``, then central finite differences.
    """
    window, _, _ = _lyapunov_window(problem, y, t, tau, substeps, jacobian)
    return window


def curvature(samples, dt: float) -> np.ndarray:
    """``|y''| / (1 + y'^2)^(3/2)`` at the interior of a uniform time series.

    Derivatives are centered differences.  ``samples`` of shape ``(m,)``
    gives ``m - 2`` values; shape ``(m, n)`` gives per-component curvature
    of shape ``(m - 2, n)``.
    """
    y = np.asarray(samples, dtype=float)
    if y.shape[0] < 3:
        raise ValueError("curvature needs at least 3 samples")
    if dt <= 0:
        raise ValueError("dt must be positive")
    d1 = (y[2:] - y[:-2]) / (2.0 * dt)
    d2 = (y[2:] - 2.0 * y[1:-1] + y[:-2]) / dt**2
    return np.abs(d2) / (1.0 + d1 * d1) ** 1.5


def r_nl(window: LyapunovWindow, kappa: float) -> float:
    """``|min gamma| / kappa``; ``inf`` when ``kappa == 0``."""
    if kappa < 0:
        raise ValueError("curvature must be non-negative")
    g = abs(float(np.min(window.gamma)))
    if kappa == 0:
        return math.inf if g > 0 else 0.0
    return g / kappa


def stiffness_report(problem: IVProblem, windows: int = 5, tau: float = 0.1,
                     substeps: int = 50, threshold: float = DEFAULT_THRESHOLD,
                     jacobian=None) -> StiffnessReport:
    """Consecutive Lyapunov windows from ``problem.t0`` with their ``R_nl``.

    The curvature of a window is the largest per-component curvature at the
    first interior substep of the window's trajectory.
    """
    if windows < 1:
        raise ValueError("need at least one window")
    frames = _frames(problem)
    y = problem.y0
    t = problem.t0
    found, kappas, ratios = [], [], []
    for _ in range(windows):
        win, _, states = _lyapunov_window(problem, y, t, tau, max(substeps, 2), jacobian,
                                          frames)
        kap = float(np.max(curvature(states[:3].real, tau / max(substeps, 2))))
        found.append(win)
        kappas.append(kap)
        ratios.append(r_nl(win, kap))
        y = states[-1]
        t = t + tau
    return StiffnessReport(ratio=stiffness_ratio(problem.linear), windows=found,
                           kappa=np.array(kappas), r_nl=np.array(ratios), threshold=threshold)


def _angle(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return math.nan
    cross = a[0] * b[1] - a[1] * b[0]
    return math.atan2(abs(cross), float(np.dot(a, b)))


def fixed_curve_probe(problem: IVProblem, component: int, y_fixed: float, epsilon: float,
                      fixed_index: int = 1, t: float | None = None,
                      bracket=(-1e4, 1e4), grid: int = 2001) -> AlignmentReport:
    """Probe the slope field across the fixed curve ``f_component(y) = 0``.

    ``y_{fixed_index}`` is pinned to ``y_fixed`` (indices are 1-based) and
    the curve equation is solved for the other coordinate on ``bracket`` by
    a sign-change scan over ``grid`` points refined with Brent's method.
    Tangential roots without a sign change are missed.

    Raises
    ------
    ValueError
        If the problem is not planar or no root lies in the bracket.
    """
    if problem.n != 2:
        raise ValueError("fixed-curve probes need a 2-D system")
    if component not in (1, 2) or fixed_index not in (1, 2):
        raise ValueError("component and fixed_index must be 1 or 2")
    t = problem.t0 if t is None else t
    ci, fi = component - 1, fixed_index - 1
    free = 1 - fi

    def point(v):
        p = np.empty(2)
        p[fi] = y_fixed
        p[free] = v
        return p

    def g(v):
        return float(problem.rhs(t, point(v))[ci])

    xs = np.linspace(bracket[0], bracket[1], grid)
    vals = np.array([g(x) for x in xs])
    roots = []
    for k in range(grid - 1):
        if vals[k] == 0.0:
            roots.append(xs[k])
        elif vals[k] * vals[k + 1] < 0:
            roots.append(brentq(g, xs[k], xs[k + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps))
    if vals[-1] == 0.0:
        roots.append(xs[-1])
    if not roots:
        raise ValueError(f"no root of fixed curve C{component} at y{fixed_index}={y_fixed} "
                         f"in {bracket}")

    points, angles = [], []
    offset = np.zeros(2)
    offset[free] = epsilon
    for r in roots:
        p = point(r)
        v0 = problem.rhs(t, p)
        vp = problem.rhs(t, p + offset)
        vm = problem.rhs(t, p - offset)
        points.append(p)
        angles.append((_angle(v0, vp), _angle(v0, vm), _angle(vp, vm)))
    return AlignmentReport(component=component, y_fixed=y_fixed, epsilon=epsilon,
                           points=points, angles=angles)
