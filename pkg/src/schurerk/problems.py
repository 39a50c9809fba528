"""Test problems with closed-form solutions.

All problems follow the sign convention ``y' = F(t, y) - L y``: a system
written as ``y' = A y + g(t)`` is stored with ``L = -A``.
"""

from __future__ import annotations

import numpy as np

from .integrate import IVProblem

__all__ = [
    "system1",
    "system2",
    "linear_stiff_system",
    "quadratic_system",
    "triangular3",
    "simpson_weights",
    "laplacian",
    "heat_quartic",
    "oscillatory",
    "REGISTRY",
    "get_problem",
]

A_SYSTEM1 = np.array([[-2.0, 1.0], [1.0, -2.0]])
A_SYSTEM2 = np.array([[-2.0, 1.0], [998.0, -999.0]])


def _lambert_exact(t):
    return 2.0 * np.exp(-t) * np.ones(2) + np.array([np.sin(t), np.cos(t)])


def _lambert_exact_dot(t):
    return -2.0 * np.exp(-t) * np.ones(2) + np.array([np.cos(t), -np.sin(t)])


def system1(t_end: float = 10.0) -> IVProblem:
    """Non-stiff 2x2 linear system with forcing (spectrum -1, -3)."""
    def forcing(t, y):
        return np.array([2.0 * np.sin(t), 2.0 * (np.cos(t) - np.sin(t))])

    return IVProblem(
        linear=-A_SYSTEM1, nonlinearity=forcing, y0=np.array([2.0, 3.0]),
        t0=0.0, t_end=t_end, exact=_lambert_exact, exact_derivative=_lambert_exact_dot,
        jacobian=lambda t, y: np.zeros((2, 2)), name="system1",
    )


def system2(t_end: float = 10.0) -> IVProblem:
    """Stiff 2x2 linear system with forcing (spectrum -1, -1000).

    Shares its exact solution ``2 e^-t (1, 1) + (sin t, cos t)`` with
    :func:`system1`.
    """
    def forcing(t, y):
        return np.array([2.0 * np.sin(t), 999.0 * (np.cos(t) - np.sin(t))])

    return IVProblem(
        linear=-A_SYSTEM2, nonlinearity=forcing, y0=np.array([2.0, 3.0]),
        t0=0.0, t_end=t_end, exact=_lambert_exact, exact_derivative=_lambert_exact_dot,
        jacobian=lambda t, y: np.zeros((2, 2)), name="system2",
    )


def linear_stiff_system(y0=(1.0, 1.0), t_end: float = 1.0) -> IVProblem:
    """Homogeneous version of :func:`system2` (no forcing)."""
    return IVProblem(
        linear=-A_SYSTEM2, nonlinearity=lambda t, y: np.zeros_like(y),
        y0=np.asarray(y0, dtype=float), t0=0.0, t_end=t_end,
        jacobian=lambda t, y: np.zeros((2, 2)), name="linear_stiff",
    )


def quadratic_system(y0=(0.5, 0.5), t_end: float = 1.0) -> IVProblem:
    """``y' = A2 y + (y1^2, y2^2)``; stiff near part of its phase space only.

    Its fixed curves are ``C1: -2 y1 + y2 + y1^2 = 0`` and
    ``C2: 998 y1 - 999 y2 + y2^2 = 0``.
    """
    return IVProblem(
        linear=-A_SYSTEM2, nonlinearity=lambda t, y: y * y,
        y0=np.asarray(y0, dtype=float), t0=0.0, t_end=t_end,
        jacobian=lambda t, y: np.diag(2.0 * y), name="quadratic",
    )


def triangular3(a=1.0, b=2.0, c=7.0, d=75.0, e=8.0, f=15.0, y0=(1.0, 1.0, 1.0),
                t_end: float = 1.0) -> IVProblem:
    """``y' = -L y`` with upper triangular ``L = [[a, b, c], [0, d, e], [0, 0, f]]``.

    The default instance has eigenvalues 1, 75 and 15 and decays.  The
    closed form needs ``a``, ``d``, ``f`` pairwise distinct.
    """
    if len({a, d, f}) < 3:
        raise ValueError("triangular3 needs distinct diagonal entries a, d, f")
    L = np.array([[a, b, c], [0.0, d, e], [0.0, 0.0, f]], dtype=float)
    y0 = np.asarray(y0, dtype=float)
    k3 = y0[2]
    k2 = y0[1] - e * k3 / (f - d)
    k1 = y0[0] - b * e * k3 / ((f - a) * (f - d)) - b * k2 / (d - a) - c * k3 / (f - a)

    def modes(t):
        return np.exp(-a * t), np.exp(-d * t), np.exp(-f * t)

    def exact(t):
        ea, ed, ef = modes(t)
        return np.array([
            k1 * ea + b * e * k3 * ef / ((f - a) * (f - d)) + b * k2 * ed / (d - a) + c * k3 * ef / (f - a),
            k2 * ed + e * k3 * ef / (f - d),
            k3 * ef,
        ])

    def exact_dot(t):
        ea, ed, ef = modes(t)
        return np.array([
            -a * k1 * ea - f * b * e * k3 * ef / ((f - a) * (f - d)) - d * b * k2 * ed / (d - a) - f * c * k3 * ef / (f - a),
            -d * k2 * ed - f * e * k3 * ef / (f - d),
            -f * k3 * ef,
        ])

    return IVProblem(
        linear=L, nonlinearity=lambda t, y: np.zeros_like(y), y0=y0, t0=0.0, t_end=t_end,
        exact=exact, exact_derivative=exact_dot, jacobian=lambda t, y: np.zeros((3, 3)),
        name="triangular3", info={"constants": (k1, k2, k3)},
    )


def simpson_weights(points: int, dx: float) -> np.ndarray:
    """Composite Simpson weights ``dx/3 * (1, 4, 2, 4, ..., 2, 4, 1)``."""
    if points < 3 or points % 2 == 0:
        raise ValueError(f"Simpson's rule needs an odd number of points >= 3, got {points}")
    w = np.full(points, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (dx / 3.0)


def laplacian(N: int) -> tuple[np.ndarray, float]:
    """Dense ``-d^2/dx^2`` on ``N`` interior points of (0, 1), Dirichlet.

    Returns ``(L, dx)`` with ``L = tridiag(-1, 2, -1) / dx^2``.
    """
    dx = 1.0 / (N + 1)
    L = (2.0 * np.eye(N) - np.eye(N, k=1) - np.eye(N, k=-1)) / dx**2
    return L, dx


def _check_grid(N):
    if N < 1 or (N + 2) % 2 == 0:
        raise ValueError(f"grid needs N interior points with N + 2 odd, got N={N}")


def heat_quartic(N: int = 49, t_end: float = 1.0) -> IVProblem:
    """Heat equation with a nonlocal quartic source, exact solution ``x(1-x) e^t``.

    ``y_t - y_xx = int_0^1 y^4 dx + Phi(x, t)`` on ``N`` interior points.  The
    integral uses Simpson's rule over all ``N + 2`` points (boundary values
    are zero).  ``Phi`` is the discrete forcing that makes the grid
    restriction of the exact solution solve the semi-discrete system.
    """
    _check_grid(N)
    L, dx = laplacian(N)
    x = dx * np.arange(1, N + 1)
    w = simpson_weights(N + 2, dx)[1:-1]
    g = x * (1.0 - x)
    Lg = L @ g
    q = w @ g**4

    def forcing(t):
        et = np.exp(t)
        return et * (g + Lg) - np.exp(4.0 * t) * q

    def F(t, y):
        return (w @ (y * y * y * y)) + forcing(t)

    def jac(t, y):
        return np.outer(np.ones(N), 4.0 * w * y**3)

    return IVProblem(
        linear=L, nonlinearity=F, y0=g.copy(), t0=0.0, t_end=t_end,
        exact=lambda t: g * np.exp(t), exact_derivative=lambda t: g * np.exp(t),
        jacobian=jac, name="heat_quartic", info={"grid": x, "dx": dx},
    )


def heat_quartic_continuous_forcing(x, t):
    """Continuous source making ``x(1-x) e^t`` exact for the PDE.

    ``x(1-x) e^t + 2 e^t - e^{4t} / 630``; ``1/630 = int_0^1 x^4 (1-x)^4 dx``.
    """
    return x * (1 - x) * np.exp(t) + 2.0 * np.exp(t) - np.exp(4.0 * t) / 630.0


def oscillatory(N: int = 127, t_end: float = 200.0) -> IVProblem:
    """Heat equation with source ``1/(1+y^2)`` and exact solution
    ``10 x (1-x) (1 + sin t) + 2`` (boundary values 2).

    Boundary contributions are absorbed into the discrete forcing.
    """
    if N < 3:
        raise ValueError("oscillatory needs N >= 3")
    L, dx = laplacian(N)
    x = dx * np.arange(1, N + 1)
    g = 10.0 * x * (1.0 - x)
    Lg = L @ g
    L1 = L @ np.ones(N)

    def exact(t):
        return g * (1.0 + np.sin(t)) + 2.0

    def exact_dot(t):
        return g * np.cos(t)

    def forcing(t):
        ye = exact(t)
        return exact_dot(t) + (1.0 + np.sin(t)) * Lg + 2.0 * L1 - 1.0 / (1.0 + ye * ye)

    def F(t, y):
        return 1.0 / (1.0 + y * y) + forcing(t)

    def jac(t, y):
        return np.diag(-2.0 * y / (1.0 + y * y) ** 2)

    return IVProblem(
        linear=L, nonlinearity=F, y0=exact(0.0), t0=0.0, t_end=t_end,
        exact=exact, exact_derivative=exact_dot, jacobian=jac, name="oscillatory",
        info={"grid": x, "dx": dx},
    )


def _scalar_decay(rate: float = 20.0, t_end: float = 1.0) -> IVProblem:
    return IVProblem(
        linear=float(rate), nonlinearity=lambda t, y: np.zeros_like(y), y0=np.array([1.0]),
        t0=0.0, t_end=t_end, exact=lambda t: np.array([np.exp(-rate * t)]),
        exact_derivative=lambda t: np.array([-rate * np.exp(-rate * t)]),
        jacobian=lambda t, y: np.zeros((1, 1)), name="scalar_decay",
    )


def _diagonal_heat(N: int = 63, t_end: float = 1.0) -> IVProblem:
    # spectral-style heat problem: sine modes, diagonal L
    k = np.arange(1, N + 1)
    lam = (np.pi * k) ** 2
    y0 = 1.0 / k**2
    return IVProblem(
        linear=lam, nonlinearity=lambda t, y: np.zeros_like(y), y0=y0, t0=0.0, t_end=t_end,
        exact=lambda t: y0 * np.exp(-lam * t),
        exact_derivative=lambda t: -lam * y0 * np.exp(-lam * t),
        jacobian=lambda t, y: np.zeros((N, N)), name="diagonal_heat",
    )


REGISTRY = {
    "system1": lambda N=None: system1(),
    "system2": lambda N=None: system2(),
    "quadratic": lambda N=None: quadratic_system(),
    "linear_stiff": lambda N=None: linear_stiff_system(),
    "triangular3": lambda N=None: triangular3(),
    "heat_quartic": lambda N=None: heat_quartic(49 if N is None else N),
    "oscillatory": lambda N=None: oscillatory(127 if N is None else N),
    "scalar_decay": lambda N=None: _scalar_decay(),
    "diagonal_heat": lambda N=None: _diagonal_heat(63 if N is None else N),
}


def get_problem(name: str, grid: int | None = None) -> IVProblem:
    """Build a registered problem by name; ``grid`` sets ``N`` for PDE problems."""
    if name not in REGISTRY:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(REGISTRY)}")
    return REGISTRY[name](grid)
