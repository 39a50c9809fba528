"""Butcher tableaux for classical RK4 and four exponential Runge-Kutta methods.

Exponential tableau entries are expressions in ``phi_k(s z)`` with ``z = -hL``
and ``s`` in ``{1, 1/2, 1/6}``.  Coefficients are exact fractions.  The same
expression evaluates against a scalar, a diagonal stored as a vector, or a
full matrix.

Stage ``i`` of an exponential method is

    y_i = phi_0(-c_i h L) y_n + h * sum_{j<i} a_ij(-hL) F(t_n + c_j h, y_j)

and the step is ``y_{n+1} = phi_0(-hL) y_n + h * sum_j b_j(-hL) F_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache, reduce

import numpy as np

from .phi import phi_all, phi_matrix

__all__ = [
    "PhiExpr",
    "Constant",
    "Phi",
    "Sum",
    "Scale",
    "Product",
    "ExponentialTableau",
    "tableau",
    "METHODS",
    "evaluate_scalar",
    "evaluate_diag",
    "evaluate_matrix",
    "PhiCache",
]

ALLOWED_SCALES = (Fraction(1), Fraction(1, 2), Fraction(1, 6))


def _frac(x) -> Fraction:
    if isinstance(x, float):
        raise TypeError("tableau coefficients must be exact (int or Fraction)")
    return Fraction(x)


class PhiExpr:
    """Base class for expression trees over ``phi_k(s z)``."""

    def __add__(self, other):
        return Sum((self, _lift(other)))

    def __radd__(self, other):
        return Sum((_lift(other), self))

    def __sub__(self, other):
        return Sum((self, Scale(Fraction(-1), _lift(other))))

    def __rsub__(self, other):
        return Sum((_lift(other), Scale(Fraction(-1), self)))

    def __neg__(self):
        return Scale(Fraction(-1), self)

    def __mul__(self, other):
        if isinstance(other, PhiExpr):
            return Product(self, other)
        return Scale(_frac(other), self)

    def __rmul__(self, other):
        return Scale(_frac(other), self)

    def leaves(self):
        """Yield every ``Phi`` leaf."""
        raise NotImplementedError


def _lift(x) -> PhiExpr:
    return x if isinstance(x, PhiExpr) else Constant(_frac(x))


@dataclass(frozen=True)
class Constant(PhiExpr):
    value: Fraction

    def leaves(self):
        return iter(())


@dataclass(frozen=True)
class Phi(PhiExpr):
    k: int
    scale: Fraction = Fraction(1)

    def __post_init__(self):
        if Fraction(self.scale) not in ALLOWED_SCALES:
            raise ValueError(f"unsupported phi scale {self.scale}")
        if not 0 <= self.k <= 3:
            raise ValueError(f"tableau phi order must be <= 3, got {self.k}")

    def leaves(self):
        yield self


@dataclass(frozen=True)
class Sum(PhiExpr):
    terms: tuple

    def leaves(self):
        for t in self.terms:
            yield from t.leaves()


@dataclass(frozen=True)
class Scale(PhiExpr):
    factor: Fraction
    expr: PhiExpr

    def leaves(self):
        return self.expr.leaves()


@dataclass(frozen=True)
class Product(PhiExpr):
    left: PhiExpr
    right: PhiExpr

    def leaves(self):
        yield from self.left.leaves()
        yield from self.right.leaves()


@dataclass(frozen=True)
class ExponentialTableau:
    """Explicit (exponential) Runge-Kutta tableau.

    ``entries[i]`` holds the ``i`` coefficients of stage ``i`` (``entries[0]``
    is empty).  ``None`` marks a structural zero.  ``final_row`` may be one
    entry longer than ``stage_count``; the extra weight multiplies
    ``F(t_n + h, embedded solution)``, as in ERK43ZB where the fourth-order
    row consumes the third-order result as a fifth stage.
    """

    name: str
    step_fractions: tuple
    entries: tuple
    final_row: tuple
    order: int
    embedded_row: tuple | None = None
    embedded_order: int | None = None
    classical: bool = False
    named: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def stage_count(self) -> int:
        return len(self.step_fractions)

    @property
    def uses_embedded_stage(self) -> bool:
        return len(self.final_row) > self.stage_count

    @property
    def scales(self) -> tuple:
        """Distinct phi argument scales used anywhere in the tableau."""
        found = {Fraction(1)}
        for row in (*self.entries, self.final_row, self.embedded_row or ()):
            for e in row:
                if e is not None:
                    found.update(leaf.scale for leaf in e.leaves())
        found.update(Fraction(c) for c in self.step_fractions if c != 0)
        return tuple(sorted(found, reverse=True))

    def rows(self):
        """Iterate over all coefficient rows (stages, final, embedded)."""
        yield from self.entries[1:]
        yield self.final_row
        if self.embedded_row is not None:
            yield self.embedded_row


# shorthands used in the tableau definitions below
def _p(k, s=1):
    return Phi(k, Fraction(s))


_HALF = Fraction(1, 2)
_SIXTH = Fraction(1, 6)


def _rk4():
    c = lambda x: Constant(Fraction(x))
    return ExponentialTableau(
        name="RK4",
        step_fractions=(Fraction(0), _HALF, _HALF, Fraction(1)),
        entries=((), (c(_HALF),), (None, c(_HALF)), (None, None, c(1))),
        final_row=(c(_SIXTH), c(Fraction(1, 3)), c(Fraction(1, 3)), c(_SIXTH)),
        order=4,
        classical=True,
    )


def _exp_euler():
    return ExponentialTableau(
        name="EXPEULER",
        step_fractions=(Fraction(0),),
        entries=((),),
        final_row=(_p(1),),
        order=1,
    )


def _final_cm_k():
    p1, p2, p3 = _p(1), _p(2), _p(3)
    return (p1 - 3 * p2 + 4 * p3, 2 * p2 - 4 * p3, 2 * p2 - 4 * p3, 4 * p3 - p2)


def _erk4cm():
    h1 = _p(1, _HALF)
    return ExponentialTableau(
        name="ERK4CM",
        step_fractions=(Fraction(0), _HALF, _HALF, Fraction(1)),
        entries=(
            (),
            (_HALF * h1,),
            (None, _HALF * h1),
            (_HALF * Product(h1, _p(0, _HALF) - 1), None, h1),
        ),
        final_row=_final_cm_k(),
        order=4,
    )


def _erk4k():
    h1, h2 = _p(1, _HALF), _p(2, _HALF)
    p1, p2 = _p(1), _p(2)
    return ExponentialTableau(
        name="ERK4K",
        step_fractions=(Fraction(0), _HALF, _HALF, Fraction(1)),
        entries=(
            (),
            (_HALF * h1,),
            (_HALF * h1 - h2, h2),
            (p1 - 2 * p2, None, 2 * p2),
        ),
        final_row=_final_cm_k(),
        order=4,
    )


def _erk4ho5():
    h1, h2, h3 = _p(1, _HALF), _p(2, _HALF), _p(3, _HALF)
    p1, p2, p3 = _p(1), _p(2), _p(3)
    a31 = _HALF * h2 - p3 + Fraction(1, 4) * p2 - _HALF * h3
    a33 = Fraction(1, 4) * h2 - a31
    return ExponentialTableau(
        name="ERK4HO5",
        step_fractions=(Fraction(0), _HALF, _HALF, Fraction(1), _HALF),
        entries=(
            (),
            (_HALF * h1,),
            (_HALF * h1 - h2, h2),
            (p1 - 2 * p2, p2, p2),
            (_HALF * h1 - 2 * a31 - a33, a31, a31, a33),
        ),
        final_row=(p1 - 3 * p2 + 4 * p3, None, None, -p2 + 4 * p3, 4 * p2 - 8 * p3),
        order=4,
        named={"a31": a31, "a33": a33},
    )


def _erk43zb():
    h1, h2, h3 = _p(1, _HALF), _p(2, _HALF), _p(3, _HALF)
    s1, s2 = _p(1, _SIXTH), _p(2, _SIXTH)
    p1, p2, p3 = _p(1), _p(2), _p(3)
    F = Fraction
    a11 = F(3, 2) * h2 + _HALF * s2
    a21 = (F(19, 60) * p1 + _HALF * h1 + _HALF * s1
           + 2 * h2 + F(13, 6) * s2 + F(3, 5) * h3)
    a22 = (F(-19, 180) * p1 - _SIXTH * h1 - _SIXTH * s1
           - _SIXTH * h2 + F(1, 9) * s2 - F(1, 5) * h3)
    a33 = p2 + h2 - 6 * p3 - 3 * h3
    a31 = 3 * p2 - F(9, 2) * h2 - F(5, 2) * s2 + 6 * a33 + a21
    a32 = 6 * p3 + 3 * h3 - 2 * a33 + a22
    a43 = F(7, 9) * p2 - F(10, 3) * p3
    a44 = F(4, 3) * p3 - F(1, 9) * p2
    third = (p1 - a31 - a32 - a33, a31, a32, a33)
    fourth = (p1 - F(67, 9) * p2 + F(52, 3) * p3, 8 * p2 - 24 * p3,
              F(26, 3) * p3 - F(11, 9) * p2, a43, a44)
    return ExponentialTableau(
        name="ERK43ZB",
        step_fractions=(F(0), _SIXTH, _HALF, _HALF),
        entries=(
            (),
            (_SIXTH * s1,),
            (_HALF * h1 - a11, a11),
            (_HALF * h1 - a21 - a22, a21, a22),
        ),
        final_row=fourth,
        order=4,
        embedded_row=third,
        embedded_order=3,
        named={"a11": a11, "a21": a21, "a22": a22, "a31": a31, "a32": a32,
               "a33": a33, "a43": a43, "a44": a44},
    )


_BUILDERS = {
    "RK4": _rk4,
    "EXPEULER": _exp_euler,
    "ERK4CM": _erk4cm,
    "ERK4K": _erk4k,
    "ERK4HO5": _erk4ho5,
    "ERK43ZB": _erk43zb,
}
METHODS = tuple(_BUILDERS)


def tableau(name: str) -> ExponentialTableau:
    """Look up a tableau by name (case-insensitive)."""
    key = name.upper()
    if key not in _BUILDERS:
        raise KeyError(f"unknown method {name!r}; known: {', '.join(METHODS)}")
    return _build(key)


@lru_cache(maxsize=None)
def _build(key):
    return _BUILDERS[key]()


class PhiCache:
    """Memoized ``phi_0..phi_3`` at each scale for one argument ``z``.

    ``z`` is a complex scalar, a 1-D array (diagonal), or a square matrix.
    """

    def __init__(self, z, kind: str):
        self.z = z
        self.kind = kind
        self._values = {}

    def get(self, k: int, scale: Fraction):
        scale = Fraction(scale)
        if scale not in self._values:
            sz = self.z * float(scale)
            if self.kind == "matrix":
                self._values[scale] = phi_matrix(3, sz)
            else:
                self._values[scale] = list(phi_all(3, sz))
        return self._values[scale][k]


def _evaluate(e, cache: PhiCache, ident, mul):
    if isinstance(e, Constant):
        return float(e.value) * ident
    if isinstance(e, Phi):
        return cache.get(e.k, e.scale)
    if isinstance(e, Scale):
        return float(e.factor) * _evaluate(e.expr, cache, ident, mul)
    if isinstance(e, Sum):
        return reduce(lambda acc, t: acc + _evaluate(t, cache, ident, mul),
                      e.terms[1:], _evaluate(e.terms[0], cache, ident, mul))
    if isinstance(e, Product):
        return mul(_evaluate(e.left, cache, ident, mul),
                   _evaluate(e.right, cache, ident, mul))
    raise TypeError(f"not a PhiExpr: {e!r}")


def evaluate_scalar(e: PhiExpr, z, cache: PhiCache | None = None) -> complex:
    """Evaluate ``e`` at the complex point ``z`` (``z`` plays the role of -hL)."""
    cache = cache or PhiCache(np.asarray(z, dtype=complex), "scalar")
    return complex(_evaluate(e, cache, 1.0, lambda a, b: a * b))


def evaluate_diag(e: PhiExpr, hl_diag, cache: PhiCache | None = None) -> np.ndarray:
    """Evaluate ``e`` for the diagonal linear part ``h * d`` (argument ``-h d``)."""
    if cache is None:
        cache = PhiCache(-np.asarray(hl_diag, dtype=complex), "diag")
    ident = np.ones(np.shape(cache.z), dtype=complex)
    return np.asarray(_evaluate(e, cache, ident, lambda a, b: a * b)) * ident


def evaluate_matrix(e: PhiExpr, hl, cache: PhiCache | None = None) -> np.ndarray:
    """Evaluate ``e`` for the full matrix ``h L`` (argument ``-h L``).

    Products become matrix products; the factors commute since both are
    functions of the same matrix.
    """
    if cache is None:
        cache = PhiCache(-np.asarray(hl), "matrix")
    ident = np.eye(cache.z.shape[0])
    return _evaluate(e, cache, ident, lambda a, b: a @ b)
