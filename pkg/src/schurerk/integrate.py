"""Fixed-step and adaptive drivers for classical and exponential RK methods.

Problems have the form ``y' = F(t, y) - L y``.  ``L`` may be a scalar, a
diagonal (1-D array) or a full matrix.  Two formulations are offered for a
full matrix:

``matrix``
    phi-function weights are full matrices of ``-hL``; the linear term is
    integrated exactly.
``vector``
    ``L = U (D + S) U^H`` is Schur-decomposed once.  The transformed state
    ``Y = U^H y`` obeys ``Y' + D Y = U^H F(t, U Y) - S Y``, so only the
    diagonal ``D`` enters the weights (stored as vectors) and ``S`` is treated
    explicitly together with ``F``.
"""

from __future__ import annotations

import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np
from scipy.linalg.blas import ztrmv

from .matlib import SchurForm, schur_decompose
from .tableaux import (
    ExponentialTableau,
    PhiCache,
    _evaluate,
    tableau as get_tableau,
)

__all__ = [
    "IVProblem",
    "SchurProblem",
    "StepControl",
    "Stats",
    "StepRecord",
    "IntegrationResult",
    "IntegrationError",
    "InstabilityError",
    "StepSizeUnderflow",
    "StepWeights",
    "build_weights",
    "erk_step",
    "rk4_step",
    "schur_transform",
    "integrate_fixed",
    "integrate_adaptive",
]

log = logging.getLogger(__name__)

FORMULATIONS = ("matrix", "vector")


class IntegrationError(ArithmeticError):
    """Integration could not finish; ``result`` holds the samples so far."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InstabilityError(IntegrationError):
    """The state became non-finite."""


class StepSizeUnderflow(IntegrationError):
    """The adaptive controller needed a step below ``h_min``."""


@dataclass(frozen=True)
class IVProblem:
    """Initial value problem ``y' = F(t, y) - L y`` on ``[t0, t_end]``.

    ``linear`` is a scalar, a 1-D array (diagonal of ``L``) or a square
    matrix.  ``exact`` and ``exact_derivative`` map ``t`` to state vectors
    when a closed form is known.  ``jacobian(t, y)`` returns ``dF/dy``.
    """

    linear: object
    nonlinearity: Callable
    y0: np.ndarray
    t0: float = 0.0
    t_end: float = 1.0
    exact: Callable | None = None
    exact_derivative: Callable | None = None
    jacobian: Callable | None = None
    name: str = ""
    info: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        y0 = np.atleast_1d(np.asarray(self.y0))
        object.__setattr__(self, "y0", y0)
        lin = np.asarray(self.linear)
        if lin.ndim == 1 and lin.shape[0] != y0.shape[0]:
            raise ValueError("diagonal linear part and y0 differ in length")
        if lin.ndim == 2 and lin.shape != (y0.shape[0], y0.shape[0]):
            raise ValueError("matrix linear part does not match y0")
        if lin.ndim > 2:
            raise ValueError("linear part must be scalar, vector or matrix")

    @property
    def n(self) -> int:
        return self.y0.shape[0]

    @property
    def kind(self) -> str:
        return {0: "scalar", 1: "diagonal", 2: "matrix"}[np.ndim(self.linear)]

    @property
    def is_real(self) -> bool:
        return not (np.iscomplexobj(self.y0) or np.iscomplexobj(self.linear))

    def apply_linear(self, y):
        lin = self.linear
        if self.kind == "matrix":
            return lin @ y
        return lin * y

    def rhs(self, t, y):
        """Full right-hand side ``F(t, y) - L y``."""
        return self.nonlinearity(t, y) - self.apply_linear(y)

    def linear_matrix(self) -> np.ndarray:
        if self.kind == "matrix":
            return np.asarray(self.linear)
        return np.diag(np.broadcast_to(np.asarray(self.linear), (self.n,)))

    def with_span(self, t0=None, t_end=None, y0=None) -> "IVProblem":
        return replace(
            self,
            t0=self.t0 if t0 is None else t0,
            t_end=self.t_end if t_end is None else t_end,
            y0=self.y0 if y0 is None else y0,
        )


@dataclass(frozen=True)
class SchurProblem:
    """A matrix-``L`` problem rewritten in Schur coordinates ``Y = U^H y``."""

    base: IVProblem
    factorization: SchurForm
    schur_time: float = 0.0

    def __post_init__(self):
        s = np.asfortranarray(self.factorization.s)
        object.__setattr__(self, "_s", s)
        object.__setattr__(self, "_uh", np.ascontiguousarray(self.factorization.u.conj().T))
        object.__setattr__(self, "_has_s", bool(np.any(s)))

    @property
    def d(self) -> np.ndarray:
        return self.factorization.d

    @property
    def u(self) -> np.ndarray:
        return self.factorization.u

    def to_schur(self, y) -> np.ndarray:
        return self._uh @ np.asarray(y, dtype=complex)

    def to_original(self, Y, check=False) -> np.ndarray:
        y = self.factorization.u @ Y
        if not self.base.is_real:
            return y
        if check:
            scale = max(1.0, float(np.max(np.abs(y), initial=0.0)))
            resid = float(np.max(np.abs(y.imag), initial=0.0))
            if resid > 1e-10 * scale:
                raise IntegrationError(
                    f"imaginary residue {resid:.3e} after mapping back from Schur coordinates")
        return y.real

    def nonlinearity(self, t, Y):
        """``G(t, Y) = U^H F(t, U Y) - S Y``."""
        g = self._uh @ np.asarray(self.base.nonlinearity(t, self.to_original(Y)), dtype=complex)
        if self._has_s:
            g = g - ztrmv(self._s, Y)
        return g

    def as_problem(self) -> IVProblem:
        """The transformed system as a diagonal-``L`` problem."""
        exact = None
        if self.base.exact is not None:
            exact = lambda t: self.to_schur(self.base.exact(t))
        return IVProblem(
            linear=self.d,
            nonlinearity=self.nonlinearity,
            y0=self.to_schur(self.base.y0),
            t0=self.base.t0,
            t_end=self.base.t_end,
            exact=exact,
            name=self.base.name + ":schur",
        )


def schur_transform(problem: IVProblem) -> SchurProblem:
    """Schur-decompose ``L`` once and return the transformed problem."""
    if problem.kind != "matrix":
        raise ValueError("schur_transform needs a full-matrix linear part")
    start = time.perf_counter()
    f = schur_decompose(problem.linear)
    elapsed = time.perf_counter() - start
    return SchurProblem(base=problem, factorization=f, schur_time=elapsed)


@dataclass(frozen=True)
class StepControl:
    """Adaptive step-size parameters.

    Proposed steps are rounded down onto the ladder ``2^(j / ladder)`` so
    that step sizes recur and cached weights are reused.  ``ladder=None``
    disables the rounding.
    """

    rtol: float = 1e-6
    atol: float = 1e-6
    safety: float = 0.9
    fac_min: float = 0.2
    fac_max: float = 5.0
    h_init: float | None = None
    h_min: float | None = None
    h_max: float | None = None
    ladder: int | None = 8

    def __post_init__(self):
        if not 0 < self.fac_min < 1 < self.fac_max:
            raise ValueError("need 0 < fac_min < 1 < fac_max")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.ladder is not None and self.ladder < 1:
            raise ValueError("ladder must be a positive number of rungs per octave")

    def quantize(self, h: float) -> float:
        """Round ``h`` down to the nearest ``2^(j / ladder)``."""
        if self.ladder is None or h <= 0 or not math.isfinite(h):
            return h
        j = math.floor(math.log2(h) * self.ladder + 1e-9)
        return 2.0 ** (j / self.ladder)


@dataclass
class Stats:
    steps_accepted: int = 0
    steps_rejected: int = 0
    f_evaluations: int = 0
    schur_time: float = 0.0
    weights_time: float = 0.0
    stepping_time: float = 0.0
    weight_refresh_count: int = 0
    wall_time: float = 0.0


@dataclass(frozen=True)
class StepRecord:
    t: float
    h: float
    err_norm: float
    accepted: bool
    weight_refresh: bool


@dataclass
class IntegrationResult:
    """Trajectory samples ``(t[i], y[i])`` and run statistics."""

    t: np.ndarray
    y: np.ndarray
    stats: Stats
    method: str = ""
    formulation: str = ""
    steps: list = field(default_factory=list)
    h_values: list = field(default_factory=list)

    @property
    def samples(self):
        return list(zip(self.t, self.y))

    @property
    def y_final(self) -> np.ndarray:
        return self.y[-1]


@dataclass
class StepWeights:
    """Weights of one tableau for one step size, ready to apply.

    Matrix weights are applied with ``@``, diagonal/scalar ones entrywise.
    ``None`` entries are structural zeros.
    """

    h: float
    kind: str
    classical: bool
    props: list
    a: list
    final_prop: object
    b: list
    e: list | None

    def apply(self, w, v):
        if self.kind == "matrix":
            return w @ v
        return w * v


def _is_zero(e) -> bool:
    return e is None


def build_weights(tab: ExponentialTableau, linear, h: float) -> StepWeights:
    """Evaluate every tableau entry for step ``h``.

    ``linear`` is the linear coefficient (scalar, diagonal vector or matrix).
    """
    lin = np.asarray(linear)
    kind = {0: "scalar", 1: "diag", 2: "matrix"}[lin.ndim]
    if tab.classical:
        c = lambda e: None if e is None else float(e.value)
        return StepWeights(
            h=h, kind=kind, classical=True,
            props=[None] * tab.stage_count,
            a=[[c(e) for e in row] for row in tab.entries],
            final_prop=None,
            b=[c(e) for e in tab.final_row],
            e=None if tab.embedded_row is None else [c(e) for e in tab.embedded_row],
        )
    if kind == "matrix":
        z = -h * lin
        cache = PhiCache(z, "matrix")
        ident = np.eye(lin.shape[0])
        mul = lambda x, y: x @ y
    else:
        z = -h * lin.astype(complex)
        cache = PhiCache(z, "diag")
        ident = np.ones(z.shape, dtype=complex)
        mul = lambda x, y: x * y

    def ev(e):
        return None if _is_zero(e) else _evaluate(e, cache, ident, mul)

    props = []
    for ci in tab.step_fractions:
        props.append(None if ci == 0 else cache.get(0, Fraction(ci)))
    return StepWeights(
        h=h, kind=kind, classical=False,
        props=props,
        a=[[ev(e) for e in row] for row in tab.entries],
        final_prop=cache.get(0, Fraction(1)),
        b=[ev(e) for e in tab.final_row],
        e=None if tab.embedded_row is None else [ev(e) for e in tab.embedded_row],
    )


def _combine(w: StepWeights, prop, y0, coeffs, fs, h):
    # prop y0 + h * sum_j coeffs_j f_j
    acc = y0 if prop is None else w.apply(prop, y0)
    for cj, fj in zip(coeffs, fs):
        if cj is None:
            continue
        if w.classical:
            acc = acc + (h * cj) * fj
        else:
            acc = acc + h * w.apply(cj, fj)
    return acc


def erk_step(tab: ExponentialTableau, weights: StepWeights, problem: IVProblem,
             t: float, y, h: float, f0=None):
    """Advance one step.

    Returns ``(y_next, y_embedded, n_evals)``; ``y_embedded`` is ``None`` when
    the tableau has no embedded row.  Exponential tableaux evaluate the
    nonlinearity ``F``; classical ones evaluate the full ``F - L y``.
    """
    f = problem.rhs if tab.classical else problem.nonlinearity
    cs = tab.step_fractions
    fs = [f(t, y) if f0 is None else f0]
    evals = 1 if f0 is None else 0
    for i in range(1, tab.stage_count):
        yi = _combine(weights, weights.props[i], y, weights.a[i], fs, h)
        fs.append(f(t + float(cs[i]) * h, yi))
        evals += 1
    y_emb = None
    if weights.e is not None:
        y_emb = _combine(weights, weights.final_prop, y, weights.e, fs, h)
    if tab.uses_embedded_stage:
        fs.append(f(t + h, y_emb))
        evals += 1
    y_next = _combine(weights, weights.final_prop, y, weights.b, fs, h)
    return y_next, y_emb, evals


def rk4_step(problem: IVProblem, t: float, y, h: float):
    """One classical RK4 step on ``y' = F(t, y) - L y``."""
    tab = get_tableau("RK4")
    w = build_weights(tab, problem.linear, h)
    y_next, _, _ = erk_step(tab, w, problem, t, np.asarray(y), h)
    _check_finite(y_next, t + h)
    return y_next


def _check_finite(y, t, result=None):
    if not np.all(np.isfinite(y)):
        raise InstabilityError(f"non-finite state at t={t:.6g}", result)


def _resolve_method(method) -> ExponentialTableau:
    return method if isinstance(method, ExponentialTableau) else get_tableau(method)


def _prepare(problem: IVProblem, formulation: str):
    """Return (working problem, SchurProblem or None)."""
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}, got {formulation!r}")
    if formulation == "vector" and problem.kind == "matrix":
        sp = schur_transform(problem)
        return sp.as_problem(), sp
    return problem, None


def _finish(ts, ys, stats, sp, tab, formulation, start, steps=None, hs=None):
    Y = np.array(ys)
    if sp is not None:
        Y = np.array([sp.to_original(v, check=True) for v in Y])
    stats.wall_time = time.perf_counter() - start
    return IntegrationResult(t=np.array(ts), y=Y, stats=stats, method=tab.name,
                             formulation=formulation, steps=steps or [], h_values=hs or [])


def integrate_fixed(problem: IVProblem, method, h: float, formulation: str = "matrix",
                    keep: str = "all", max_steps: int = 10**7,
                    embedded: bool = False) -> IntegrationResult:
    """Integrate with constant step ``h``; ``h`` must divide the time span.

    Weights are built once.  With ``keep="final"`` only the initial and final
    states are stored.  ``embedded=True`` propagates the embedded
    (lower-order) solution instead, which exposes its own convergence order.
    """
    start = time.perf_counter()
    tab = _resolve_method(method)
    if embedded and tab.embedded_row is None:
        raise ValueError(f"{tab.name} has no embedded row")
    if h <= 0:
        raise ValueError("h must be positive")
    span = problem.t_end - problem.t0
    nsteps = int(round(span / h))
    if nsteps < 1 or abs(nsteps * h - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"h={h} does not divide the interval of length {span}")
    if nsteps > max_steps:
        raise ValueError(f"{nsteps} steps exceed the step budget {max_steps}")
    work, sp = _prepare(problem, formulation)
    stats = Stats(schur_time=sp.schur_time if sp else 0.0)

    tw = time.perf_counter()
    weights = build_weights(tab, work.linear, h)
    stats.weights_time = time.perf_counter() - tw
    stats.weight_refresh_count = 1

    ts, ys = [work.t0], [work.y0]
    y = work.y0.astype(complex) if sp is not None else np.asarray(work.y0)
    ts_step = time.perf_counter()
    # divergence is detected below; silence the overflow chatter on the way
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(nsteps):
            t = work.t0 + k * h
            y_high, y_low, ev = erk_step(tab, weights, work, t, y, h)
            y = y_low if embedded else y_high
            stats.f_evaluations += ev
            stats.steps_accepted += 1
            tn = work.t_end if k == nsteps - 1 else work.t0 + (k + 1) * h
            if not np.all(np.isfinite(y)):
                stats.stepping_time = time.perf_counter() - ts_step
                partial = _finish(ts, ys, stats, sp, tab, formulation, start)
                raise InstabilityError(f"non-finite state at t={tn:.6g}", partial)
            if keep == "all" or k == nsteps - 1:
                ts.append(tn)
                ys.append(y)
    stats.stepping_time = time.perf_counter() - ts_step
    return _finish(ts, ys, stats, sp, tab, formulation, start)


def _err_norm(diff, y_old, y_new, control: StepControl) -> float:
    sc = control.atol + control.rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean(np.abs(diff / sc) ** 2)))


def _initial_step(work, sp, y, control, h_max):
    # Hairer-Wanner starting guess: 1% of |y| / |f| in the weighted norm
    f0 = work.rhs(work.t0, y)
    yo = sp.to_original(y) if sp is not None else y
    fo = sp.to_original(f0) if sp is not None else f0
    sc = control.atol + control.rtol * np.abs(yo)
    d0 = np.sqrt(np.mean(np.abs(yo / sc) ** 2))
    d1 = np.sqrt(np.mean(np.abs(fo / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    return min(h0, h_max)


def integrate_adaptive(problem: IVProblem, method="ERK43ZB", control: StepControl | None = None,
                       formulation: str = "vector", keep: str = "all",
                       max_steps: int = 10**6, record_steps: bool = False) -> IntegrationResult:
    """Integrate with embedded error control.

    Error norm: weighted RMS of ``y_high - y_low`` with scale
    ``atol + rtol * max(|y_n|, |y_high|)`` in original coordinates; steps
    with norm <= 1 are accepted.  New step: ``h * clamp(safety *
    err^(-1/(q+1)), fac_min, fac_max)`` with ``q`` the embedded order; after a
    rejection the step may not grow.  Weights are cached per distinct ``h``.
    """
    start = time.perf_counter()
    tab = _resolve_method(method)
    if tab.embedded_row is None:
        raise ValueError(f"{tab.name} has no embedded row")
    control = control or StepControl()
    span = problem.t_end - problem.t0
    h_max = control.h_max if control.h_max is not None else abs(span)
    h_min = control.h_min if control.h_min is not None else 1e-14 * max(1.0, abs(span))
    expo = 1.0 / (tab.embedded_order + 1)

    work, sp = _prepare(problem, formulation)
    stats = Stats(schur_time=sp.schur_time if sp else 0.0)
    y = work.y0.astype(complex) if sp is not None else np.asarray(work.y0)
    to_orig = (lambda v: sp.to_original(v)) if sp is not None else (lambda v: v)

    # matrix weights are large; keep only a few sizes around
    cache_limit = 4 if work.kind == "matrix" else None
    cache: OrderedDict = OrderedDict()
    distinct_h = set()

    def weights_for(hh):
        if hh in cache:
            cache.move_to_end(hh)
            return cache[hh], False
        tw = time.perf_counter()
        w = build_weights(tab, work.linear, hh)
        stats.weights_time += time.perf_counter() - tw
        stats.weight_refresh_count += 1
        cache[hh] = w
        if cache_limit is not None and len(cache) > cache_limit:
            cache.popitem(last=False)
        return w, True

    t = work.t0
    h = control.h_init if control.h_init is not None else _initial_step(work, sp, y, control, h_max)
    h = min(h, h_max)
    ts, ys = [t], [y]
    steps = []
    y_orig = to_orig(y)
    tstep = time.perf_counter()
    while t < work.t_end:
        if stats.steps_accepted + stats.steps_rejected >= max_steps:
            stats.stepping_time = time.perf_counter() - tstep
            raise IntegrationError(f"step budget {max_steps} exhausted at t={t:.6g}",
                                   _finish(ts, ys, stats, sp, tab, formulation, start, steps))
        h_try = min(h, work.t_end - t)
        last = h_try >= work.t_end - t
        if h_try < h_min:
            stats.stepping_time = time.perf_counter() - tstep
            raise StepSizeUnderflow(f"step size {h_try:.3e} below h_min at t={t:.6g}",
                                    _finish(ts, ys, stats, sp, tab, formulation, start, steps))
        w, refreshed = weights_for(h_try)
        distinct_h.add(h_try)
        with np.errstate(over="ignore", invalid="ignore"):
            y_high, y_low, ev = erk_step(tab, w, work, t, y, h_try)
            finite = np.all(np.isfinite(y_high)) and np.all(np.isfinite(y_low))
            if finite:
                yh_orig = to_orig(y_high)
                err = _err_norm(to_orig(y_high - y_low), y_orig, yh_orig, control)
        stats.f_evaluations += ev
        if not finite or not math.isfinite(err):
            err = math.inf
        accepted = err <= 1.0
        if record_steps:
            steps.append(StepRecord(t=t, h=h_try, err_norm=err, accepted=accepted,
                                    weight_refresh=refreshed))
        if err == 0.0:
            fac = control.fac_max
        elif math.isinf(err) or math.isnan(err):
            fac = control.fac_min
        else:
            fac = min(control.fac_max, max(control.fac_min, control.safety * err ** (-expo)))
        if accepted:
            stats.steps_accepted += 1
            t = work.t_end if last else t + h_try
            y = y_high
            y_orig = yh_orig
            if keep == "all" or t >= work.t_end:
                ts.append(t)
                ys.append(y)
            if not last:
                h = control.quantize(min(h_try * fac, h_max))
        else:
            stats.steps_rejected += 1
            h = control.quantize(h_try * min(fac, 1.0))
    stats.stepping_time = time.perf_counter() - tstep
    return _finish(ts, ys, stats, sp, tab, formulation, start, steps, sorted(distinct_h))
