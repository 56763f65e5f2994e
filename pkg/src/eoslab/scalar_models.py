"""Scalar losses, activations, and the bell-shaped ratio functions they induce.

A ratio function r is built either from a loss (r(p) = l'(p)/p) or from an
activation (r(z) = phi(z) phi'(z)/z), with the removable singularity at the
origin filled by r(0) = 1.  Everything downstream (one-parameter maps, exact
two-dimensional recursions, theorem checks) is driven by r, its first two
derivatives, and its inverse on the positive half-line.

Numerical policy: inside the band |p| < NEAR_ZERO_BAND the even ratio
functions switch to their Taylor expansions around 0, because the direct
quotient forms lose roughly half the significand to cancellation there.  The
curvatures r''(0) are stored analytically per kind and are cross-checked
against finite differences by the validator and the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, NoRootError

__all__ = [
    "NEAR_ZERO_BAND",
    "ScalarLoss",
    "Activation",
    "RFunction",
    "ConditionCheck",
    "AssumptionReport",
    "scalar_loss",
    "activation",
    "r_from_loss",
    "r_from_activation",
    "r_hat",
    "h_linear",
    "h_nonlinear",
    "validate_assumptions",
    "LOSS_KINDS",
    "ACTIVATION_KINDS",
]

# Width of the even-Taylor crossover band for ratio functions.
NEAR_ZERO_BAND = 1e-4

_LOG2 = math.log(2.0)

LOSS_KINDS = ("log-cosh", "square-root")
ACTIVATION_KINDS = ("tanh", "elu", "linear")

# Kinds whose ratio function satisfies the bell-shape requirements; the
# validator re-derives this from scratch, the tuple is only a fast gate.
CONFORMING_R_KINDS = ("log-cosh", "square-root", "tanh")


# ---------------------------------------------------------------------------
# loss kinds
# ---------------------------------------------------------------------------

def _logcosh(p: float) -> float:
    # log(cosh p) = |p| + log1p(exp(-2|p|)) - log 2, stable for large |p|
    a = abs(p)
    return a + math.log1p(math.exp(-2.0 * a)) - _LOG2


def _logcosh_d1(p: float) -> float:
    return math.tanh(p)


def _sech2(p: float) -> float:
    # sech^2 without overflowing cosh for large |p|
    e = math.exp(-2.0 * abs(p))
    s = 2.0 * math.sqrt(e) / (1.0 + e)
    return s * s


def _logcosh_d2(p: float) -> float:
    return _sech2(p)


def _logcosh_d3(p: float) -> float:
    return -2.0 * _sech2(p) * math.tanh(p)


def _sqrt_loss(p: float) -> float:
    return math.hypot(1.0, p)


def _sqrt_loss_d1(p: float) -> float:
    return p / math.hypot(1.0, p)


def _sqrt_loss_d2(p: float) -> float:
    return (1.0 + p * p) ** -1.5


def _sqrt_loss_d3(p: float) -> float:
    return -3.0 * p * (1.0 + p * p) ** -2.5


# ---------------------------------------------------------------------------
# activation kinds
# ---------------------------------------------------------------------------

def _tanh(z: float) -> float:
    return math.tanh(z)


def _tanh_d1(z: float) -> float:
    return _sech2(z)


def _tanh_d2(z: float) -> float:
    return -2.0 * _sech2(z) * math.tanh(z)


def _tanh_d3(z: float) -> float:
    s2 = _sech2(z)
    t = math.tanh(z)
    return 2.0 * s2 * (2.0 * t * t - s2)


def _elu(z: float) -> float:
    return z if z >= 0.0 else math.expm1(z)


def _elu_d1(z: float) -> float:
    return 1.0 if z >= 0.0 else math.exp(z)


def _elu_d2(z: float) -> float:
    # right-continuous at 0; the kink makes elu non-conforming anyway
    return 0.0 if z >= 0.0 else math.exp(z)


def _elu_d3(z: float) -> float:
    return 0.0 if z >= 0.0 else math.exp(z)


def _identity(z: float) -> float:
    return z


def _one(z: float) -> float:
    return 1.0


def _zero(z: float) -> float:
    return 0.0


_LOSS_TABLE: dict[str, tuple[Callable, Callable, Callable, Callable]] = {
    "log-cosh": (_logcosh, _logcosh_d1, _logcosh_d2, _logcosh_d3),
    "square-root": (_sqrt_loss, _sqrt_loss_d1, _sqrt_loss_d2, _sqrt_loss_d3),
}

_ACT_TABLE: dict[str, tuple[Callable, Callable, Callable, Callable]] = {
    "tanh": (_tanh, _tanh_d1, _tanh_d2, _tanh_d3),
    "elu": (_elu, _elu_d1, _elu_d2, _elu_d3),
    "linear": (_identity, _one, _zero, _zero),
}

# Analytic curvatures of r at 0 per kind, verified against finite-difference
# and high-precision series oracles in the test suite.
_R2_AT_ZERO = {
    "log-cosh": -2.0 / 3.0,
    "square-root": -1.0,
    "tanh": -8.0 / 3.0,
    "elu": 0.0,      # one-sided; r from elu is not even
    "linear": 0.0,
}

_R4_AT_ZERO = {
    "log-cosh": 16.0 / 5.0,
    "square-root": 9.0,
    "tanh": 136.0 / 5.0,
    "elu": 0.0,
    "linear": 0.0,
}


@dataclass(frozen=True)
class ScalarLoss:
    """An even scalar loss with its first two derivatives."""

    kind: str
    eval: Callable[[float], float]
    d1: Callable[[float], float]
    d2: Callable[[float], float]


@dataclass(frozen=True)
class Activation:
    """A scalar activation with its first two derivatives."""

    kind: str
    eval: Callable[[float], float]
    d1: Callable[[float], float]
    d2: Callable[[float], float]


def scalar_loss(kind: str) -> ScalarLoss:
    if kind not in _LOSS_TABLE:
        raise DomainError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    f, d1, d2, _ = _LOSS_TABLE[kind]
    return ScalarLoss(kind, f, d1, d2)


def activation(kind: str) -> Activation:
    if kind not in _ACT_TABLE:
        raise DomainError(f"unknown activation kind {kind!r}; expected one of {ACTIVATION_KINDS}")
    f, d1, d2, _ = _ACT_TABLE[kind]
    return Activation(kind, f, d1, d2)


# ---------------------------------------------------------------------------
# vectorised twins used by the network code (hot scalar loops stay on math.*)
# ---------------------------------------------------------------------------

def loss_eval_array(loss: ScalarLoss, p: np.ndarray) -> np.ndarray:
    if loss.kind == "log-cosh":
        return np.logaddexp(p, -p) - _LOG2
    return np.sqrt(1.0 + p * p)


def loss_d1_array(loss: ScalarLoss, p: np.ndarray) -> np.ndarray:
    if loss.kind == "log-cosh":
        return np.tanh(p)
    return p / np.sqrt(1.0 + p * p)


def loss_d2_array(loss: ScalarLoss, p: np.ndarray) -> np.ndarray:
    if loss.kind == "log-cosh":
        t = np.tanh(p)
        return 1.0 - t * t
    return (1.0 + p * p) ** -1.5


def act_eval_array(act: Activation, z: np.ndarray) -> np.ndarray:
    if act.kind == "tanh":
        return np.tanh(z)
    if act.kind == "elu":
        return np.where(z >= 0.0, z, np.expm1(np.minimum(z, 0.0)))
    return np.asarray(z, dtype=float)


def act_d1_array(act: Activation, z: np.ndarray) -> np.ndarray:
    if act.kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if act.kind == "elu":
        return np.where(z >= 0.0, 1.0, np.exp(np.minimum(z, 0.0)))
    return np.ones_like(np.asarray(z, dtype=float))


def act_d2_array(act: Activation, z: np.ndarray) -> np.ndarray:
    if act.kind == "tanh":
        t = np.tanh(z)
        return -2.0 * t * (1.0 - t * t)
    if act.kind == "elu":
        return np.where(z >= 0.0, 0.0, np.exp(np.minimum(z, 0.0)))
    return np.zeros_like(np.asarray(z, dtype=float))


# ---------------------------------------------------------------------------
# ratio functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RFunction:
    """Bell-shaped ratio function r with derivatives and stored curvatures.

    ``source`` is "loss" or "activation"; ``kind`` names the underlying
    scalar model.  ``r2_at_zero`` is r''(0) and ``r4_at_zero`` is r''''(0)
    (the latter is consumed only by validators).
    """

    source: str
    kind: str
    r2_at_zero: float
    r4_at_zero: float
    loss: ScalarLoss | None = None
    activation: Activation | None = None

    @property
    def label(self) -> str:
        return f"{self.source}:{self.kind}"

    # -- evaluation ---------------------------------------------------------

    def eval(self, p: float) -> float:
        kind = self.kind
        if kind == "linear":
            return 1.0
        if kind == "elu":
            if p == 0.0:
                return 1.0
            # expm1 keeps the left branch exact near 0; r is not even here
            return _elu(p) * _elu_d1(p) / p
        if abs(p) < NEAR_ZERO_BAND:
            return 1.0 + 0.5 * self.r2_at_zero * p * p
        if kind == "log-cosh":
            return math.tanh(p) / p
        if kind == "square-root":
            return 1.0 / math.hypot(1.0, p)
        # tanh activation
        return math.tanh(p) * _sech2(p) / p

    def d1(self, p: float) -> float:
        kind = self.kind
        if kind == "linear":
            return 0.0
        if kind == "elu":
            if p >= 0.0:
                return 0.0
            g = math.exp(2.0 * p) - math.exp(p)
            g1 = 2.0 * math.exp(2.0 * p) - math.exp(p)
            return g1 / p - g / (p * p)
        if abs(p) < NEAR_ZERO_BAND:
            return self.r2_at_zero * p + self.r4_at_zero * p ** 3 / 6.0
        if kind == "log-cosh":
            return _sech2(p) / p - math.tanh(p) / (p * p)
        if kind == "square-root":
            return -p * (1.0 + p * p) ** -1.5
        g = math.tanh(p) * _sech2(p)
        g1 = _tanh_d1(p) ** 2 + math.tanh(p) * _tanh_d2(p)
        return g1 / p - g / (p * p)

    def d2(self, p: float) -> float:
        kind = self.kind
        if kind == "linear":
            return 0.0
        if kind == "elu":
            if p >= 0.0:
                return 0.0
            e1, e2 = math.exp(p), math.exp(2.0 * p)
            g, g1, g2 = e2 - e1, 2.0 * e2 - e1, 4.0 * e2 - e1
            return g2 / p - 2.0 * g1 / (p * p) + 2.0 * g / (p * p * p)
        if abs(p) < NEAR_ZERO_BAND:
            return self.r2_at_zero + 0.5 * self.r4_at_zero * p * p
        if kind == "log-cosh":
            t, s2 = math.tanh(p), _sech2(p)
            return -2.0 * s2 * t / p - 2.0 * s2 / (p * p) + 2.0 * t / (p * p * p)
        if kind == "square-root":
            return (2.0 * p * p - 1.0) * (1.0 + p * p) ** -2.5
        t = math.tanh(p)
        d1, d2_, d3 = _tanh_d1(p), _tanh_d2(p), _tanh_d3(p)
        g = t * d1
        g1 = d1 * d1 + t * d2_
        g2 = 3.0 * d1 * d2_ + t * d3
        return g2 / p - 2.0 * g1 / (p * p) + 2.0 * g / (p * p * p)


def r_from_loss(loss: ScalarLoss) -> RFunction:
    return RFunction(
        source="loss",
        kind=loss.kind,
        r2_at_zero=_R2_AT_ZERO[loss.kind],
        r4_at_zero=_R4_AT_ZERO[loss.kind],
        loss=loss,
    )


def r_from_activation(act: Activation) -> RFunction:
    return RFunction(
        source="activation",
        kind=act.kind,
        r2_at_zero=_R2_AT_ZERO[act.kind],
        r4_at_zero=_R4_AT_ZERO[act.kind],
        activation=act,
    )


def r_function(source: str, kind: str) -> RFunction:
    """Build an RFunction from kind names (convenience for configs)."""
    if source == "loss":
        return r_from_loss(scalar_loss(kind))
    if source == "activation":
        return r_from_activation(activation(kind))
    raise DomainError(f"unknown r source {source!r}; expected 'loss' or 'activation'")


# ---------------------------------------------------------------------------
# inverse ratio function
# ---------------------------------------------------------------------------

R_HAT_TOL = 1e-12
_R_HAT_MAX_BRACKET = 1e3


def r_hat(rfn: RFunction, q: float) -> float:
    """The unique p >= 0 with r(p) = q, for q in (0, 1].

    Bracketing plus bisection to absolute tolerance ``R_HAT_TOL``.  Raises
    DomainError for q outside (0, 1] and NoRootError when no bracket exists
    within p <= 1e3 (a non-conforming r).
    """
    if not (0.0 < q <= 1.0):
        raise DomainError(f"r_hat requires q in (0, 1], got {q}")
    if q == 1.0:
        return 0.0
    hi = 1.0
    while rfn.eval(hi) > q:
        hi *= 2.0
        if hi > _R_HAT_MAX_BRACKET:
            raise NoRootError(
                f"no p <= {_R_HAT_MAX_BRACKET:g} with r(p) <= {q}; r ({rfn.label}) is not bell-shaped"
            )
    lo = 0.0
    while hi - lo > R_HAT_TOL:
        mid = 0.5 * (lo + hi)
        if rfn.eval(mid) >= q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Phase-I correction functions
# ---------------------------------------------------------------------------

def h_linear(rfn: RFunction, p: float) -> float:
    """Alignment offset for the two-layer linear family.

    h(p) = -(p r^3/r' + p^2 r^2)/2 away from 0, with limit -1/(2 r''(0)).
    """
    if rfn.source != "loss":
        raise DomainError("h_linear expects a loss-derived ratio function")
    if abs(p) < NEAR_ZERO_BAND:
        return -1.0 / (2.0 * rfn.r2_at_zero)
    r = rfn.eval(p)
    r1 = rfn.d1(p)
    return -0.5 * (p * r ** 3 / r1 + p * p * r * r)


def h_nonlinear(rfn: RFunction, p: float) -> float:
    """Alignment offset for the single-neuron nonlinear family.

    h(p) = -phi(p)^2 r(p)/(p r'(p)) away from 0, with limit -1/r''(0).
    """
    if rfn.source != "activation" or rfn.activation is None:
        raise DomainError("h_nonlinear expects an activation-derived ratio function")
    if abs(p) < NEAR_ZERO_BAND:
        return -1.0 / rfn.r2_at_zero
    phi = rfn.activation.eval(p)
    return -phi * phi * rfn.eval(p) / (p * rfn.d1(p))


# ---------------------------------------------------------------------------
# assumption validator
# ---------------------------------------------------------------------------

VALIDATION_GRID_POINTS = 2001
VALIDATION_GRID_HALF_WIDTH = 10.0
DECAY_CHECK_POINT = 50.0
# The losses decay like 1/p, so r(50) = 0.02; a 1e-3 threshold at p = 50
# would reject them.  0.05 plus monotone decrease captures the intent.
DECAY_THRESHOLD = 0.05
_MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    passed: bool
    worst_violation: float


@dataclass(frozen=True)
class AssumptionReport:
    source: str
    kind: str
    checks: tuple[ConditionCheck, ...]

    @property
    def conforming(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.checks if not c.passed)


def _fd2_fourth_order(f: Callable[[float], float], h: float) -> float:
    # 4th-order central stencil for f''(0)
    return (
        -f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)
    ) / (12.0 * h * h)


def _fd4(f: Callable[[float], float], h: float) -> float:
    # central stencil for f''''(0)
    return (f(-2.0 * h) - 4.0 * f(-h) + 6.0 * f(0.0) - 4.0 * f(h) + f(2.0 * h)) / h ** 4


def _monotone_violation(values: list[float], decreasing: bool) -> float:
    worst = 0.0
    for a, b in zip(values, values[1:]):
        diff = b - a if decreasing else a - b
        if diff > worst:
            worst = diff
    return worst


def validate_assumptions(rfn: RFunction) -> AssumptionReport:
    """Grid-check the bell-shape and monotonicity conditions behind the theory.

    Returns per-condition pass/fail with the worst violation magnitude; the
    grid is 2001 points on [-10, 10].
    """
    grid = np.linspace(-VALIDATION_GRID_HALF_WIDTH, VALIDATION_GRID_HALF_WIDTH,
                       VALIDATION_GRID_POINTS)
    pos = [float(z) for z in grid if z > 0.0]
    checks: list[ConditionCheck] = []

    def add(name: str, violation: float, *, tol: float = 0.0) -> None:
        v = float(violation)
        checks.append(ConditionCheck(name, v <= tol, 0.0 if v <= tol else v))

    # bell shape
    add("r-at-zero", abs(rfn.eval(0.0) - 1.0), tol=1e-12)
    even_worst = max(abs(rfn.eval(float(z)) - rfn.eval(float(-z))) for z in pos)
    add("r-even", even_worst, tol=1e-12)
    add("r-strictly-decreasing", max(rfn.d1(z) for z in pos), tol=-1e-15)
    decay = rfn.eval(DECAY_CHECK_POINT)
    decay_viol = max(decay - DECAY_THRESHOLD,
                     decay - rfn.eval(DECAY_CHECK_POINT / 2.0))
    add("r-decay", decay_viol)

    # stored curvature versus finite differences of eval
    fd2 = _fd2_fourth_order(rfn.eval, 1e-3)
    add("curvature-match",
        abs(rfn.r2_at_zero - fd2) / max(abs(rfn.r2_at_zero), 1.0), tol=1e-5)
    fd4 = _fd4(rfn.eval, 1e-2)
    add("quartic-match",
        abs(rfn.r4_at_zero - fd4) / max(abs(rfn.r4_at_zero), 1.0), tol=1e-2)

    # monotone-ratio conditions; evaluate on the positive half-grid and use
    # evenness/oddness of the quantities for the negative side
    def safe_ratio(num: float, den: float) -> float:
        if abs(den) < 1e-300:
            return math.inf
        return num / den

    v_vals = [safe_ratio(rfn.d1(z), rfn.eval(z) ** 2) for z in pos]
    v_full = [-x for x in reversed(v_vals)] + [0.0] + v_vals
    add("dr-over-r-squared-decreasing",
        _monotone_violation(v_full, decreasing=True), tol=_MONOTONE_SLACK)

    u_vals = [safe_ratio(z * rfn.d1(z), rfn.eval(z)) for z in pos]
    add("z-dr-over-r-monotone",
        _monotone_violation([0.0] + u_vals, decreasing=True), tol=_MONOTONE_SLACK)

    if rfn.r2_at_zero != 0.0:
        w0 = 1.0 / rfn.r2_at_zero
        w_vals = [safe_ratio(z * rfn.eval(z), rfn.d1(z)) for z in pos]
        add("z-r-over-dr-monotone",
            _monotone_violation([w0] + w_vals, decreasing=True), tol=_MONOTONE_SLACK)
    else:
        add("z-r-over-dr-monotone", math.inf)

    # underlying scalar model conditions
    if rfn.source == "loss" and rfn.loss is not None:
        loss = rfn.loss
        add("loss-even",
            max(abs(loss.eval(z) - loss.eval(-z)) for z in pos), tol=1e-12)
        add("loss-convex", max(-loss.d2(float(z)) for z in grid))
        add("loss-lipschitz",
            max(abs(loss.d1(float(z))) for z in grid) - 1.0, tol=1e-12)
        add("loss-unit-curvature", abs(loss.d2(0.0) - 1.0), tol=1e-12)
    elif rfn.source == "activation" and rfn.activation is not None:
        act = rfn.activation
        add("activation-odd",
            max(abs(act.eval(z) + act.eval(-z)) for z in pos), tol=1e-12)
        add("activation-increasing", max(-act.d1(float(z)) for z in grid), tol=-1e-15)
        add("activation-lipschitz",
            max(abs(act.d1(float(z))) for z in grid) - 1.0, tol=1e-12)
        add("activation-origin",
            max(abs(act.eval(0.0)), abs(act.d1(0.0) - 1.0)), tol=1e-12)
        add("activation-bounded",
            max(abs(act.eval(float(z))) for z in grid) - 1.0)
        try:
            z_half = r_hat(rfn, 0.5)
            add("half-level-slope", -(z_half * rfn.d1(z_half)) - 0.5)
        except NoRootError:
            add("half-level-slope", math.inf)

    return AssumptionReport(source=rfn.source, kind=rfn.kind, checks=tuple(checks))
