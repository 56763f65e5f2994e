"""One-parameter maps, exact 2-D recursions, orbits, and bifurcation sweeps.

The reduced state is (p, q): p is the network residual and q the normalized
inverse sharpness 2/(eta * ||grad f||^2).  Dropping the O(eta^2) feedback
yields the one-parameter family f_q(p) = p (1 - 2 r(p)/q); keeping it yields
the exact per-step recursions for the two analyzed model families, which this
module iterates, records, and classifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DivergenceError, DomainError
from .parallel import ordered_map
from .scalar_models import Activation, RFunction, _sech2, r_hat

__all__ = [
    "ReparamPoint",
    "StepRecord",
    "Trajectory",
    "OrbitReport",
    "BifurcationDiagram",
    "StopRule",
    "LinearStepper",
    "NonlinearStepper",
    "map_fq",
    "map_fq_derivative",
    "period_doubling_threshold",
    "classify_fixed_point",
    "step_linear",
    "step_nonlinear",
    "toy_gd_step",
    "toy_loss",
    "toy_grad",
    "toy_hessian",
    "eigmax_2x2",
    "simulate",
    "detect_period",
    "sweep_bifurcation",
    "TOY_MODELS",
]

# Monitor threshold for the "p never exactly zero while q < 1" hypothesis.
HYPOTHESIS_P_FLOOR = 1e-30


@dataclass(frozen=True)
class ReparamPoint:
    """Reduced (p, q) state; q must be positive and p finite."""

    p: float
    q: float

    def __post_init__(self):
        if not (self.q > 0.0) or not math.isfinite(self.q):
            raise DomainError(f"q must be positive and finite, got {self.q}")
        if not math.isfinite(self.p):
            raise DomainError(f"p must be finite, got {self.p}")

    def alignment(self, rfn: RFunction) -> float:
        """Alignment ratio s = q / r(p)."""
        return self.q / rfn.eval(self.p)


@dataclass(frozen=True)
class StepRecord:
    t: int
    point: ReparamPoint
    s: float
    loss: float
    sharpness: float | None = None
    lambda_tilde: float | None = None


@dataclass
class Trajectory:
    """Columnar per-step record of a run; NaN marks unsampled channels."""

    t: np.ndarray
    p: np.ndarray
    q: np.ndarray
    s: np.ndarray
    loss: np.ndarray
    sharpness: np.ndarray
    lambda_tilde: np.ndarray
    eta: float
    model_tag: str
    hypothesis_violations: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.t)
        for name in ("p", "q", "s", "loss", "sharpness", "lambda_tilde"):
            if len(getattr(self, name)) != n:
                raise DomainError(f"trajectory column {name} has mismatched length")
        if n and (self.t[0] != 0 or np.any(np.diff(self.t) <= 0)):
            raise DomainError("step indices must increase strictly from 0")
        if not self.eta > 0.0:
            raise DomainError("eta must be positive")

    def __len__(self) -> int:
        return len(self.t)

    def point(self, i: int) -> ReparamPoint:
        return ReparamPoint(float(self.p[i]), float(self.q[i]))

    def final(self) -> ReparamPoint:
        return self.point(len(self) - 1)

    def records(self) -> Iterator[StepRecord]:
        for i in range(len(self)):
            sh = float(self.sharpness[i])
            lt = float(self.lambda_tilde[i])
            yield StepRecord(
                t=int(self.t[i]),
                point=self.point(i),
                s=float(self.s[i]),
                loss=float(self.loss[i]),
                sharpness=None if math.isnan(sh) else sh,
                lambda_tilde=None if math.isnan(lt) else lt,
            )

    @staticmethod
    def from_columns(t, p, q, s, loss, sharpness=None, lambda_tilde=None, *,
                     eta: float, model_tag: str,
                     hypothesis_violations: tuple[int, ...] = ()) -> "Trajectory":
        n = len(t)
        nan = np.full(n, math.nan)
        return Trajectory(
            t=np.asarray(t, dtype=np.int64),
            p=np.asarray(p, dtype=float),
            q=np.asarray(q, dtype=float),
            s=np.asarray(s, dtype=float),
            loss=np.asarray(loss, dtype=float),
            sharpness=nan if sharpness is None else np.asarray(sharpness, dtype=float),
            lambda_tilde=nan if lambda_tilde is None else np.asarray(lambda_tilde, dtype=float),
            eta=eta,
            model_tag=model_tag,
            hypothesis_violations=hypothesis_violations,
        )


@dataclass(frozen=True)
class OrbitReport:
    """Detected cycle of a one-dimensional map; period None means aperiodic."""

    period: int | None
    points: tuple[float, ...]
    multiplier: float | None

    @property
    def is_periodic(self) -> bool:
        return self.period is not None


@dataclass(frozen=True)
class BifurcationDiagram:
    q_grid: tuple[float, ...]
    attractor_samples: tuple[tuple[float, ...], ...]
    burn_in: int
    samples_per_q: int

    def __post_init__(self):
        if len(self.attractor_samples) != len(self.q_grid):
            raise DomainError("one sample list per grid point required")


# ---------------------------------------------------------------------------
# the one-parameter map
# ---------------------------------------------------------------------------

def _slope_product(rfn: RFunction, p: float) -> float:
    """r(p) * p without the divide: l'(p) for losses, phi(p) phi'(p) otherwise."""
    if rfn.source == "loss":
        return rfn.loss.d1(p)
    act = rfn.activation
    return act.eval(p) * act.d1(p)


def map_fq(rfn: RFunction, q: float, p: float) -> float:
    """Evaluate f_q(p) = p (1 - 2 r(p)/q).

    Computed as p - 2 (r(p) p)/q with the product r(p) p taken directly from
    the source model; the exact recursions below share this form, so their
    eta = 0 degeneration matches bit-for-bit.
    """
    if not q > 0.0:
        raise DomainError(f"map_fq requires q > 0, got {q}")
    return p - (2.0 * _slope_product(rfn, p)) / q


def map_fq_derivative(rfn: RFunction, q: float, p: float) -> float:
    """d/dp of f_q at p: 1 - 2 (r(p) + p r'(p)) / q."""
    if not q > 0.0:
        raise DomainError(f"map_fq requires q > 0, got {q}")
    return 1.0 - 2.0 * (rfn.eval(p) + p * rfn.d1(p)) / q


_THRESHOLD_SCAN_MAX = 50.0
# A genuine crossing of the level is transversal; the convex losses approach
# -1 only asymptotically and float rounding would fake a touch without this.
_CROSSING_MARGIN = 1e-9


def period_doubling_threshold(rfn: RFunction) -> tuple[float, float]:
    """Largest p* with p r'(p)/r(p) > -1 on [0, p*], and c = r(p*).

    Returns (inf, 0.0) when the ratio never reaches -1 (convex-loss case).
    The ratio is decreasing in |p| for conforming r, so the first crossing is
    found by bisection.
    """
    def u(z: float) -> float:
        return z * rfn.d1(z) / rfn.eval(z)

    lo, hi = 0.0, None
    z = 1e-3
    while z <= _THRESHOLD_SCAN_MAX:
        if u(z) <= -1.0 - _CROSSING_MARGIN:
            hi = z
            break
        lo = z
        z *= 2.0
    if hi is None:
        return math.inf, 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if u(mid) > -1.0:
            lo = mid
        else:
            hi = mid
    p_star = 0.5 * (lo + hi)
    return p_star, rfn.eval(p_star)


STABLE_FIXED_POINT = "stable-fixed-point"
UNSTABLE_PERIOD_2 = "unstable-with-stable-period-2"
UNSTABLE_OTHER = "unstable-other"


def classify_fixed_point(rfn: RFunction, q: float) -> str:
    """Classify p = 0 for the map f_q.

    |f_q'(0)| = |1 - 2/q| makes the origin stable for q > 1.  For q < 1 the
    candidate period-2 orbit {+-r_hat(q)} is stable when its multiplier
    |1 + 2 r_hat(q) r'(r_hat(q))/q| is below 1, equivalently q above the
    period-doubling threshold c = r(p*).
    """
    if not q > 0.0:
        raise DomainError(f"classification requires q > 0, got {q}")
    if q > 1.0:
        return STABLE_FIXED_POINT
    if q == 1.0:
        return UNSTABLE_OTHER
    try:
        z = r_hat(rfn, q)
    except Exception:
        return UNSTABLE_OTHER
    multiplier = abs(1.0 + 2.0 * z * rfn.d1(z) / q)
    if multiplier < 1.0:
        return UNSTABLE_PERIOD_2
    return UNSTABLE_OTHER


# ---------------------------------------------------------------------------
# exact one-step recursions
# ---------------------------------------------------------------------------

def step_linear(rfn: RFunction, state: ReparamPoint, eta: float) -> ReparamPoint:
    """Exact (p, q) update of GD on the two-layer linear family.

    p' = [1 - 2 r/q + eta^2 p^2 r^2] p,
    q' = q / [1 - eta^2 p^2 r (2q - r)].

    With eta = 0 the p update reduces bit-for-bit to map_fq.  Raises
    DivergenceError when the q denominator is not positive.
    """
    if rfn.source != "loss":
        raise DomainError("step_linear expects a loss-derived ratio function")
    if eta < 0.0:
        raise DomainError("eta must be nonnegative")
    p, q = state.p, state.q
    r = rfn.eval(p)
    lp = rfn.loss.d1(p)  # = r(p) * p
    denom = 1.0 - (eta * lp) * (eta * p) * (2.0 * q - r)
    if denom <= 0.0:
        raise DivergenceError(
            f"q-update denominator {denom:.3e} <= 0 at (p={p:.6g}, q={q:.6g}, eta={eta:g})"
        )
    p_next = (p - (2.0 * lp) / q) + ((eta * lp) * (eta * lp)) * p
    return ReparamPoint(p_next, q / denom)


def step_nonlinear(act_rfn: RFunction, phi: Activation, state: ReparamPoint,
                   eta: float) -> ReparamPoint:
    """Exact (p, q) update of GD on the single-neuron nonlinear family.

    p' = (1 - 2 r/q) p,  q' = q / (1 - eta phi(p)^2)^2.  Requires
    eta phi(p)^2 < 1; otherwise DivergenceError.
    """
    if act_rfn.source != "activation" or act_rfn.activation is None:
        raise DomainError("step_nonlinear expects an activation-derived ratio function")
    if act_rfn.activation.kind != phi.kind:
        raise DomainError(
            f"ratio function was built from {act_rfn.kind!r}, got activation {phi.kind!r}"
        )
    if eta < 0.0:
        raise DomainError("eta must be nonnegative")
    p, q = state.p, state.q
    ph = phi.eval(p)
    shrink = 1.0 - eta * ph * ph
    if shrink <= 0.0:
        raise DivergenceError(
            f"eta * phi(p)^2 = {eta * ph * ph:.6g} >= 1 at (p={p:.6g}, q={q:.6g})"
        )
    # p (1 - 2 r(p)/q) evaluated through phi phi' directly; this skips the
    # divide-by-p round trip so the (x, y) <-> (p, q) bridge stays ulp-tight
    p_next = p - (2.0 * (ph * phi.d1(p))) / q
    return ReparamPoint(p_next, q / (shrink * shrink))


# ---------------------------------------------------------------------------
# toy two-dimensional objectives
# ---------------------------------------------------------------------------

TOY_MODELS = ("logcosh-xy", "sq-tanh", "sq-elu")


def _elu(x: float) -> float:
    return x if x >= 0.0 else math.expm1(x)


def _elu_d1(x: float) -> float:
    return 1.0 if x >= 0.0 else math.exp(x)


def toy_loss(model: str, x: float, y: float) -> float:
    if model == "logcosh-xy":
        a = abs(x * y)
        return a + math.log1p(math.exp(-2.0 * a)) - math.log(2.0)
    if model == "sq-tanh":
        return 0.5 * (math.tanh(x) * y) ** 2
    if model == "sq-elu":
        return 0.5 * (_elu(x) * y) ** 2
    raise DomainError(f"unknown toy model {model!r}; expected one of {TOY_MODELS}")


def toy_grad(model: str, x: float, y: float) -> tuple[float, float]:
    if model == "logcosh-xy":
        t = math.tanh(x * y)
        return t * y, t * x
    if model == "sq-tanh":
        ph = math.tanh(x)
        d1 = _sech2(x)
        return (ph * d1) * (y * y), ph * ph * y
    if model == "sq-elu":
        ph = _elu(x)
        d1 = _elu_d1(x)
        return (ph * d1) * (y * y), ph * ph * y
    raise DomainError(f"unknown toy model {model!r}; expected one of {TOY_MODELS}")


def toy_gd_step(model: str, x: float, y: float, eta: float) -> tuple[float, float]:
    """One exact gradient step on the toy objective (simultaneous update)."""
    gx, gy = toy_grad(model, x, y)
    return x - eta * gx, y - eta * gy


def toy_hessian(model: str, x: float, y: float) -> np.ndarray:
    if model == "logcosh-xy":
        t = math.tanh(x * y)
        s2 = _sech2(x * y)
        return np.array([
            [s2 * y * y, s2 * x * y + t],
            [s2 * x * y + t, s2 * x * x],
        ])
    if model in ("sq-tanh", "sq-elu"):
        if model == "sq-tanh":
            ph = math.tanh(x)
            d1 = _sech2(x)
            d2 = -2.0 * ph * d1
        else:
            ph, d1 = _elu(x), _elu_d1(x)
            d2 = 0.0 if x >= 0.0 else math.exp(x)
        return np.array([
            [(ph * d2 + d1 * d1) * y * y, 2.0 * ph * d1 * y],
            [2.0 * ph * d1 * y, ph * ph],
        ])
    raise DomainError(f"unknown toy model {model!r}; expected one of {TOY_MODELS}")


def eigmax_2x2(h: np.ndarray) -> float:
    """Largest eigenvalue of a symmetric 2x2 matrix by the quadratic formula."""
    tr = h[0, 0] + h[1, 1]
    det = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    disc = max(tr * tr - 4.0 * det, 0.0)
    return 0.5 * (tr + math.sqrt(disc))


# ---------------------------------------------------------------------------
# steppers and simulation
# ---------------------------------------------------------------------------

class LinearStepper:
    """Exact recursion of the two-layer linear family for a given loss."""

    def __init__(self, rfn: RFunction, eta: float):
        if rfn.source != "loss" or rfn.loss is None:
            raise DomainError("LinearStepper requires a loss-derived ratio function")
        self.rfn = rfn
        self.eta = eta
        self.model_tag = f"linear/{rfn.kind}"

    def step(self, state: ReparamPoint) -> ReparamPoint:
        return step_linear(self.rfn, state, self.eta)

    def s(self, state: ReparamPoint) -> float:
        return state.alignment(self.rfn)

    def loss(self, state: ReparamPoint) -> float:
        return self.rfn.loss.eval(state.p)

    def sharpness(self, state: ReparamPoint) -> float:
        # closed-form largest Hessian eigenvalue of the single-neuron
        # realization: trace and determinant depend only on (p, q, eta)
        p, q = state.p, state.q
        l1 = self.rfn.loss.d1(p)
        l2 = self.rfn.loss.d2(p)
        tr = l2 * 2.0 / (self.eta * q)
        det = l2 * l2 * p * p - (l2 * p + l1) ** 2
        disc = max(tr * tr - 4.0 * det, 0.0)
        return 0.5 * (tr + math.sqrt(disc))


class NonlinearStepper:
    """Exact recursion of the single-neuron nonlinear family (squared loss)."""

    def __init__(self, rfn: RFunction, eta: float):
        if rfn.source != "activation" or rfn.activation is None:
            raise DomainError("NonlinearStepper requires an activation-derived ratio function")
        self.rfn = rfn
        self.phi = rfn.activation
        self.eta = eta
        self.model_tag = f"nonlinear/{rfn.kind}"

    def step(self, state: ReparamPoint) -> ReparamPoint:
        return step_nonlinear(self.rfn, self.phi, state, self.eta)

    def s(self, state: ReparamPoint) -> float:
        return state.alignment(self.rfn)

    def loss(self, state: ReparamPoint) -> float:
        # L = phi(p)^2 y^2 / 2 with y^2 = 2/(eta q)
        ph = self.phi.eval(state.p)
        return ph * ph / (self.eta * state.q)

    def sharpness(self, state: ReparamPoint) -> float:
        p, q = state.p, state.q
        ph = self.phi.eval(p)
        d1 = self.phi.d1(p)
        d2 = self.phi.d2(p)
        y2 = 2.0 / (self.eta * q)
        a = (ph * d2 + d1 * d1) * y2
        c = ph * ph
        tr = a + c
        det = a * c - 4.0 * ph * ph * d1 * d1 * y2
        disc = max(tr * tr - 4.0 * det, 0.0)
        return 0.5 * (tr + math.sqrt(disc))


@dataclass(frozen=True)
class StopRule:
    """Early-stop criteria for simulate.

    The run ends after ``patience`` consecutive steps with |p| < p_tol and
    |q - q_prev| < q_tol, or when q exceeds ``q_exceeds`` (when set), or at
    max_steps, whichever comes first.
    """

    p_tol: float = 1e-12
    q_tol: float = 1e-14
    patience: int = 10
    q_exceeds: float | None = None


def simulate(stepper, state0: ReparamPoint, eta: float, max_steps: int,
             stop: StopRule | None = None, *, sharpness_every: int = 0) -> Trajectory:
    """Iterate a stepper from ``state0``, recording every step.

    ``sharpness_every = k`` samples the closed-form sharpness channel at
    every k-th step (0 disables it).  Divergence inside the stepper is
    re-raised annotated with the step index.  Steps where q < 1 while
    |p| < 1e-30 are flagged (they would void the phase-analysis hypothesis).
    """
    if max_steps < 1:
        raise DomainError("max_steps must be >= 1")
    if stop is None:
        stop = StopRule()
    ts, ps, qs, ss, losses, sharps = [0], [state0.p], [state0.q], \
        [stepper.s(state0)], [stepper.loss(state0)], [math.nan]
    if sharpness_every:
        sharps[0] = stepper.sharpness(state0)
    violations: list[int] = []
    state = state0
    quiet = 0
    for t in range(1, max_steps + 1):
        try:
            new = stepper.step(state)
        except DivergenceError as err:
            raise DivergenceError(str(err), step=t) from None
        dq = abs(new.q - state.q)
        state = new
        ts.append(t)
        ps.append(state.p)
        qs.append(state.q)
        ss.append(stepper.s(state))
        losses.append(stepper.loss(state))
        sharps.append(stepper.sharpness(state)
                      if sharpness_every and t % sharpness_every == 0 else math.nan)
        if state.q < 1.0 and abs(state.p) < HYPOTHESIS_P_FLOOR:
            violations.append(t)
        if stop.q_exceeds is not None and state.q > stop.q_exceeds:
            break
        if abs(state.p) < stop.p_tol and dq < stop.q_tol:
            quiet += 1
            if quiet >= stop.patience:
                break
        else:
            quiet = 0
    return Trajectory.from_columns(
        ts, ps, qs, ss, losses, sharps,
        eta=eta, model_tag=stepper.model_tag,
        hypothesis_violations=tuple(violations),
    )


# ---------------------------------------------------------------------------
# orbit detection
# ---------------------------------------------------------------------------

DEFAULT_PERIOD_TOL = 1e-8
DEFAULT_MAX_PERIOD = 64


def detect_period(traj_tail: Sequence[float], tol: float = DEFAULT_PERIOD_TOL,
                  max_period: int = DEFAULT_MAX_PERIOD,
                  rfn: RFunction | None = None,
                  q: float | None = None) -> OrbitReport:
    """Find the smallest period k with |x[t+k] - x[t]| <= tol across the tail.

    Needs at least 4 * max_period samples.  When ``rfn`` and ``q`` are given,
    the orbit multiplier prod |f_q'(x_j)| over one cycle is reported.
    """
    tail = [float(v) for v in traj_tail]
    if len(tail) < 4 * max_period:
        raise DomainError(
            f"need at least {4 * max_period} samples to certify periods up to {max_period}"
        )
    for k in range(1, max_period + 1):
        if all(abs(tail[i + k] - tail[i]) <= tol for i in range(len(tail) - k)):
            points = tuple(tail[-k:])
            multiplier = None
            if rfn is not None and q is not None:
                multiplier = 1.0
                for z in points:
                    multiplier *= abs(map_fq_derivative(rfn, q, z))
            return OrbitReport(period=k, points=points, multiplier=multiplier)
    return OrbitReport(period=None, points=(), multiplier=None)


# ---------------------------------------------------------------------------
# bifurcation sweep
# ---------------------------------------------------------------------------

def _sweep_one(args: tuple[RFunction, float, int, int, float]) -> tuple[float, ...]:
    rfn, q, burn_in, samples, p0 = args
    if rfn.source == "loss":
        g = rfn.loss.d1
    else:
        act = rfn.activation
        ge, gd = act.eval, act.d1

        def g(z: float) -> float:
            return ge(z) * gd(z)

    p = p0
    for _ in range(burn_in):
        p = p - (2.0 * g(p)) / q
    out = []
    for _ in range(samples):
        p = p - (2.0 * g(p)) / q
        out.append(p)
    return tuple(out)


def sweep_bifurcation(rfn: RFunction, q_grid: Sequence[float], burn_in: int = 10_000,
                      samples: int = 256, p0: float = 0.5,
                      workers: int = 1) -> BifurcationDiagram:
    """Iterate f_q past burn-in for each q and keep the next ``samples`` points.

    Grid points are independent; with ``workers`` > 1 they are distributed
    across processes and re-assembled in grid order, so the result does not
    depend on the worker count.
    """
    qs = [float(q) for q in q_grid]
    if not qs:
        raise DomainError("q_grid must be nonempty")
    if any(q <= 0.0 for q in qs):
        raise DomainError("all grid q values must be positive")
    if burn_in < 0 or samples < 1:
        raise DomainError("burn_in must be >= 0 and samples >= 1")
    tasks = [(rfn, q, burn_in, samples, p0) for q in qs]
    results = ordered_map(_sweep_one, tasks, workers=workers)
    return BifurcationDiagram(
        q_grid=tuple(qs),
        attractor_samples=tuple(results),
        burn_in=burn_in,
        samples_per_q=samples,
    )
