"""Executable verdicts for the quantitative claims about the two families.

Each check compares measured trajectory quantities against the theory's
predicted values, at frozen tolerances.  Order-of-magnitude remainders are
turned into hard bands via multiplier constants calibrated once against this
package's own runs and fixed below; they are configuration, not fit
parameters.  Checks refuse the elu and linear activations: those are carried
for empirical sweeps only and satisfy none of the standing assumptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .reparam_dynamics import Trajectory
from .scalar_models import (
    CONFORMING_R_KINDS,
    Activation,
    RFunction,
    h_linear,
    h_nonlinear,
    r_hat,
)

__all__ = [
    "RegimeConstants",
    "TheoremVerdict",
    "regime_constants",
    "check_gradient_flow",
    "measure_phase1",
    "check_limiting_q",
    "lambda_tilde",
    "annotate_lambda_tilde",
    "check_progressive_sharpening",
    "check_sharpness_sandwich_nonlinear",
    "fit_order",
    "PHASE1_TOL_MULT",
    "LIMIT_RESID_MULT",
    "TB_LOWER_CONST",
    "PS_GAP_MULT_LINEAR",
    "PS_GAP_CONST_NONLINEAR",
]

FAMILIES = ("linear", "nonlinear")

# Frozen big-O multipliers (calibrated on this package's own reference runs).
PHASE1_TOL_MULT = 12.0        # |s - 1 - h(p) eta^k| <= mult * eta^(k+2)
LIMIT_RESID_MULT = 2.0        # |q* - predicted| <= mult * eta^(k+2)
TB_LOWER_CONST = 5.0          # t_b >= const * (1 - q0) * eta^(-k)
PS_GAP_MULT_LINEAR = 10.0     # |sharpness - lambda_tilde| <= 1 + mult * eta
PS_GAP_CONST_NONLINEAR = 5.0  # |sharpness - lambda_tilde| <= const

_CONVERGENCE_P_TOL = 1e-8
_MONOTONE_REL_TOL = 1e-12


def _require_conforming(rfn: RFunction) -> None:
    if rfn.kind not in CONFORMING_R_KINDS:
        raise DomainError(
            f"theory checks require a conforming ratio function; {rfn.label} is not "
            "(elu and linear are carried for empirical sweeps only)")


def _require_family(family: str) -> None:
    if family not in FAMILIES:
        raise DomainError(f"family must be one of {FAMILIES}, got {family!r}")


def _order(family: str) -> int:
    # eta-order k of the alignment offset: 2 for the linear family, 1 for
    # the nonlinear one
    return 2 if family == "linear" else 1


@dataclass(frozen=True)
class TheoremVerdict:
    name: str
    measured: dict[str, float]
    predicted: dict[str, float]
    tolerance: float
    passed: bool
    status: str  # pass | fail | inapplicable | conditional-pass
    detail: str = ""


def _verdict(name: str, *, measured: dict, predicted: dict, tolerance: float,
             ok: bool, conditional: bool = False, detail: str = "") -> TheoremVerdict:
    if ok:
        status = "conditional-pass" if conditional else "pass"
    else:
        status = "fail"
    return TheoremVerdict(name, dict(measured), dict(predicted), tolerance,
                          ok, status, detail)


def _inapplicable(name: str, reason: str, measured: dict | None = None) -> TheoremVerdict:
    return TheoremVerdict(name, dict(measured or {}), {}, 0.0, False,
                          "inapplicable", reason)


# ---------------------------------------------------------------------------
# regime constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeConstants:
    """Stability thresholds of the alignment analysis.

    z0 and z1 are where z r'(z)/r(z) crosses -1/2 and -1 (z1 is inf for the
    convex losses).  ``c0`` is the family formula max{r(z0), 1/2} (linear)
    or max{r(z0), r(z1) + 1/2} (nonlinear); ``q0_gate`` = max{r(z0), 1/2} is
    the floor actually used to gate phase measurements, since for tanh the
    nonlinear formula exceeds 1 and would admit no initialization at all.
    """

    z0: float
    z1: float
    c0: float
    delta: float
    q0_gate: float

    @property
    def z1_finite(self) -> bool:
        return math.isfinite(self.z1)


_U_SCAN_MAX = 50.0
# Transversal-crossing margin; the convex losses approach -1 asymptotically
# and would otherwise register a fake touch once float resolution runs out.
_CROSSING_MARGIN = 1e-9


def _u_crossing(rfn: RFunction, level: float) -> float:
    """First z > 0 where z r'(z)/r(z) = level; inf when never reached.

    The ratio is decreasing on z > 0 for validated r, so bisection applies.
    """
    def u(z: float) -> float:
        return z * rfn.d1(z) / rfn.eval(z)

    lo = 0.0
    hi = None
    z = 1e-3
    while z <= _U_SCAN_MAX:
        if u(z) <= level - _CROSSING_MARGIN:
            hi = z
            break
        lo = z
        z *= 2.0
    if hi is None:
        return math.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if u(mid) > level:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def regime_constants(rfn: RFunction, family: str, delta: float) -> RegimeConstants:
    _require_conforming(rfn)
    _require_family(family)
    z0 = _u_crossing(rfn, -0.5)
    z1 = _u_crossing(rfn, -1.0)
    r_z0 = rfn.eval(z0)
    gate = max(r_z0, 0.5)
    if family == "linear":
        c0 = gate
    else:
        r_z1 = rfn.eval(z1) if math.isfinite(z1) else 0.0
        c0 = max(r_z0, r_z1 + 0.5)
    if not (0.0 < delta < 1.0 - gate):
        raise DomainError(
            f"delta must lie in (0, {1.0 - gate:.6g}) for this ratio function, got {delta}")
    return RegimeConstants(z0=z0, z1=z1, c0=c0, delta=delta, q0_gate=gate)


# ---------------------------------------------------------------------------
# gradient-flow regime
# ---------------------------------------------------------------------------

def infer_family(traj: Trajectory) -> str:
    tag = traj.model_tag
    if tag.startswith("linear/") or "/linear/" in tag:
        return "linear"
    if tag.startswith("nonlinear/"):
        return "nonlinear"
    raise DomainError(
        f"cannot infer theory family from model tag {tag!r}; pass family explicitly")


def check_gradient_flow(traj: Trajectory, q0: float, eta: float, rfn: RFunction,
                        family: str | None = None) -> TheoremVerdict:
    """Verify q0 <= q* <= exp(C eta^k) q0 with the explicit constant C."""
    _require_conforming(rfn)
    family = family or infer_family(traj)
    _require_family(family)
    name = f"gradient-flow-sandwich[{family}]"
    r1 = rfn.eval(1.0)
    if family == "linear":
        eta_ok = 0.0 < eta < 2.0 / 33.0
        q_lo, q_hi = 2.0 / (2.0 - eta), min(1.0 / (16.0 * eta), r1 / (2.0 * eta))
        gap = min(2.0 * (q0 - 1.0) / q0, r1 / (2.0 * q0))
        exponent = 8.0 * q0 * eta * eta / gap if gap > 0 else math.inf
    else:
        eta_ok = 0.0 < eta < r1 / (2.0 * (r1 + 2.0))
        q_lo, q_hi = 1.0 / (1.0 - 2.0 * eta), r1 / (4.0 * eta)
        gap = min(2.0 * (q0 - 1.0) / q0, r1 / q0)
        exponent = 2.0 * eta / gap if gap > 0 else math.inf
    if not eta_ok:
        return _inapplicable(name, f"eta={eta:g} outside the admissible range")
    if not (q_lo < q0 < q_hi):
        return _inapplicable(
            name, f"q0={q0:g} outside the admissible interval ({q_lo:.6g}, {q_hi:.6g})")
    p_end = float(traj.p[-1])
    q_star = float(traj.q[-1])
    if abs(p_end) > _CONVERGENCE_P_TOL:
        return _verdict(name, measured={"p_end": p_end, "q_star": q_star},
                        predicted={}, tolerance=0.0, ok=False,
                        detail="trajectory did not converge")
    bound = math.exp(exponent) * q0
    ok = (q0 <= q_star * (1.0 + 1e-14)) and (q_star <= bound)
    return _verdict(
        name,
        measured={"q_star": q_star, "slack_lower": q_star - q0,
                  "slack_upper": bound - q_star},
        predicted={"lower": q0, "upper": bound, "growth_constant": exponent},
        tolerance=0.0,
        ok=ok,
        conditional=bool(traj.hypothesis_violations),
    )


# ---------------------------------------------------------------------------
# Phase I: alignment entry time and residual band
# ---------------------------------------------------------------------------

def _phase1_offsets(traj: Trajectory, rfn: RFunction, family: str) -> np.ndarray:
    h = h_linear if family == "linear" else h_nonlinear
    k = _order(family)
    eta_k = traj.eta ** k
    return np.array([abs(s - 1.0 - h(rfn, p) * eta_k)
                     for s, p in zip(traj.s, traj.p)])


def measure_phase1(traj: Trajectory, rfn: RFunction, eta: float, family: str,
                   tol_mult: float = PHASE1_TOL_MULT,
                   delta: float = 0.05) -> TheoremVerdict:
    """Find the band-entry step t_a and verify the band holds while q <= 1.

    The band is |s_t - 1 - h(p_t) eta^k| <= tol_mult * eta^(k+2) with k = 2
    for the linear family and k = 1 for the nonlinear one.
    """
    _require_conforming(rfn)
    _require_family(family)
    name = f"phase1-alignment[{family}]"
    consts = regime_constants(rfn, family, delta)
    q0 = float(traj.q[0])
    if not (consts.q0_gate < q0 < 1.0 - delta):
        return _inapplicable(
            name,
            f"q0={q0:.6g} outside the admissible interval "
            f"({consts.q0_gate:.6g}, {1.0 - delta:.6g})")
    k = _order(family)
    band = tol_mult * eta ** (k + 2)
    resid = _phase1_offsets(traj, rfn, family)
    inside = np.flatnonzero(resid <= band)
    if len(inside) == 0:
        return _verdict(name,
                        measured={"min_residual": float(resid.min()),
                                  "max_residual": float(resid.max())},
                        predicted={"band": band}, tolerance=band, ok=False,
                        detail="residual band never entered")
    t_a = int(traj.t[inside[0]])
    active = (traj.t >= t_a) & (traj.q <= 1.0)
    worst = float(resid[active].max()) if np.any(active) else 0.0
    ok = worst <= band
    return _verdict(
        name,
        measured={"t_a": float(t_a), "worst_residual_after": worst},
        predicted={"band": band},
        tolerance=band,
        ok=ok,
        conditional=bool(traj.hypothesis_violations),
        detail="" if ok else "residual left the band after entry",
    )


# ---------------------------------------------------------------------------
# Phase II: crossing step and limiting q
# ---------------------------------------------------------------------------

def check_limiting_q(traj: Trajectory, rfn: RFunction, eta: float,
                     family: str) -> TheoremVerdict:
    """Verify q* = 1 - eta^2/(2 r''(0)) (linear) or 1 - eta/r''(0) (nonlinear).

    Also reports the crossing step t_b (last step with q <= 1) and checks it
    against the calibrated lower bound.
    """
    _require_conforming(rfn)
    _require_family(family)
    name = f"phase2-limiting-q[{family}]"
    q0 = float(traj.q[0])
    if not q0 < 1.0:
        return _inapplicable(name, f"q0={q0:.6g} is not below 1 (not the oscillatory regime)")
    p_end, q_star = float(traj.p[-1]), float(traj.q[-1])
    if abs(p_end) > _CONVERGENCE_P_TOL or q_star <= 1.0:
        return _verdict(name, measured={"p_end": p_end, "q_star": q_star},
                        predicted={}, tolerance=0.0, ok=False,
                        detail="trajectory did not converge past the threshold")
    k = _order(family)
    r2 = rfn.r2_at_zero
    predicted = 1.0 - eta ** 2 / (2.0 * r2) if family == "linear" else 1.0 - eta / r2
    residual = abs(q_star - predicted)
    tol = LIMIT_RESID_MULT * eta ** (k + 2)
    below = np.flatnonzero(traj.q <= 1.0)
    t_b = float(traj.t[below[-1]]) if len(below) else 0.0
    t_b_floor = TB_LOWER_CONST * (1.0 - q0) * eta ** (-k)
    ok = residual <= tol and t_b >= t_b_floor
    return _verdict(
        name,
        measured={"q_star": q_star, "residual": residual, "t_b": t_b},
        predicted={"q_star": predicted, "t_b_floor": t_b_floor},
        tolerance=tol,
        ok=ok,
        conditional=bool(traj.hypothesis_violations),
        detail="" if ok else "limiting value or crossing step out of bounds",
    )


# ---------------------------------------------------------------------------
# progressive sharpening
# ---------------------------------------------------------------------------

def lambda_tilde(rfn: RFunction, q: float, eta: float) -> float:
    """Theorem sharpness predictor: (1 + r_hat(q) r'(r_hat(q))/q) 2/eta for
    q <= 1 and 2/eta above; continuous at q = 1."""
    _require_conforming(rfn)
    if not q > 0.0:
        raise DomainError(f"lambda_tilde requires q > 0, got {q}")
    if not eta > 0.0:
        raise DomainError("eta must be positive")
    if q > 1.0:
        return 2.0 / eta
    z = r_hat(rfn, q)
    return (1.0 + z * rfn.d1(z) / q) * 2.0 / eta


def annotate_lambda_tilde(traj: Trajectory, rfn: RFunction) -> Trajectory:
    """Copy of the trajectory with the lambda_tilde channel filled at every step."""
    values = np.array([lambda_tilde(rfn, float(q), traj.eta) for q in traj.q])
    return Trajectory(
        t=traj.t, p=traj.p, q=traj.q, s=traj.s, loss=traj.loss,
        sharpness=traj.sharpness, lambda_tilde=values,
        eta=traj.eta, model_tag=traj.model_tag,
        hypothesis_violations=traj.hypothesis_violations,
    )


def check_progressive_sharpening(traj: Trajectory, rfn: RFunction, eta: float,
                                 t_a: int, family: str = "linear",
                                 gap_mult: float = PS_GAP_MULT_LINEAR,
                                 gap_const: float = PS_GAP_CONST_NONLINEAR) -> TheoremVerdict:
    """Assert lambda_tilde(q_t) is nondecreasing and tracks measured sharpness.

    Monotonicity is exact (up to 1e-12 relative): q_t is monotone and the
    predictor is monotone in q.  The tracking bound for recorded sharpness at
    steps t >= t_a is 1 + gap_mult * eta for the linear family and the flat
    constant gap_const for the nonlinear one.
    """
    _require_conforming(rfn)
    _require_family(family)
    name = f"progressive-sharpening[{family}]"
    sampled = np.flatnonzero(~np.isnan(traj.sharpness))
    if len(sampled) == 0:
        return _inapplicable(name, "trajectory carries no sharpness samples")
    lt = np.array([lambda_tilde(rfn, float(q), eta) for q in traj.q])
    drops = np.diff(lt) < -_MONOTONE_REL_TOL * np.abs(lt[:-1])
    monotone = not bool(np.any(drops))
    bound = 1.0 + gap_mult * eta if family == "linear" else gap_const
    late = sampled[traj.t[sampled] >= t_a]
    if len(late) == 0:
        return _inapplicable(name, f"no sharpness samples at or after t_a={t_a}")
    gaps = np.abs(traj.sharpness[late] - lt[late])
    worst_i = int(late[int(np.argmax(gaps))])
    worst = float(gaps.max())
    ok = monotone and worst <= bound
    detail = ""
    if not monotone:
        detail = f"lambda_tilde decreased at step {int(traj.t[1:][drops][0])}"
    elif not ok:
        detail = f"tracking gap {worst:.4g} exceeds {bound:.4g} at step {int(traj.t[worst_i])}"
    return _verdict(
        name,
        measured={"worst_gap": worst, "worst_step": float(traj.t[worst_i]),
                  "monotone": float(monotone)},
        predicted={"gap_bound": bound},
        tolerance=bound,
        ok=ok,
        conditional=bool(traj.hypothesis_violations),
        detail=detail,
    )


# ---------------------------------------------------------------------------
# sharpness sandwich for the single-neuron nonlinear model
# ---------------------------------------------------------------------------

def check_sharpness_sandwich_nonlinear(x: float, y: float, act: Activation,
                                       rfn: RFunction) -> TheoremVerdict:
    """Check (r + x r') y^2 <= lambda_max <= (r + x r') y^2 + 4 x^2 r/(r + x r')
    on the explicit 2x2 Hessian of (phi(x) y)^2 / 2."""
    _require_conforming(rfn)
    if rfn.source != "activation" or rfn.activation is None or rfn.kind != act.kind:
        raise DomainError("rfn must be derived from the given activation")
    name = "sharpness-sandwich[nonlinear]"
    r = rfn.eval(x)
    curv = r + x * rfn.d1(x)
    if curv < 0.0:
        return _inapplicable(name, f"r(x) + x r'(x) = {curv:.6g} < 0 at x={x:g}")
    ph, d1, d2 = act.eval(x), act.d1(x), act.d2(x)
    hess = np.array([
        [(ph * d2 + d1 * d1) * y * y, 2.0 * ph * d1 * y],
        [2.0 * ph * d1 * y, ph * ph],
    ])
    tr = hess[0, 0] + hess[1, 1]
    det = hess[0, 0] * hess[1, 1] - hess[0, 1] * hess[1, 0]
    lam = 0.5 * (tr + math.sqrt(max(tr * tr - 4.0 * det, 0.0)))
    lower = curv * y * y
    upper = lower + (4.0 * x * x * r / curv if curv > 0.0 else 0.0)
    slack = 1e-12 * max(1.0, abs(lam))
    ok = (lower - slack <= lam) and (lam <= upper + slack)
    return _verdict(
        name,
        measured={"lambda_max": lam},
        predicted={"lower": lower, "upper": upper},
        tolerance=slack,
        ok=ok,
    )


# ---------------------------------------------------------------------------
# order fitting
# ---------------------------------------------------------------------------

def fit_order(pairs) -> float:
    """Least-squares slope of log(residual) against log(eta)."""
    pts = [(float(e), float(r)) for e, r in pairs]
    if len(pts) < 3:
        raise DomainError("need at least 3 (eta, residual) pairs")
    if any(e <= 0.0 or r <= 0.0 for e, r in pts):
        raise DomainError("all eta and residual values must be positive")
    xs = np.log([e for e, _ in pts])
    ys = np.log([r for _, r in pts])
    return float(np.polyfit(xs, ys, 1)[0])
