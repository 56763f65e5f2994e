"""Reduced (p, q) coordinates read off live network state, and run recording.

The canonical map sends weights to (f(x) - y, 2/(eta ||grad f||^2)); the
generalized form aggregates batch residuals through a chosen statistic P and
normalizes by the spectral norm of the summed gradient outer products.
Extraction never mutates the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateReparamError, DomainError
from .network_core import (
    DataBatch,
    MlpParams,
    PowerIterConfig,
    forward,
    forward_batch,
    gd_step,
    gram_spectral_norm,
    loss_and_grad,
    output_gradients,
    sharpness,
)
from .reparam_dynamics import ReparamPoint, Trajectory
from .scalar_models import RFunction, ScalarLoss, loss_eval_array, r_from_loss

__all__ = [
    "Aggregator",
    "AGGREGATOR_KINDS",
    "canonical",
    "generalized",
    "TrainingRunSpec",
    "ReparamSpec",
    "extract_trajectory",
    "alignment_residual",
]

AGGREGATOR_KINDS = ("mean", "l1-norm", "l2-norm", "linf-norm")


@dataclass(frozen=True)
class Aggregator:
    """Residual-vector statistic P used by the generalized reparameterization."""

    kind: str

    def __post_init__(self):
        if self.kind not in AGGREGATOR_KINDS:
            raise DomainError(
                f"unknown aggregator {self.kind!r}; expected one of {AGGREGATOR_KINDS}")

    def apply(self, z: np.ndarray) -> float:
        if self.kind == "mean":
            return float(np.sum(z) / len(z))
        if self.kind == "l1-norm":
            return float(np.sum(np.abs(z)))
        if self.kind == "l2-norm":
            return float(np.linalg.norm(z))
        return float(np.max(np.abs(z)))


def canonical(params: MlpParams, x: np.ndarray, y: float, eta: float) -> ReparamPoint:
    """(p, q) = (f(x) - y, 2/(eta ||grad f(x)||^2)) at the current weights."""
    if not eta > 0.0:
        raise DomainError("eta must be positive")
    p = forward(params, x) - y
    g = output_gradients(params, np.asarray(x, dtype=float)[None, :])[0]
    g2 = float(g @ g)
    if g2 == 0.0:
        raise DegenerateReparamError("network output gradient vanished; q is undefined")
    return ReparamPoint(p, 2.0 / (eta * g2))


def generalized(params: MlpParams, batch: DataBatch, eta: float,
                aggregator: Aggregator = Aggregator("mean")) -> ReparamPoint:
    """Batch form: p = P(residuals), q = 2n/(eta ||sum_i (grad f_i)^{x2}||)."""
    if not eta > 0.0:
        raise DomainError("eta must be positive")
    residuals = forward_batch(params, batch.inputs) - batch.targets
    lam = gram_spectral_norm(params, batch)
    if lam == 0.0:
        raise DegenerateReparamError("all output gradients vanished; q is undefined")
    p = aggregator.apply(residuals)
    return ReparamPoint(p, 2.0 * batch.n / (eta * lam))


@dataclass(frozen=True)
class TrainingRunSpec:
    """Full-batch GD run description."""

    params0: MlpParams
    batch: DataBatch
    loss: ScalarLoss
    eta: float
    steps: int

    def __post_init__(self):
        if not self.eta > 0.0:
            raise DomainError("eta must be positive")
        if self.steps < 1:
            raise DomainError("steps must be >= 1")


@dataclass(frozen=True)
class ReparamSpec:
    """How to reduce network state while recording a run.

    ``sharpness_every`` = k samples the power-iteration sharpness at every
    k-th step (0 disables the channel; it dominates runtime at large width).
    """

    aggregator: Aggregator = Aggregator("mean")
    sharpness_every: int = 0
    power_iter: PowerIterConfig = field(default_factory=PowerIterConfig)


def extract_trajectory(run: TrainingRunSpec, spec: ReparamSpec = ReparamSpec()) -> Trajectory:
    """Train with gd_step for the requested steps, recording (p, q, s, loss).

    Single-point batches use the canonical map; larger batches the
    generalized one.  The alignment ratio s is taken against the ratio
    function induced by the training loss.
    """
    rfn = r_from_loss(run.loss)
    batch = run.batch
    single = batch.n == 1
    x0 = batch.inputs[0]
    y0 = float(batch.targets[0])

    def reduce_state(params: MlpParams) -> ReparamPoint:
        if single:
            return canonical(params, x0, y0, run.eta)
        return generalized(params, batch, run.eta, spec.aggregator)

    def batch_loss(params: MlpParams) -> float:
        residuals = forward_batch(params, batch.inputs) - batch.targets
        return float(np.mean(loss_eval_array(run.loss, residuals)))

    params = run.params0
    ts, ps, qs, ss, losses, sharps = [], [], [], [], [], []
    for t in range(run.steps + 1):
        pt = reduce_state(params)
        ts.append(t)
        ps.append(pt.p)
        qs.append(pt.q)
        ss.append(pt.alignment(rfn))
        losses.append(batch_loss(params))
        if spec.sharpness_every and t % spec.sharpness_every == 0:
            sharps.append(float(sharpness(params, batch, run.loss, spec.power_iter)))
        else:
            sharps.append(math.nan)
        if t < run.steps:
            params = gd_step(params, batch, run.loss, run.eta)
    tag = f"net/L{run.params0.depth}/{run.params0.activation.kind}/{run.loss.kind}"
    return Trajectory.from_columns(ts, ps, qs, ss, losses, sharps,
                                   eta=run.eta, model_tag=tag)


def alignment_residual(traj: Trajectory, rfn: RFunction) -> np.ndarray:
    """Per-step |q_t / r(p_t) - 1| against the given ratio function."""
    if len(traj) == 0:
        raise DomainError("trajectory is empty")
    return np.array([abs(q / rfn.eval(p) - 1.0) for p, q in zip(traj.p, traj.q)])
