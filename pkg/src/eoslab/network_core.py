"""From-scratch fully-connected network: forward, gradients, Hessian tools.

Layers are W1 (m x d), W2..W_{L-1} (m x m), and a final vector w_L (m,);
there are no biases.  Gradients come from hand-written reverse accumulation,
Hessian-vector products from forward-over-reverse tangents, and sharpness
from power iteration on the matrix-free product with a seeded start vector.
All randomness is drawn from numpy's PCG64 so that identical seeds give
bit-identical parameters on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .scalar_models import (
    Activation,
    ScalarLoss,
    act_d1_array,
    act_d2_array,
    act_eval_array,
    loss_d1_array,
    loss_d2_array,
    loss_eval_array,
)

__all__ = [
    "MlpParams",
    "DataBatch",
    "PowerIterConfig",
    "SharpnessEstimate",
    "forward",
    "forward_batch",
    "loss_and_grad",
    "gd_step",
    "hvp",
    "sharpness",
    "output_gradients",
    "gram_spectral_norm",
    "init_xavier",
    "exact_hessian_2layer_linear",
    "flatten_params",
    "unflatten_like",
    "single_point_batch",
    "gaussian_batch",
]

DENSE_HESSIAN_MAX_ORDER = 4096


def _lock(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MlpParams:
    """Immutable weights of an L-layer network with a named activation."""

    weights: tuple[np.ndarray, ...]
    activation: Activation

    def __post_init__(self):
        ws = tuple(_lock(w) for w in self.weights)
        object.__setattr__(self, "weights", ws)
        if len(ws) < 2:
            raise ShapeError("need at least two layers (one hidden matrix plus output vector)")
        if ws[0].ndim != 2:
            raise ShapeError("first layer must be an m x d matrix")
        m = ws[0].shape[0]
        for w in ws[1:-1]:
            if w.shape != (m, m):
                raise ShapeError(f"hidden layers must be {m} x {m}, got {w.shape}")
        if ws[-1].shape != (m,):
            raise ShapeError(f"output layer must be a vector of length {m}, got {ws[-1].shape}")
        if not all(np.all(np.isfinite(w)) for w in ws):
            raise DomainError("weights must be finite")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def width(self) -> int:
        return self.weights[0].shape[0]

    @property
    def din(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights)

    def with_weights(self, new_weights: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(tuple(new_weights), self.activation)


@dataclass(frozen=True)
class DataBatch:
    """Inputs X (n x d) and targets y (n,)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", _lock(np.atleast_2d(self.inputs)))
        object.__setattr__(self, "targets", _lock(np.atleast_1d(self.targets)))
        if self.inputs.ndim != 2 or self.targets.ndim != 1:
            raise ShapeError("inputs must be n x d and targets length n")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets")
        if self.inputs.shape[0] < 1:
            raise ShapeError("need at least one data point")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def single_point_batch(d: int, y: float) -> DataBatch:
    """The canonical single-point setup: x = e1 in R^d (unit norm)."""
    x = np.zeros(d)
    x[0] = 1.0
    return DataBatch(x[None, :], np.array([y]))


def gaussian_batch(n: int, d: int, seed: int) -> DataBatch:
    """Synthetic batch: rows of X i.i.d. N(0, I_d), targets i.i.d. N(0, 1)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return DataBatch(rng.standard_normal((n, d)), rng.standard_normal(n))


# ---------------------------------------------------------------------------
# forward / gradient / step
# ---------------------------------------------------------------------------

def _forward_pass(params: MlpParams, X: np.ndarray):
    """Return pre-activations Z_l and activations A_l for each hidden layer."""
    act = params.activation
    A = X
    zs, activ = [], [X]
    for W in params.weights[:-1]:
        Z = A @ W.T
        A = act_eval_array(act, Z)
        zs.append(Z)
        activ.append(A)
    f = activ[-1] @ params.weights[-1]
    return zs, activ, f


def forward_batch(params: MlpParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != params.din:
        raise ShapeError(f"inputs have dimension {X.shape[1]}, network expects {params.din}")
    return _forward_pass(params, X)[2]


def forward(params: MlpParams, x: np.ndarray) -> float:
    """Network output f(x; params) for a single input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.din,):
        raise ShapeError(f"input must have shape ({params.din},), got {x.shape}")
    return float(forward_batch(params, x[None, :])[0])


def loss_and_grad(params: MlpParams, batch: DataBatch, loss: ScalarLoss):
    """Mean loss over the batch and its exact gradient (structured like weights)."""
    if batch.inputs.shape[1] != params.din:
        raise ShapeError(
            f"batch dimension {batch.inputs.shape[1]} does not match network input {params.din}")
    n = batch.n
    act = params.activation
    zs, activ, f = _forward_pass(params, batch.inputs)
    e = f - batch.targets
    value = float(np.mean(loss_eval_array(loss, e)))
    c = loss_d1_array(loss, e) / n

    w_last = params.weights[-1]
    grads: list[np.ndarray] = [None] * params.depth
    grads[-1] = activ[-1].T @ c
    delta = c[:, None] * w_last[None, :] * act_d1_array(act, zs[-1])
    for l in range(params.depth - 2, -1, -1):
        grads[l] = delta.T @ activ[l]
        if l > 0:
            delta = (delta @ params.weights[l]) * act_d1_array(act, zs[l - 1])
    return value, grads


def gd_step(params: MlpParams, batch: DataBatch, loss: ScalarLoss, eta: float) -> MlpParams:
    """One full-batch gradient step with simultaneous layer updates."""
    _, grads = loss_and_grad(params, batch, loss)
    return params.with_weights([w - eta * g for w, g in zip(params.weights, grads)])


def output_gradients(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Per-sample gradients of the network output, flattened to (n, n_params).

    Flattening order: W1 row-major, ..., W_{L-1} row-major, then w_L.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    act = params.activation
    zs, activ, _ = _forward_pass(params, X)
    w_last = params.weights[-1]
    pieces: list[np.ndarray] = [None] * params.depth
    pieces[-1] = activ[-1]                       # d f / d w_L = a_{L-1}
    delta = w_last[None, :] * act_d1_array(act, zs[-1])
    for l in range(params.depth - 2, -1, -1):
        # per-sample gradient of f wrt W_l is outer(delta_l, a_{l-1})
        pieces[l] = np.einsum("ni,nj->nij", delta, activ[l]).reshape(n, -1)
        if l > 0:
            delta = (delta @ params.weights[l]) * act_d1_array(act, zs[l - 1])
    return np.concatenate(pieces, axis=1)


def flatten_params(arrays: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays])


def unflatten_like(params: MlpParams, vec: np.ndarray) -> list[np.ndarray]:
    if vec.shape != (params.n_params,):
        raise ShapeError(f"vector must have length {params.n_params}, got {vec.shape}")
    out, i = [], 0
    for w in params.weights:
        out.append(vec[i:i + w.size].reshape(w.shape))
        i += w.size
    return out


# ---------------------------------------------------------------------------
# Hessian-vector product (forward-over-reverse)
# ---------------------------------------------------------------------------

def hvp(params: MlpParams, batch: DataBatch, loss: ScalarLoss,
        vec: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Exact product of the loss Hessian with a weight-structured direction."""
    V = [np.asarray(v, dtype=float) for v in vec]
    if len(V) != params.depth or any(v.shape != w.shape for v, w in zip(V, params.weights)):
        raise ShapeError("direction must be shaped like the weights")
    n = batch.n
    act = params.activation
    X = batch.inputs
    w_last, v_last = params.weights[-1], V[-1]

    # forward pass with tangents
    zs, activ, _ = _forward_pass(params, X)
    RA = np.zeros_like(X)
    ras, rzs = [], []
    A = X
    for l, W in enumerate(params.weights[:-1]):
        RZ = RA @ W.T + A @ V[l].T
        A = activ[l + 1]
        RA = act_d1_array(act, zs[l]) * RZ
        rzs.append(RZ)
        ras.append(RA)
    f = activ[-1] @ w_last
    Rf = ras[-1] @ w_last + activ[-1] @ v_last

    e = f - batch.targets
    c = loss_d1_array(loss, e) / n
    Rc = loss_d2_array(loss, e) * Rf / n

    out: list[np.ndarray] = [None] * params.depth
    out[-1] = ras[-1].T @ c + activ[-1].T @ Rc

    phi1 = act_d1_array(act, zs[-1])
    phi2 = act_d2_array(act, zs[-1])
    delta = c[:, None] * w_last[None, :] * phi1
    Rdelta = (Rc[:, None] * w_last[None, :] + c[:, None] * v_last[None, :]) * phi1 \
        + c[:, None] * w_last[None, :] * phi2 * rzs[-1]
    for l in range(params.depth - 2, -1, -1):
        RA_prev = ras[l - 1] if l > 0 else np.zeros_like(X)
        out[l] = Rdelta.T @ activ[l] + delta.T @ RA_prev
        if l > 0:
            phi1 = act_d1_array(act, zs[l - 1])
            phi2 = act_d2_array(act, zs[l - 1])
            back = delta @ params.weights[l]
            Rdelta = (Rdelta @ params.weights[l] + delta @ V[l]) * phi1 \
                + back * phi2 * rzs[l - 1]
            delta = back * phi1
    return out


# ---------------------------------------------------------------------------
# sharpness by power iteration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerIterConfig:
    max_iters: int = 10_000
    rel_tol: float = 1e-11
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if not self.rel_tol > 0.0:
            raise DomainError("rel_tol must be positive")


@dataclass(frozen=True)
class SharpnessEstimate:
    value: float
    converged: bool
    iterations: int

    def __float__(self) -> float:
        return self.value


def _power_iterate(apply_h, v0: np.ndarray, cfg: PowerIterConfig, shift: float):
    """Rayleigh-quotient power iteration on H + shift*I; returns (ray, ok, iters)."""
    v = v0 / np.linalg.norm(v0)
    ray = math.inf
    for it in range(1, cfg.max_iters + 1):
        w = apply_h(v) + shift * v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0, True, it
        new_ray = float(v @ w)
        v = w / nrm
        if abs(new_ray - ray) < cfg.rel_tol * max(1.0, abs(new_ray)):
            return new_ray, True, it
        ray = new_ray
    return ray, False, cfg.max_iters


def sharpness(params: MlpParams, batch: DataBatch, loss: ScalarLoss,
              cfg: PowerIterConfig = PowerIterConfig()) -> SharpnessEstimate:
    """Largest eigenvalue of the loss Hessian via matrix-free power iteration.

    Converges on the eigenvalue of largest magnitude first; if that is
    negative (or the iteration stalls on a +-lambda tie) a spectral shift by
    the estimated norm is applied and the maximum eigenvalue recovered.
    """
    def apply_h(flat: np.ndarray) -> np.ndarray:
        return flatten_params(hvp(params, batch, loss, unflatten_like(params, flat)))

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    v0 = rng.standard_normal(params.n_params)
    ray, ok, iters = _power_iterate(apply_h, v0, cfg, shift=0.0)
    if ok and ray >= 0.0:
        return SharpnessEstimate(ray, True, iters)
    # negative-dominant or tie: shift spectrum into the positive cone
    sigma = 1.1 * abs(ray) + 1e-12
    ray2, ok2, iters2 = _power_iterate(apply_h, v0, cfg, shift=sigma)
    return SharpnessEstimate(ray2 - sigma, ok2, iters + iters2)


def gram_spectral_norm(params: MlpParams, batch: DataBatch) -> float:
    """Largest eigenvalue of the n x n Gram matrix of per-sample output grads.

    Equals the spectral norm of the parameter-space sum of outer products
    sum_i (grad f(x_i))^{x2}.
    """
    Phi = output_gradients(params, batch.inputs)
    gram = Phi @ Phi.T
    return float(np.linalg.eigvalsh(gram)[-1])


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_xavier(layer_dims: Sequence[int], act: Activation, gain: float,
                seed: int) -> MlpParams:
    """Uniform Xavier init scaled by ``gain``: W_ij ~ U(-a, a) per layer with
    a = gain * sqrt(6 / (fan_in + fan_out)).

    ``layer_dims`` is [d, m, ..., m, 1]; the trailing 1 is the scalar output.
    Identical (dims, gain, seed) give bit-identical weights (PCG64 stream).
    """
    dims = [int(v) for v in layer_dims]
    if len(dims) < 3:
        raise ShapeError("layer_dims must list input, hidden, and output sizes")
    if dims[-1] != 1:
        raise ShapeError("the network output is scalar; last layer dim must be 1")
    if gain < 0.0:
        raise DomainError("gain must be nonnegative")
    rng = np.random.Generator(np.random.PCG64(seed))
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = gain * math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
    weights[-1] = weights[-1][0]
    return MlpParams(tuple(weights), act)


# ---------------------------------------------------------------------------
# dense two-layer oracle
# ---------------------------------------------------------------------------

def exact_hessian_2layer_linear(U: np.ndarray, v: np.ndarray, x: np.ndarray,
                                loss: ScalarLoss, y: float = 0.0) -> np.ndarray:
    """Dense loss Hessian of l(v^T U x - y), order m(d+1), desk-scale only.

    Parameter ordering is (v, U by columns), under which the second-derivative
    block of the bilinear form is [[0, x^T], [x, 0]] (x) I_m.
    """
    U = np.asarray(U, dtype=float)
    v = np.asarray(v, dtype=float)
    x = np.asarray(x, dtype=float)
    m, d = U.shape
    if v.shape != (m,) or x.shape != (d,):
        raise ShapeError("inconsistent shapes for (U, v, x)")
    order = m * (d + 1)
    if order > DENSE_HESSIAN_MAX_ORDER:
        raise DomainError(
            f"dense Hessian order {order} exceeds the guard {DENSE_HESSIAN_MAX_ORDER}")
    p = float(v @ U @ x) - y
    g = np.concatenate([U @ x, np.kron(x, v)])
    block = np.zeros((d + 1, d + 1))
    block[0, 1:] = x
    block[1:, 0] = x
    bilinear = np.kron(block, np.eye(m))
    return loss.d2(p) * np.outer(g, g) + loss.d1(p) * bilinear
