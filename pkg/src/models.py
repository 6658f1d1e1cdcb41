"""Convex local models: L2-regularized linear SVM (hinge) and logistic regression.

Both objectives are written in the "lambda form"

    F(w, b) = mean_i loss(y_i * (w . x_i + b)) + lambda * ||w||^2,   y_i in {-1, +1}

with the bias left unregularized. Internally parameters travel as one flat
vector ``theta = [w..., b]`` and features carry a trailing column of ones.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from src.data import ClientDataset, Dataset
from src.errors import (ConfigError, DataError, DimensionMismatchError,
                        EmptyDatasetError, NumericalError, OptimumSearchError)
from src.metrics import TraceEntry, TrainingTrace

logger = logging.getLogger(__name__)

# --- CONFIGURATION ---
OPTIMUM_MAX_ITER = 50_000
OPTIMUM_GRAD_TOL = 1e-8
# Hinge optimum: stop once the best loss improves by less than the tolerance over this many steps.
HINGE_PATIENCE = 1_000
NOISE_BATCHES = 256


class ModelKind(str, Enum):
    SVM_HINGE = "svm_hinge"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class ParamVector:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        bias = float(self.bias)
        if not (np.all(np.isfinite(weights)) and np.isfinite(bias)):
            raise NumericalError("parameters contain NaN or Inf")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    @classmethod
    def zeros(cls, dim: int) -> "ParamVector":
        return cls(np.zeros(dim), 0.0)

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "ParamVector":
        return cls(theta[:-1], theta[-1])

    def as_array(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, payload: dict) -> "ParamVector":
        return cls(np.asarray(payload["weights"], dtype=np.float64), payload["bias"])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.bias == other.bias and np.array_equal(self.weights, other.weights)

    __hash__ = None


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    l2_strength: float
    learning_rate: float
    batch_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.l2_strength < 0:
            raise ConfigError(f"l2_strength must be >= 0, got {self.l2_strength}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @classmethod
    def from_cost_form(cls, kind: ModelKind | str, reg_strength: float, learning_rate: float,
                       batch_size: int = 1) -> "ModelSpec":
        """Convert 0.5 * ||w||^2 + C * mean(loss) trained at ``learning_rate``.

        Dividing that objective by C gives lambda = 1 / (2C) and an equivalent
        step of C * learning_rate.
        """
        return cls(kind, 1.0 / (2.0 * reg_strength), reg_strength * learning_rate, batch_size)

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "l2_strength": self.l2_strength,
                "learning_rate": self.learning_rate, "batch_size": self.batch_size}


# C = 1000 / 10000, batch size 1, eta = 0.0025 / 0.0005.
SVM_DEFAULTS = ModelSpec.from_cost_form(ModelKind.SVM_HINGE, reg_strength=1_000,
                                        learning_rate=2.5e-6)
LOGISTIC_DEFAULTS = ModelSpec.from_cost_form(ModelKind.LOGISTIC, reg_strength=10_000,
                                             learning_rate=5e-8)


@dataclass(frozen=True)
class ObjectiveStats:
    mu: float
    smooth_L: float
    sigma_k: tuple[float, ...]
    grad_bound_G: float
    local_opt_loss: tuple[float, ...]
    global_opt_loss: float
    z_per_client: tuple[float, ...]
    z_scalar: float
    # Minimum of the pooled objective (all clients' rows) and where it lies.
    pooled_opt_loss: float
    pooled_opt_params: ParamVector
    local_opt_params: tuple[ParamVector, ...] = field(repr=False)
    optimum_converged: tuple[bool, ...] = ()
    data_lipschitz: float = 0.0
    sample_counts: tuple[int, ...] = ()
    spec: ModelSpec | None = field(default=None, repr=False)
    pooled_data: Dataset | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mu > self.smooth_L:
            raise ConfigError(f"mu {self.mu} exceeds smoothness {self.smooth_L}")

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "smooth_L": self.smooth_L,
            "sigma_k": list(self.sigma_k),
            "grad_bound_G": self.grad_bound_G,
            "local_opt_loss": list(self.local_opt_loss),
            "global_opt_loss": self.global_opt_loss,
            "z_per_client": list(self.z_per_client),
            "z_scalar": self.z_scalar,
            "pooled_opt_loss": self.pooled_opt_loss,
            "optimum_converged": list(self.optimum_converged),
            "data_lipschitz": self.data_lipschitz,
            "sample_counts": list(self.sample_counts),
        }


def _augment(features: np.ndarray) -> np.ndarray:
    return np.hstack([features, np.ones((features.shape[0], 1))])


def _signed(labels: np.ndarray) -> np.ndarray:
    if not np.all((labels == 0) | (labels == 1)):
        raise DataError("models expect binary labels in {0, 1}")
    return 2.0 * labels - 1.0


def _check(p: ParamVector, d: Dataset) -> None:
    if d.n_rows == 0:
        raise EmptyDatasetError(f"{d.name}: no samples")
    if d.n_features != p.dim:
        raise DimensionMismatchError(f"{d.name} has {d.n_features} features, parameters have {p.dim}")


def _reg_mask(dim: int) -> np.ndarray:
    mask = np.ones(dim + 1)
    mask[-1] = 0.0
    return mask


def _loss_flat(kind: ModelKind, lam: float, theta: np.ndarray, xa: np.ndarray, y: np.ndarray) -> float:
    margins = y * (xa @ theta)
    if kind is ModelKind.SVM_HINGE:
        data = np.maximum(0.0, 1.0 - margins).mean()
    else:
        data = -log_expit(margins).mean()
    w = theta[:-1]
    return float(data + lam * (w @ w))


def _grad_flat(kind: ModelKind, lam: float, theta: np.ndarray, xa: np.ndarray, y: np.ndarray,
               mask: np.ndarray) -> np.ndarray:
    margins = y * (xa @ theta)
    if kind is ModelKind.SVM_HINGE:
        # Subgradient 0 at the kink (margin == 1).
        coeff = np.where(margins < 1.0, -y, 0.0)
    else:
        coeff = -y * expit(-margins)
    return xa.T @ coeff / xa.shape[0] + 2.0 * lam * theta * mask


def loss(spec: ModelSpec, p: ParamVector, d: Dataset) -> float:
    _check(p, d)
    return _loss_flat(spec.kind, spec.l2_strength, p.as_array(), _augment(d.features), _signed(d.labels))


def gradient(spec: ModelSpec, p: ParamVector, batch: Dataset) -> ParamVector:
    """Analytic (sub)gradient of ``loss`` on ``batch``, regularizer included."""
    _check(p, batch)
    grad = _grad_flat(spec.kind, spec.l2_strength, p.as_array(), _augment(batch.features),
                      _signed(batch.labels), _reg_mask(p.dim))
    return ParamVector.from_array(grad)


def predict(p: ParamVector, features: np.ndarray) -> np.ndarray:
    """Labels in {0, 1}; a score of exactly 0 predicts 1."""
    return (features @ p.weights + p.bias >= 0.0).astype(np.int64)


def train_local(spec: ModelSpec, p0: ParamVector, cd: ClientDataset, epochs: int, seed: int, *,
                round_index: int = 0, epoch_offset: int = 0) -> tuple[ParamVector, TrainingTrace]:
    """Minibatch SGD over a seed-shuffled order, losses recorded after every epoch."""
    if epochs < 0:
        raise ConfigError(f"epochs must be >= 0, got {epochs}")
    _check(p0, cd.train)
    _check(p0, cd.validation)
    if epochs == 0:
        return p0, TrainingTrace()

    kind, lam, eta, bs = spec.kind, spec.l2_strength, spec.learning_rate, spec.batch_size
    xa, y = _augment(cd.train.features), _signed(cd.train.labels)
    xv, yv = _augment(cd.validation.features), _signed(cd.validation.labels)
    mask = _reg_mask(p0.dim)
    n = xa.shape[0]
    rng = np.random.default_rng(seed)
    theta = p0.as_array()
    entries = []

    for epoch in range(epochs):
        order = rng.permutation(n)
        xs, ys = xa[order], y[order]
        if bs == 1:
            for i in range(n):
                x_i = xs[i]
                m = ys[i] * (x_i @ theta)
                if kind is ModelKind.SVM_HINGE:
                    c = -ys[i] if m < 1.0 else 0.0
                else:
                    c = -ys[i] * expit(-m)
                theta = theta - eta * (c * x_i + 2.0 * lam * theta * mask)
        else:
            for start in range(0, n, bs):
                theta = theta - eta * _grad_flat(kind, lam, theta, xs[start:start + bs],
                                                 ys[start:start + bs], mask)
        if not np.all(np.isfinite(theta)):
            raise NumericalError(f"client {cd.client_id}: parameters diverged in epoch {epoch} "
                                 f"(learning rate {eta})")
        entries.append(TraceEntry(epoch_offset + epoch,
                                  _loss_flat(kind, lam, theta, xa, y),
                                  _loss_flat(kind, lam, theta, xv, yv),
                                  cd.client_id, round_index))

    return ParamVector.from_array(theta), TrainingTrace(tuple(entries))


def smoothness_bound(spec: ModelSpec, features: np.ndarray) -> float:
    """Upper bound on the gradient Lipschitz constant of the objective."""
    if spec.kind is ModelKind.LOGISTIC:
        xa = _augment(features)
        return 2.0 * spec.l2_strength + float(np.max(np.einsum("ij,ij->i", xa, xa))) / 4.0
    return 2.0 * spec.l2_strength


def _logistic_optimum(spec: ModelSpec, xa: np.ndarray, y: np.ndarray, theta0: np.ndarray,
                      max_iter: int, grad_tol: float) -> tuple[np.ndarray, bool]:
    mask = _reg_mask(xa.shape[1] - 1)

    def objective(theta):
        return (_loss_flat(spec.kind, spec.l2_strength, theta, xa, y),
                _grad_flat(spec.kind, spec.l2_strength, theta, xa, y, mask))

    result = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                      options={"maxiter": max_iter, "gtol": grad_tol, "ftol": 0.0})
    grad_norm = float(np.linalg.norm(objective(result.x)[1]))
    return result.x, bool(result.success or grad_norm < grad_tol)


def _hinge_optimum(spec: ModelSpec, xa: np.ndarray, y: np.ndarray, theta0: np.ndarray,
                   max_iter: int, grad_tol: float) -> tuple[np.ndarray, bool]:
    # Full-batch subgradient descent with 1/sqrt(t) steps, keeping the best iterate.
    mask = _reg_mask(xa.shape[1] - 1)
    scale = 2.0 * spec.l2_strength + float(np.max(np.einsum("ij,ij->i", xa, xa)))
    theta = theta0.copy()
    best_theta, best_loss = theta.copy(), _loss_flat(spec.kind, spec.l2_strength, theta, xa, y)
    checkpoint_loss = best_loss
    for t in range(max_iter):
        grad = _grad_flat(spec.kind, spec.l2_strength, theta, xa, y, mask)
        if np.linalg.norm(grad) < grad_tol:
            return theta, True
        theta = theta - grad / (scale * np.sqrt(t + 1.0))
        current = _loss_flat(spec.kind, spec.l2_strength, theta, xa, y)
        if current < best_loss:
            best_theta, best_loss = theta.copy(), current
        if (t + 1) % HINGE_PATIENCE == 0:
            if checkpoint_loss - best_loss < grad_tol:
                return best_theta, True
            checkpoint_loss = best_loss
    return best_theta, False


def solve_optimum(spec: ModelSpec, d: Dataset, *, max_iter: int = OPTIMUM_MAX_ITER,
                  grad_tol: float = OPTIMUM_GRAD_TOL) -> tuple[ParamVector, float, bool]:
    """Full-batch minimization of the objective on ``d``: (params, loss, converged)."""
    if d.n_rows == 0:
        raise EmptyDatasetError(f"{d.name}: no samples")
    xa, y = _augment(d.features), _signed(d.labels)
    theta0 = np.zeros(xa.shape[1])
    solver = _logistic_optimum if spec.kind is ModelKind.LOGISTIC else _hinge_optimum
    theta, converged = solver(spec, xa, y, theta0, max_iter, grad_tol)
    return ParamVector.from_array(theta), _loss_flat(spec.kind, spec.l2_strength, theta, xa, y), converged


def _pool(partition: Sequence[ClientDataset]) -> Dataset:
    return Dataset(np.vstack([c.train.features for c in partition]),
                   np.concatenate([c.train.labels for c in partition]),
                   name="pooled",
                   row_ids=np.concatenate([c.train.row_ids for c in partition]))


def _noise(spec: ModelSpec, theta: np.ndarray, xa: np.ndarray, y: np.ndarray,
           rng: np.random.Generator, mask: np.ndarray) -> tuple[float, float]:
    """(variance, mean squared norm) of minibatch gradients at ``theta``."""
    full = _grad_flat(spec.kind, spec.l2_strength, theta, xa, y, mask)
    bs = min(spec.batch_size, xa.shape[0])
    deviations, norms = [], []
    for _ in range(NOISE_BATCHES):
        idx = rng.choice(xa.shape[0], size=bs, replace=False)
        g = _grad_flat(spec.kind, spec.l2_strength, theta, xa[idx], y[idx], mask)
        deviations.append(float(np.sum((g - full) ** 2)))
        norms.append(float(g @ g))
    return float(np.mean(deviations)), float(np.mean(norms))


def estimate_constants(spec: ModelSpec, partition: Sequence[ClientDataset], *, seed: int = 0,
                       strict: bool = False, max_iter: int = OPTIMUM_MAX_ITER,
                       grad_tol: float = OPTIMUM_GRAD_TOL) -> ObjectiveStats:
    """Estimate mu, L, sigma_k, G and the non-IID gap Z for a partition.

    ``F*`` is the mean of the clients' local optima and ``Z_k = F* - F_k*``.
    A local-optimum search that hits ``max_iter`` raises OptimumSearchError
    when ``strict``; otherwise it is logged and flagged in ``optimum_converged``.
    """
    if not partition:
        raise ConfigError("partition is empty")
    if spec.l2_strength <= 0:
        raise ConfigError("estimating constants needs l2_strength > 0")

    pooled = _pool(partition)
    mu = 2.0 * spec.l2_strength
    smooth_L = smoothness_bound(spec, pooled.features)
    xa_pooled = _augment(pooled.features)
    data_lipschitz = float(np.sqrt(np.max(np.einsum("ij,ij->i", xa_pooled, xa_pooled))))

    local_params, local_losses, converged = [], [], []
    for client in partition:
        params, value, ok = solve_optimum(spec, client.train, max_iter=max_iter, grad_tol=grad_tol)
        local_params.append(params)
        local_losses.append(value)
        converged.append(ok)
    pooled_params, pooled_loss, pooled_ok = solve_optimum(spec, pooled, max_iter=max_iter,
                                                          grad_tol=grad_tol)
    converged.append(pooled_ok)
    if not all(converged):
        failed = [k for k, ok in enumerate(converged[:-1]) if not ok]
        message = (f"constants: optimum search hit {max_iter} iterations "
                   f"(clients {failed}, pooled converged={pooled_ok})")
        if strict:
            raise OptimumSearchError(message)
        logger.warning(message)

    rng = np.random.default_rng(seed)
    mask = _reg_mask(pooled.n_features)
    sigma_k, grad_sq = [], []
    for client, params in zip(partition, local_params):
        xa, y = _augment(client.train.features), _signed(client.train.labels)
        variance, norm_at_local = _noise(spec, params.as_array(), xa, y, rng, mask)
        _, norm_at_pooled = _noise(spec, pooled_params.as_array(), xa, y, rng, mask)
        sigma_k.append(float(np.sqrt(variance)))
        grad_sq.extend([norm_at_local, norm_at_pooled])

    global_opt = float(np.mean(local_losses))
    z = tuple(global_opt - f for f in local_losses)
    stats = ObjectiveStats(
        mu=mu,
        smooth_L=max(smooth_L, mu),
        sigma_k=tuple(sigma_k),
        grad_bound_G=float(np.sqrt(max(grad_sq))),
        local_opt_loss=tuple(local_losses),
        global_opt_loss=global_opt,
        z_per_client=z,
        z_scalar=max(z),
        pooled_opt_loss=pooled_loss,
        pooled_opt_params=pooled_params,
        local_opt_params=tuple(local_params),
        optimum_converged=tuple(converged),
        data_lipschitz=data_lipschitz,
        sample_counts=tuple(c.sample_count for c in partition),
        spec=spec,
        pooled_data=pooled,
    )
    logger.info("constants: mu=%.3g L=%.3g Z=%.3g G=%.3g", stats.mu, stats.smooth_L,
                stats.z_scalar, stats.grad_bound_G)
    return stats
