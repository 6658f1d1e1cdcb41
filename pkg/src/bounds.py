"""Convergence upper bounds for the deployment families and their numeric check.

    continuous (linear, ring)   (L/2) [ (1 + mu*eta + eta^2 L^2) d0 + 2 eta Z + eta^2 sigma^2 ]
    aggregate chain             (L/2) [ (1 + mu*eta) v + 2 eta Z + eta^2 L^2 v + eta^2 sigma^2 ]
    star / mesh                 2 kappa / (gamma + T) * ( B / mu + 2 L d0 )
                                B = sum_k p_k^2 sigma_k^2 + 6 L Z + 8 (E - 1)^2 G^2

d0 = ||w0 - w*||^2 and v = ||V_k - w*||^2. The formulas are evaluated as
written; see theory.md for where each one comes from.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.engine import DeploymentKind, RunResult
from src.errors import ConfigError, MissingOptimumError
from src.models import ObjectiveStats, ParamVector, loss

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundInputs:
    smooth_L: float
    mu: float
    eta: float
    sigma: float = 0.0
    z: float = 0.0
    init_dist_sq: float = 0.0
    grad_bound_G: float = 0.0
    local_epochs_E: int = 1
    rounds_T: int = 1
    weights_p: tuple[float, ...] = (1.0,)
    v_dist_sq: float = 0.0
    kappa: float | None = None
    gamma: float | None = None
    sigma_k: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.smooth_L <= 0 or self.mu <= 0:
            raise ConfigError(f"L and mu must be positive (L={self.smooth_L}, mu={self.mu})")
        if self.mu > self.smooth_L:
            raise ConfigError(f"mu {self.mu} exceeds L {self.smooth_L}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if min(self.sigma, self.z, self.init_dist_sq, self.grad_bound_G, self.v_dist_sq) < 0:
            raise ConfigError("sigma, z, distances and G must be nonnegative")
        if self.local_epochs_E < 1 or self.rounds_T < 1:
            raise ConfigError("local_epochs_E and rounds_T must be >= 1")
        weights = tuple(float(p) for p in self.weights_p)
        if any(p < 0 for p in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError(f"weights_p {weights} must be a probability vector")
        object.__setattr__(self, "weights_p", weights)
        if self.sigma_k is not None and len(self.sigma_k) != len(weights):
            raise ConfigError("sigma_k needs one entry per weight")
        kappa = self.smooth_L / self.mu if self.kappa is None else self.kappa
        if kappa <= 0:
            raise ConfigError(f"kappa must be positive, got {kappa}")
        gamma = max(1.0, 8.0 * kappa) if self.gamma is None else self.gamma
        if gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        object.__setattr__(self, "kappa", float(kappa))
        object.__setattr__(self, "gamma", float(gamma))

    @property
    def regime_ok(self) -> bool:
        """Step size inside the range the derivations assume."""
        return 0.0 < self.eta * self.smooth_L <= 1.0 and self.mu <= self.smooth_L


def bound_continuous(inputs: BoundInputs) -> float:
    L, mu, eta = inputs.smooth_L, inputs.mu, inputs.eta
    return (L / 2.0) * ((1.0 + mu * eta + eta ** 2 * L ** 2) * inputs.init_dist_sq
                        + 2.0 * eta * inputs.z + eta ** 2 * inputs.sigma ** 2)


def bound_aggregate_chain(inputs: BoundInputs) -> float:
    L, mu, eta, v = inputs.smooth_L, inputs.mu, inputs.eta, inputs.v_dist_sq
    return (L / 2.0) * ((1.0 + mu * eta) * v + 2.0 * eta * inputs.z
                        + eta ** 2 * L ** 2 * v + eta ** 2 * inputs.sigma ** 2)


def star_mesh_b(inputs: BoundInputs) -> float:
    p = np.asarray(inputs.weights_p)
    sigma = (np.full(p.shape, inputs.sigma) if inputs.sigma_k is None
             else np.asarray(inputs.sigma_k, dtype=np.float64))
    return float(np.sum(p ** 2 * sigma ** 2) + 6.0 * inputs.smooth_L * inputs.z
                 + 8.0 * (inputs.local_epochs_E - 1) ** 2 * inputs.grad_bound_G ** 2)


def bound_star_mesh(inputs: BoundInputs) -> float:
    factor = 2.0 * inputs.kappa / (inputs.gamma + inputs.rounds_T)
    return factor * (star_mesh_b(inputs) / inputs.mu + 2.0 * inputs.smooth_L * inputs.init_dist_sq)


def bound_for(kind: DeploymentKind | str, inputs: BoundInputs) -> float:
    kind = DeploymentKind(kind)
    if kind in (DeploymentKind.CONTINUOUS_LINEAR, DeploymentKind.CONTINUOUS_RING):
        return bound_continuous(inputs)
    if kind in (DeploymentKind.AGGREGATE_LINEAR, DeploymentKind.AGGREGATE_RING):
        return bound_aggregate_chain(inputs)
    return bound_star_mesh(inputs)


def bound_inputs_from(stats: ObjectiveStats, run: RunResult, *, z: float | None = None,
                      gamma: float | None = None) -> BoundInputs:
    """Assemble bound constants for ``run`` from estimated objective statistics.

    The run starts from all-zero parameters, so both ||w0 - w*||^2 and
    ||V_k - w*||^2 reduce to ||w*||^2 at the pooled optimum.
    """
    if len(stats.sample_counts) == run.config.n_clients:
        counts = np.asarray(stats.sample_counts, dtype=np.float64)
    else:
        counts = np.ones(run.config.n_clients)
    weights = counts / counts.sum()
    dist = float(np.sum(stats.pooled_opt_params.as_array() ** 2))
    sigma_k = tuple(stats.sigma_k) if len(stats.sigma_k) == len(weights) else None
    return BoundInputs(
        smooth_L=stats.smooth_L,
        mu=stats.mu,
        eta=run.config.model.learning_rate,
        sigma=max(stats.sigma_k) if stats.sigma_k else 0.0,
        z=max(0.0, stats.z_scalar if z is None else z),
        init_dist_sq=dist,
        grad_bound_G=stats.grad_bound_G,
        local_epochs_E=run.config.epochs_per_event,
        rounds_T=run.config.n_rounds,
        weights_p=tuple(weights),
        v_dist_sq=dist,
        gamma=gamma,
        sigma_k=sigma_k,
    )


@dataclass(frozen=True)
class BoundCheck:
    deployment: str
    client: str
    measured_gap: float
    bound: float
    holds: bool
    regime_ok: bool

    def to_dict(self) -> dict:
        return {"deployment": self.deployment, "client": self.client,
                "measured_gap": self.measured_gap, "bound": self.bound,
                "holds": self.holds, "regime_ok": self.regime_ok}


@dataclass
class BoundReport:
    checks: list[BoundCheck] = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        """True when every check inside the stability regime holds."""
        return all(c.holds for c in self.checks if c.regime_ok)

    def to_json(self) -> list[dict]:
        return [c.to_dict() for c in self.checks]


def verify_bound(run: RunResult, stats: ObjectiveStats, inputs: BoundInputs) -> BoundReport:
    """Compare F(w_k) - F* on the pooled objective against the deployment's bound.

    Outside the stability regime the comparison is still reported, flagged
    with ``regime_ok = False``, and never counted by :attr:`BoundReport.all_hold`.
    """
    optimum = stats.pooled_opt_loss
    if stats.pooled_data is None or stats.spec is None or optimum is None or not np.isfinite(optimum):
        raise MissingOptimumError("objective statistics carry no usable pooled optimum")

    bound = bound_for(run.config.kind, inputs)
    regime_ok = inputs.regime_ok
    if not regime_ok:
        logger.warning("bounds: %s evaluated outside the stability regime (eta*L=%.3g)",
                       run.deployment, inputs.eta * inputs.smooth_L)

    def check(label: str, params: ParamVector) -> BoundCheck:
        gap = loss(stats.spec, params, stats.pooled_data) - optimum
        return BoundCheck(run.deployment, label, float(gap), float(bound), bool(gap <= bound), regime_ok)

    checks = [check(str(k), p) for k, p in sorted(run.final_params.items())]
    if run.global_params is not None:
        checks.append(check("global", run.global_params))
    return BoundReport(checks)


def merge_reports(reports: Sequence[BoundReport]) -> BoundReport:
    return BoundReport([c for r in reports for c in r.checks])
