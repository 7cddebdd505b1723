"""Conjugate normal-gamma model for the observations routed through one node.

The node parameter is ``(mu, tau)`` with prior

    mu | tau ~ N(m, 1 / (kappa * tau)),    tau ~ Gamma(alpha, rate=beta)

and observations ``y ~ N(mu, 1 / tau)``.  The posterior predictive is a
Student-t with ``2 * alpha`` degrees of freedom, location ``m`` and squared
scale ``beta * (kappa + 1) / (alpha * kappa)``.

Everything is computed in log space.  The scalar API works on the frozen
dataclasses below; the ``*_arrays`` helpers broadcast over numpy arrays of
sufficient statistics and are what the tree code uses in bulk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

_LOG_PI = math.log(math.pi)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NormalGammaParams:
    """Hyperparameters ``(m, kappa, alpha, beta)`` of a normal-gamma law."""

    m: float = 0.0
    kappa: float = 2.0
    alpha: float = 2.0
    beta: float = 2.0

    def __post_init__(self):
        for name in ("m", "kappa", "alpha", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.kappa <= 0 or self.beta <= 0:
            raise ValueError("kappa and beta must be positive")
        # dof 2*alpha must exceed 1 for the predictive mean to exist
        if self.alpha <= 0.5:
            raise ValueError(f"alpha must exceed 1/2, got {self.alpha}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.m, self.kappa, self.alpha, self.beta)


@dataclass(frozen=True)
class SufficientStats:
    """Count, sum and sum of squares of the observations seen so far."""

    n: int = 0
    sum_y: float = 0.0
    sum_y_sq: float = 0.0

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if self.n == 0 and (self.sum_y != 0.0 or self.sum_y_sq != 0.0):
            raise ValueError("empty stats must have zero sums")

    @classmethod
    def from_values(cls, y) -> "SufficientStats":
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must be finite")
        return cls(int(y.size), float(y.sum()), float(np.dot(y, y)))


def _check_finite(y: float) -> float:
    y = float(y)
    if not math.isfinite(y):
        raise ValueError(f"observation must be finite, got {y}")
    return y


def update_stats(stats: SufficientStats, y: float) -> SufficientStats:
    """Return ``stats`` with one more observation ``y`` folded in."""
    y = _check_finite(y)
    return SufficientStats(stats.n + 1, stats.sum_y + y, stats.sum_y_sq + y * y)


def posterior(prior: NormalGammaParams, stats: SufficientStats) -> NormalGammaParams:
    """Conjugate update of ``prior`` by the data summarised in ``stats``."""
    if stats.n == 0:
        return prior
    m, kappa, alpha, beta = posterior_arrays(prior, stats.n, stats.sum_y, stats.sum_y_sq)
    return NormalGammaParams(float(m), float(kappa), float(alpha), float(beta))


def predictive_log_density(post: NormalGammaParams, y: float) -> float:
    """Log Student-t posterior predictive density at ``y``."""
    y = _check_finite(y)
    return float(student_t_logpdf(y, post.m, post.kappa, post.alpha, post.beta))


def predictive_mean(post: NormalGammaParams) -> float:
    """Mean of the posterior predictive, i.e. its location ``m``."""
    return post.m


def predictive_scale(post: NormalGammaParams) -> float:
    """Scale (not squared) of the Student-t predictive."""
    return math.sqrt(post.beta * (post.kappa + 1.0) / (post.alpha * post.kappa))


def log_marginal_likelihood(prior: NormalGammaParams, stats: SufficientStats) -> float:
    """Log evidence ``log p(y_1, ..., y_n)`` of the data in ``stats``."""
    return float(log_marginal_arrays(prior, stats.n, stats.sum_y, stats.sum_y_sq))


# -- array helpers ---------------------------------------------------------


def posterior_arrays(prior: NormalGammaParams, n, sum_y, sum_y_sq):
    """Vectorised :func:`posterior`; returns ``(m, kappa, alpha, beta)`` arrays.

    Entries with ``n == 0`` come back equal to the prior.
    """
    n = np.asarray(n, dtype=float)
    sum_y = np.asarray(sum_y, dtype=float)
    sum_y_sq = np.asarray(sum_y_sq, dtype=float)
    kappa_n = prior.kappa + n
    alpha_n = prior.alpha + 0.5 * n
    m_n = (prior.kappa * prior.m + sum_y) / kappa_n
    safe_n = np.where(n > 0, n, 1.0)
    ybar = sum_y / safe_n
    # clip guards the within-sum-of-squares against cancellation below zero
    within = np.maximum(sum_y_sq - sum_y * ybar, 0.0)
    between = prior.kappa * n * (ybar - prior.m) ** 2 / kappa_n
    beta_n = prior.beta + 0.5 * np.where(n > 0, within + between, 0.0)
    return m_n, kappa_n, alpha_n, beta_n


def student_t_logpdf(y, m, kappa, alpha, beta):
    """Log predictive density for posterior hyperparameters (broadcasting)."""
    nu = 2.0 * np.asarray(alpha, dtype=float)
    scale_sq = beta * (kappa + 1.0) / (alpha * kappa)
    z = (np.asarray(y, dtype=float) - m) ** 2 / (nu * scale_sq)
    return (
        gammaln(0.5 * (nu + 1.0))
        - gammaln(0.5 * nu)
        - 0.5 * (np.log(nu * scale_sq) + _LOG_PI)
        - 0.5 * (nu + 1.0) * np.log1p(z)
    )


def log_marginal_arrays(prior: NormalGammaParams, n, sum_y, sum_y_sq):
    """Vectorised :func:`log_marginal_likelihood`."""
    n = np.asarray(n, dtype=float)
    _, kappa_n, alpha_n, beta_n = posterior_arrays(prior, n, sum_y, sum_y_sq)
    return (
        gammaln(alpha_n)
        - gammaln(prior.alpha)
        + prior.alpha * math.log(prior.beta)
        - alpha_n * np.log(beta_n)
        + 0.5 * (math.log(prior.kappa) - np.log(kappa_n))
        - 0.5 * n * _LOG_2PI
    )
