"""Numerical checks of the quasi-regularity hypotheses at truncation.

Two conditions are checked on a weight pair ``(beta_i, gamma_i)``:

* tail summability: the partial sums of
  ``(beta_i gamma_i)^{(1+alpha)/2} P(beta_i^{1/2} |X_i| > M0 gamma_i^{-1/2})``
  level off;
* bounded union: the fraction of samples with
  ``|X_i| <= M (beta_i gamma_i)^{-1/2}`` for every ``i`` reaches one for some ``M``.

Convergence at a finite ``K`` is a decay diagnostic, never a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .errors import ConfigError
from .spectral_core import EigenSystem

CONVERGENCE_TOL = 1e-6
DECADE = 10


@dataclass(frozen=True, eq=False)
class ConditionInput:
    beta: np.ndarray
    gamma: np.ndarray
    alpha: float = 1.0
    M0: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        gamma = np.asarray(self.gamma, dtype=float)
        if beta.shape != gamma.shape or beta.ndim != 1:
            raise ConfigError("beta and gamma must be 1-D arrays of equal length")
        if np.any(beta <= 0) or np.any(gamma <= 0):
            raise ConfigError("beta and gamma must be positive")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.M0 > 0:
            raise ConfigError("M0 must be positive")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def count(self) -> int:
        return len(self.beta)

    @property
    def scale(self) -> np.ndarray:
        """``(beta_i gamma_i)^{1/2}``: coordinate ``i`` is bounded by ``M`` over this."""
        return np.sqrt(self.beta * self.gamma)

    @property
    def summand_weights(self) -> np.ndarray:
        return (self.beta * self.gamma) ** ((1 + self.alpha) / 2)

    def gamma_inverse_sums(self) -> np.ndarray:
        return np.cumsum(1.0 / self.gamma)


def preset_example0(es: EigenSystem | np.ndarray, alpha: float = 1.0, M0: float = 1.0) -> ConditionInput:
    """``beta = lambda^4`` (``alpha = 1``) or ``lambda^6`` (``alpha < 1``), ``gamma = lambda^{-2}``."""
    lam = np.asarray(es.lambdas if isinstance(es, EigenSystem) else es, dtype=float)
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    beta = lam**4 if alpha == 1 else lam**6
    return ConditionInput(beta, lam**-2.0, alpha, M0, {"preset": "example0"})


def summability_identity(ci: ConditionInput, es: EigenSystem | np.ndarray) -> tuple[float, float, float]:
    """``(sum beta gamma, sum lambda^2, relative difference)``."""
    lam = np.asarray(es.lambdas if isinstance(es, EigenSystem) else es, dtype=float)
    lhs = float(np.sum(ci.beta * ci.gamma))
    rhs = float(np.sum(lam**2))
    return lhs, rhs, abs(lhs - rhs) / rhs


def gaussian_tails(ci: ConditionInput, variances: np.ndarray) -> np.ndarray:
    """``P(|X_i| > M0 / (beta_i gamma_i)^{1/2})`` for centered Gaussians."""
    var = np.asarray(variances, dtype=float)
    if var.shape != ci.beta.shape:
        raise ConfigError("one variance per coordinate is required")
    t = ci.M0 / ci.scale
    return erfc(t / np.sqrt(2 * var))


def empirical_tails(ci: ConditionInput, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample fractions of the same events with their binomial stderrs."""
    x = np.asarray(samples, dtype=float)
    hits = np.abs(x) > ci.M0 / ci.scale
    p = hits.mean(axis=0)
    return p, np.sqrt(p * (1 - p) / len(x))


@dataclass(frozen=True)
class TailSumReport:
    partial_sums: np.ndarray
    converged: bool
    last_increment: float

    @property
    def total(self) -> float:
        return float(self.partial_sums[-1])


def check_tail_summability(ci: ConditionInput, tails: np.ndarray | None = None) -> TailSumReport:
    """Partial sums of the weighted tail probabilities.

    Without ``tails`` every probability is replaced by its upper bound one.
    Converged means the increment over the last ten terms is below
    ``1e-6`` of the total.
    """
    p = np.ones(ci.count) if tails is None else np.asarray(tails, dtype=float)
    if p.shape != (ci.count,) or np.any((p < 0) | (p > 1)):
        raise ConfigError("tails must be probabilities, one per coordinate")
    s = np.cumsum(ci.summand_weights * p)
    k = ci.count
    back = min(DECADE, k - 1)
    inc = float(s[-1] - s[k - 1 - back]) if back > 0 else float(s[-1])
    total = float(s[-1])
    converged = inc <= CONVERGENCE_TOL * total if total > 0 else True
    return TailSumReport(s, bool(converged), inc)


@dataclass(frozen=True)
class BoundedUnionReport:
    M: np.ndarray
    fraction: np.ndarray
    smallest_full: float | None
    threshold: float = 0.999

    @property
    def passed(self) -> bool:
        return bool(np.any(self.fraction >= self.threshold))

    def rows(self) -> list[dict]:
        return [{"M": float(m), "fraction": float(f)} for m, f in zip(self.M, self.fraction)]


def required_bound(ci: ConditionInput, samples: np.ndarray) -> np.ndarray:
    """Per sample, the least ``M`` with ``|X_i| <= M (beta_i gamma_i)^{-1/2}`` for all ``i``."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[1] != ci.count:
        raise ConfigError(f"samples have {x.shape[1]} coordinates, expected {ci.count}")
    return np.max(np.abs(x) * ci.scale, axis=1)


def check_bounded_union(
    ci: ConditionInput, samples: np.ndarray, M_list: Sequence[float], threshold: float = 0.999
) -> BoundedUnionReport:
    need = np.sort(required_bound(ci, samples))
    m = np.asarray(sorted(M_list), dtype=float)
    frac = np.searchsorted(need, m, side="right") / len(need)
    full = m[frac >= 1.0]
    return BoundedUnionReport(m, frac, float(full[0]) if len(full) else None, threshold)


def union_bound(ci: ConditionInput, variances: np.ndarray, M: float) -> float:
    """``sum_i P(|X_i| > M / (beta_i gamma_i)^{1/2})``: bounds ``1 - fraction(M)``."""
    scaled = ConditionInput(ci.beta, ci.gamma, ci.alpha, M)
    return float(np.sum(gaussian_tails(scaled, variances)))


def conditions_report(
    ci: ConditionInput, tails_report: TailSumReport, union: BoundedUnionReport | None = None,
    identity: tuple[float, float, float] | None = None,
) -> dict:
    out = {
        "alpha": ci.alpha,
        "K": ci.count,
        "M0": ci.M0,
        "partial_sums": [float(v) for v in tails_report.partial_sums],
        "converged": tails_report.converged,
    }
    if union is not None:
        out["M_scan"] = union.rows()
        out["smallest_full_M"] = union.smallest_full
        out["M_scan_pass"] = union.passed
    if identity is not None:
        out["identity"] = {"sum_beta_gamma": identity[0], "sum_lambda_sq": identity[1],
                           "rel_diff": identity[2]}
    return out
