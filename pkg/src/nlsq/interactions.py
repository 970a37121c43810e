"""Wick-ordered interactions and Gibbs reweighting of the free field.

Wick ordering is done against the truncated pointwise variance
``c(x) = sum_ij C_ij phi_i(x) phi_j(x)``, so ``:phi^n:(x)`` is the scaled
Hermite polynomial ``c^{n/2} He_n(phi / sqrt(c))``.  The exponential and
trigonometric potentials use the closed Wick-exponential forms

    :exp(a phi):  = exp(a phi - a^2 c / 2)
    :sin(a phi):  = exp(a^2 c / 2) sin(a phi)
    :cos(a phi):  = exp(a^2 c / 2) cos(a phi)

which :func:`potential_series` checks against the defining Wick power series.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError, NumericalError
from .free_field import Estimate, FreeFieldModel, triple_norm
from .spectral_core import GridSpec

log = logging.getLogger(__name__)

POTENTIAL_KINDS = ("Free", "Exp", "Poly", "Sin", "Cos")
CHARGE_LIMIT = math.sqrt(4 * math.pi)
MAX_POLY_DEGREE = 4
ESS_FRACTION_WARN = 1e-3
ESS_WARN = 100


def cutoff_function(grid: GridSpec, shape: str = "bump", radius: float | None = None) -> np.ndarray:
    """Nonnegative space cut-off of unit mass.

    ``bump`` is the smooth compactly supported ``exp(-1/(1 - (|x|/R)^2))``;
    ``gaussian`` has standard deviation ``R``.  The default radius is half the
    box half-width.
    """
    r = grid.L / 2 if radius is None else float(radius)
    if not 0 < r <= grid.L:
        raise ConfigError(f"cut-off radius must lie in (0, L], got {r}")
    s = np.sqrt(np.sum(grid.points**2, axis=1)) / r
    if shape == "bump":
        g = np.zeros_like(s)
        inside = s < 1
        g[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    elif shape == "gaussian":
        g = np.exp(-0.5 * s**2)
    else:
        raise ConfigError(f"unknown cut-off shape {shape!r}")
    return g / (grid.cell_volume * g.sum())


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    kind: str = "Free"
    a0: float = 0.0
    coupling: float = 0.0
    degree: int = 1
    cutoff: np.ndarray | None = None
    allow_large_charge: bool = False

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ConfigError(f"potential kind must be one of {POTENTIAL_KINDS}")
        if self.kind in ("Exp", "Sin", "Cos") and abs(self.a0) >= CHARGE_LIMIT and not self.allow_large_charge:
            raise ConfigError(f"|a0| = {abs(self.a0)} must stay below sqrt(4 pi)")
        if self.coupling < 0:
            raise ConfigError("coupling must be nonnegative")
        if self.kind == "Poly" and not 1 <= self.degree <= MAX_POLY_DEGREE:
            raise ConfigError(f"polynomial degree must lie in 1..{MAX_POLY_DEGREE}")
        if self.kind != "Free":
            if self.cutoff is None:
                raise ConfigError("interacting potentials need a cut-off function")
            g = np.asarray(self.cutoff, dtype=float)
            if np.any(g < 0) or not np.all(np.isfinite(g)):
                raise ConfigError("cut-off must be finite and nonnegative")


@dataclass(frozen=True, eq=False)
class WickContext:
    variance: np.ndarray
    model: FreeFieldModel

    def __post_init__(self):
        if np.any(self.variance <= 0):
            raise NumericalError("pointwise variance must be positive on the grid")


def pointwise_variance(model: FreeFieldModel) -> WickContext:
    basis = model.es.basis
    c = np.einsum("ix,ix->x", model.cov @ basis, basis)
    return WickContext(c, model)


def hermite_he(x: np.ndarray, n: int) -> np.ndarray:
    """Probabilists' Hermite polynomial ``He_n`` by the three-term recursion."""
    if n < 0:
        raise ConfigError("Hermite degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x
    if n == 0:
        return prev
    for k in range(1, n):
        prev, cur = cur, x * cur - k * prev
    return cur


def wick_power(phi: np.ndarray, n: int, ctx: WickContext | np.ndarray) -> np.ndarray:
    """``:phi^n: = c^{n/2} He_n(phi / sqrt(c))``.

    Evaluated through the scaled recursion ``W_{k+1} = phi W_k - k c W_{k-1}``
    so no division by ``sqrt(c)`` occurs.
    """
    if n < 0:
        raise ConfigError("Wick degree must be nonnegative")
    c = ctx.variance if isinstance(ctx, WickContext) else np.asarray(ctx)
    phi = np.asarray(phi, dtype=float)
    prev = np.ones(np.broadcast_shapes(phi.shape, c.shape))
    if n == 0:
        return prev
    cur = phi * prev
    for k in range(1, n):
        prev, cur = cur, phi * cur - k * c * prev
    return cur


def wick_density(spec: PotentialSpec, phi: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Pointwise integrand (before multiplying by ``g``) in closed form."""
    a = spec.a0
    if spec.kind == "Exp":
        return np.exp(a * phi - 0.5 * a * a * c)
    if spec.kind == "Poly":
        return spec.coupling * wick_power(phi, 2 * spec.degree, c)
    if spec.kind == "Sin":
        return spec.coupling * np.exp(0.5 * a * a * c) * np.sin(a * phi)
    if spec.kind == "Cos":
        return spec.coupling * np.exp(0.5 * a * a * c) * np.cos(a * phi)
    return np.zeros(np.broadcast_shapes(np.shape(phi), np.shape(c)))


def series_density(spec: PotentialSpec, phi: np.ndarray, c: np.ndarray, terms: int = 25) -> np.ndarray:
    """The same integrand summed from its Wick power series (``terms`` terms)."""
    a = spec.a0
    out = np.zeros(np.broadcast_shapes(np.shape(phi), np.shape(c)))
    if spec.kind in ("Free", "Poly"):
        return wick_density(spec, phi, c)
    for n in range(terms):
        if spec.kind == "Exp":
            coef = a**n / math.factorial(n)
        elif spec.kind == "Sin":
            if n % 2 == 0:
                continue
            coef = spec.coupling * (-1) ** (n // 2) * a**n / math.factorial(n)
        else:
            if n % 2:
                continue
            coef = spec.coupling * (-1) ** (n // 2) * a**n / math.factorial(n)
        out = out + coef * wick_power(phi, n, c)
    return out


def _check_ctx(spec: PotentialSpec, ctx: WickContext):
    if spec.cutoff is not None and np.shape(spec.cutoff) != ctx.variance.shape:
        raise ConfigError("cut-off and Wick context live on different grids")


def potential_value(spec: PotentialSpec, fields: np.ndarray, ctx: WickContext) -> np.ndarray:
    """``V`` for grid field(s) of shape ``(..., n**d)``."""
    if spec.kind == "Free":
        return np.zeros(np.shape(fields)[:-1])
    _check_ctx(spec, ctx)
    dens = wick_density(spec, fields, ctx.variance)
    return ctx.model.es.cell_volume * dens @ spec.cutoff


def potential_series(spec: PotentialSpec, fields: np.ndarray, ctx: WickContext, terms: int = 25) -> np.ndarray:
    if spec.kind == "Free":
        return np.zeros(np.shape(fields)[:-1])
    _check_ctx(spec, ctx)
    return ctx.model.es.cell_volume * series_density(spec, fields, ctx.variance, terms) @ spec.cutoff


@dataclass(frozen=True)
class ZEstimate:
    z: float
    stderr: float
    log_z: float
    ess: float
    n: int

    @property
    def ess_warning(self) -> bool:
        return self.ess < ESS_FRACTION_WARN * self.n


def _log_weights(spec: PotentialSpec, samples: np.ndarray, ctx: WickContext) -> np.ndarray:
    v = potential_value(spec, ctx.model.fields(samples), ctx)
    if spec.kind == "Exp":
        w = np.exp(-v)
        if not (np.all(w > 0) and np.all(w <= 1)):
            raise NumericalError("exp(-V) left (0, 1] for the exponential model")
    return -v


def _z_from_log_weights(lw: np.ndarray) -> ZEstimate:
    n = len(lw)
    top = lw.max()
    w = np.exp(lw - top)
    mean = w.mean()
    sd = w.std(ddof=1) if n > 1 else 0.0
    ess = w.sum() ** 2 / np.sum(w**2)
    est = ZEstimate(
        z=float(np.exp(top) * mean),
        stderr=float(np.exp(top) * sd / np.sqrt(n)),
        log_z=float(top + np.log(mean)),
        ess=float(ess),
        n=n,
    )
    if est.ess_warning:
        log.warning("normalizing constant dominated by few samples: ESS %.1f of %d", ess, n)
    return est


def estimate_Z(spec: PotentialSpec, base: FreeFieldModel, samples: np.ndarray,
               ctx: WickContext | None = None) -> ZEstimate:
    """``Z = E_0[exp(-V)]`` over free-field samples, accumulated in log space."""
    if spec.kind == "Free":
        n = len(samples)
        return ZEstimate(1.0, 0.0, 0.0, float(n), n)
    ctx = ctx or pointwise_variance(base)
    return _z_from_log_weights(_log_weights(spec, samples, ctx))


@dataclass(frozen=True, eq=False)
class GibbsModel:
    base: FreeFieldModel
    potential: PotentialSpec
    ctx: WickContext
    z: ZEstimate
    meta: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.potential.kind

    def potential_at(self, x: np.ndarray) -> np.ndarray:
        """``V`` at coordinate vector(s) ``x``."""
        return potential_value(self.potential, self.base.fields(x), self.ctx)

    def potential_at_fields(self, fields: np.ndarray) -> np.ndarray:
        return potential_value(self.potential, fields, self.ctx)

    def log_weights(self, x: np.ndarray) -> np.ndarray:
        return -self.potential_at(x)


def build_gibbs(base: FreeFieldModel, spec: PotentialSpec, samples: np.ndarray) -> GibbsModel:
    ctx = pointwise_variance(base)
    z = estimate_Z(spec, base, samples, ctx)
    return GibbsModel(base, spec, ctx, z)


@dataclass(frozen=True)
class Reweighted:
    value: float | complex
    stderr: float
    ess: float

    @property
    def warning(self) -> bool:
        return self.ess < ESS_WARN


def importance_weights(gm: GibbsModel, samples: np.ndarray) -> np.ndarray:
    """Weights ``exp(-V)`` scaled by a constant so the largest is one."""
    lw = gm.log_weights(samples)
    return np.exp(lw - lw.max())


def reweighted_expectation(
    gm: GibbsModel,
    observable,
    samples: np.ndarray,
    *,
    weights: np.ndarray | None = None,
    use_model_z: bool = False,
) -> Reweighted:
    """``E_nu[F] = E_0[F exp(-V)] / Z`` by importance sampling.

    ``observable`` is an array of per-sample values or a callable on the
    sample array.  By default ``Z`` comes from the same samples (self-normalized
    ratio); ``use_model_z`` divides by the model's own estimate instead, which
    is appropriate when it was computed on a disjoint sample set.
    """
    f = observable(samples) if callable(observable) else np.asarray(observable)
    if gm.kind == "Free" and weights is None:
        w = np.ones(len(samples))
        lw_top = 0.0
    else:
        lw = gm.log_weights(samples) if weights is None else np.log(weights)
        lw_top = lw.max()
        w = np.exp(lw - lw_top)
    ess = float(w.sum() ** 2 / np.sum(w**2))
    n = len(w)
    if use_model_z:
        terms = w * f * np.exp(lw_top) / gm.z.z
        value = terms.mean()
        stderr = np.sqrt(np.sum(np.abs(terms - value) ** 2) / max(n - 1, 1) / n)
    else:
        value = np.sum(w * f) / np.sum(w)
        if gm.kind == "Free" and weights is None:
            stderr = np.sqrt(np.sum(np.abs(f - value) ** 2) / max(n - 1, 1) / n)
        else:
            stderr = np.sqrt(np.sum((w * np.abs(f - value)) ** 2)) / np.sum(w)
    if ess < ESS_WARN:
        log.warning("reweighted expectation has ESS %.1f below %d", ess, ESS_WARN)
    return Reweighted(value, float(stderr), ess)


@dataclass(frozen=True)
class BoundCheck:
    r: float
    lhs: float
    rhs: float
    stderr: float
    ess_warning: bool = False

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + 5.0 * self.stderr

    def row(self) -> tuple:
        return (self.r, self.lhs, self.rhs, self.stderr, self.passed)


def _char_deviation(gm: GibbsModel, c: np.ndarray, samples: np.ndarray, weights: np.ndarray):
    # accumulate e - 1 directly: exact zero at phi = 0, no cancellation near it
    dev = np.expm1(1j * (samples @ c))
    wsum = np.sum(weights)
    mean = np.sum(weights * dev) / wsum
    stderr = np.sqrt(np.sum((weights * np.abs(dev - mean)) ** 2)) / wsum
    return float(abs(mean)), float(stderr)


def exp_bound_rhs(r: float, z: float) -> float:
    """``Z^{-1} (2 (exp(r^2/2) - 1) + r)``."""
    return (2.0 * math.expm1(0.5 * r * r) + r) / z


def continuity_bound_exp(gm: GibbsModel, c: np.ndarray, samples: np.ndarray,
                         weights: np.ndarray | None = None) -> BoundCheck:
    """``|C_nu(phi) - 1|`` against its exponential-model bound, ``r = |||phi|||``."""
    if gm.kind != "Exp":
        raise ConfigError("this bound applies to the exponential model only")
    c = np.asarray(c, dtype=float)
    w = importance_weights(gm, samples) if weights is None else weights
    lhs, se = _char_deviation(gm, c, samples, w)
    r = triple_norm(gm.base, c)
    return BoundCheck(r, lhs, exp_bound_rhs(r, gm.z.z), se)


def poly_trig_bound_factor(q: float) -> float:
    """``2 q^{1/2} {1 + e^{2q} q^{1/2} (1 + 2^{1/2} q^{1/2})}``.

    ``q`` is the quadratic form ``(G phi, phi)``, the quantity for which
    ``E <phi, .>^{4k} = (4k - 1)!! q^{2k}``.
    """
    s = math.sqrt(q)
    return 2.0 * s * (1.0 + math.exp(2.0 * q) * s * (1.0 + math.sqrt(2.0) * s))


def fourth_moment_density(gm: GibbsModel, samples: np.ndarray) -> Estimate:
    """``E_0[(exp(-V)/Z)^4]`` in log space, with a delta-method stderr."""
    lw = gm.log_weights(samples)
    top = lw.max()
    w = np.exp(lw - top)
    m1, m4 = w.mean(), np.mean(w**4)
    value = m4 / m1**4
    n = len(w)
    infl = (w**4 - m4) / m1**4 - 4 * m4 * (w - m1) / m1**5
    return Estimate(float(value), float(np.sqrt(np.sum(infl**2)) / n))


def continuity_bound_poly_trig(gm: GibbsModel, c: np.ndarray, samples: np.ndarray) -> BoundCheck:
    """``|C_nu(phi) - 1|`` against the Hoelder-type bound for Poly/Sin/Cos.

    The reported ``r`` is ``|||phi|||``; the bound itself is evaluated at the
    quadratic form ``r^2``.
    """
    if gm.kind not in ("Poly", "Sin", "Cos"):
        raise ConfigError("this bound applies to Poly, Sin and Cos models")
    c = np.asarray(c, dtype=float)
    w = importance_weights(gm, samples)
    lhs, se = _char_deviation(gm, c, samples, w)
    r = triple_norm(gm.base, c)
    m4 = fourth_moment_density(gm, samples)
    ess4 = float(np.sum(w**4) ** 2 / np.sum(w**8))
    rhs = poly_trig_bound_factor(r * r) * m4.value**0.25
    return BoundCheck(r, lhs, rhs, se, ess4 < ESS_WARN)


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


@dataclass(frozen=True)
class InequalityRow:
    name: str
    k: int
    r: Fraction
    lhs: Fraction
    rhs: Fraction

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def auxiliary_inequalities(k_max: int = 12, radii=(Fraction(1, 2), 1, 2)) -> list[InequalityRow]:
    """Exact rational checks of the termwise moment inequalities.

    Every row compares fourth (or second) powers so the arithmetic stays in
    the rationals:

    * ``moment-chain``: ``(1/k!) ((4k-1)!! r^{2k})^{1/4} <= (4r)^{k/2} / sqrt(k!)``
    * ``double-factorial-step``: ``(4k)!! <= ((2k)!!)^2``, the middle step
      of that chain
    * ``even-split``: ``(k!)^{-1/2} <= 2^{-k/2} / (l-1)!`` for ``k = 2l``
    * ``odd-split``: ``(k!)^{-1/2} <= 2^{-k/2} / (l-2)!`` for ``k = 2l-1, l >= 2``
    """
    rows = []
    for r in map(Fraction, radii):
        for k in range(1, k_max + 1):
            kf = math.factorial(k)
            rows.append(InequalityRow(
                "moment-chain", k, r,
                Fraction(_double_factorial(4 * k - 1)) * r ** (2 * k) / kf**4,
                (4 * r) ** (2 * k) / kf**2,
            ))
            rows.append(InequalityRow(
                "double-factorial-step", k, r,
                Fraction(_double_factorial(4 * k)), Fraction(_double_factorial(2 * k) ** 2),
            ))
            if k % 2 == 0:
                l = k // 2
                rows.append(InequalityRow(
                    "even-split", k, r, Fraction(1, kf),
                    Fraction(1, 2**k * math.factorial(l - 1) ** 2),
                ))
            elif k >= 3:
                l = (k + 1) // 2
                rows.append(InequalityRow(
                    "odd-split", k, r, Fraction(1, kf),
                    Fraction(1, 2**k * math.factorial(l - 2) ** 2),
                ))
    return rows


def moment_series_bound(q: float, terms: int = 200) -> float:
    """``sum_{k>=1} (4q)^{k/2} / sqrt(k!)``, the termwise bound before resummation."""
    k = np.arange(1, terms + 1)
    logs = 0.5 * k * math.log(4 * q) - 0.5 * np.array([math.lgamma(j + 1) for j in k])
    return float(np.exp(logs).sum()) if q > 0 else 0.0


def potential_from_config(cfg: dict, grid: GridSpec) -> PotentialSpec:
    """Build a :class:`PotentialSpec` from ``{kind, a0, lambda, n, g: {shape, radius}}``."""
    kind = cfg.get("kind", "Free")
    g_cfg = cfg.get("g", {}) or {}
    cutoff = None if kind == "Free" else cutoff_function(grid, g_cfg.get("shape", "bump"), g_cfg.get("radius"))
    return PotentialSpec(
        kind=kind,
        a0=float(cfg.get("a0", 0.0)),
        coupling=float(cfg.get("lambda", 0.0)),
        degree=int(cfg.get("n", 1)),
        cutoff=cutoff,
        allow_large_charge=bool(cfg.get("allow_large_charge", False)),
    )
