"""Coordinate-wise non-local forms on cylinder functions.

For a measure ``mu`` on coordinate space and ``0 < alpha <= 1`` the form is

    E(u, v) = sum_i  E_mu[ int (u(x^{i<-y}) - u(x)) (v(x^{i<-y}) - v(x))
                            |y - x_i|^{-1-alpha} rho_i(y | x) dy ]

where ``x^{i<-y}`` replaces coordinate ``i`` by ``y`` and ``rho_i`` is the
conditional density of ``x_i`` given the others.  The outer expectation is a
Monte-Carlo average over samples of ``mu``; the inner integral is deterministic
quadrature in ``log |y - x_i|`` on each side of the singularity, with the piece
``|y - x_i| < eps`` replaced by its leading Taylor term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.interpolate import CubicSpline

from ..errors import ConfigError, NumericalError
from ..free_field import FreeFieldModel
from ..interactions import GibbsModel

log = logging.getLogger(__name__)

LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class CylinderFunction:
    """A function of finitely many coordinates.

    ``evaluator`` receives an array of shape ``(..., len(support))`` holding
    the supported coordinates in the order listed and returns shape ``(...)``.
    """

    support: tuple[int, ...]
    evaluator: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    bounded: bool = True

    def __post_init__(self):
        if len(set(self.support)) != len(self.support) or any(i < 0 for i in self.support):
            raise ConfigError("support must list distinct nonnegative indices")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.support and max(self.support) >= x.shape[-1]:
            raise ConfigError(f"{self.name or 'function'} needs coordinate {max(self.support)}")
        return np.broadcast_to(
            self.evaluator(x[..., list(self.support)]), x.shape[:-1]
        ).astype(float)

    def restricted(self, xs: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.evaluator(xs), xs.shape[:-1]).astype(float)

    def check_locality(self, x: np.ndarray, rng: np.random.Generator, trials: int = 5) -> bool:
        """Perturb an off-support coordinate and confirm the value is unchanged."""
        x = np.array(x, dtype=float)
        off = [j for j in range(x.shape[-1]) if j not in self.support]
        if not off:
            return True
        base = self(x)
        for _ in range(trials):
            y = x.copy()
            y[..., rng.choice(off)] += rng.normal(scale=10.0)
            if not np.array_equal(self(y), base):
                return False
        return True


def constant(value: float = 1.0) -> CylinderFunction:
    return CylinderFunction((), lambda xs: np.full(xs.shape[:-1], float(value)), f"const({value})")


def coordinate(i: int) -> CylinderFunction:
    """The (unbounded) coordinate projection ``x -> x_i``."""
    return CylinderFunction((i,), lambda xs: xs[..., 0], f"x{i}", bounded=False)


def linear_combination(terms: Sequence[tuple[float, CylinderFunction]]) -> CylinderFunction:
    support = tuple(sorted({i for _, u in terms for i in u.support}))
    pos = {i: k for k, i in enumerate(support)}
    picks = [[pos[i] for i in u.support] for _, u in terms]

    def ev(xs):
        return sum(a * u.restricted(xs[..., p]) for (a, u), p in zip(terms, picks))

    name = " + ".join(f"{a}*{u.name}" for a, u in terms)
    return CylinderFunction(support, ev, name, all(u.bounded for _, u in terms))


def unit_contraction(u: CylinderFunction) -> CylinderFunction:
    """``min(max(u, 0), 1)``."""
    return CylinderFunction(
        u.support, lambda xs: np.clip(u.restricted(xs), 0.0, 1.0), f"clip({u.name})", True
    )


def cylinder_panel(k: int) -> list[CylinderFunction]:
    """Ten smooth cylinder functions on the first ``min(k, 4)`` coordinates.

    Several take values outside ``[0, 1]`` so the unit contraction is not the
    identity on them.
    """
    if k < 2:
        raise ConfigError("the panel needs at least two coordinates")
    b = min(k, 4) - 1
    return [
        CylinderFunction((0,), lambda xs: np.tanh(2 * xs[..., 0]), "tanh(2x0)"),
        CylinderFunction((1,), lambda xs: 1.5 * np.sin(3 * xs[..., 0]) + 0.3, "1.5sin(3x1)+0.3"),
        CylinderFunction((0, 1), lambda xs: np.exp(-(xs[..., 0] ** 2 + xs[..., 1] ** 2)), "exp(-x0^2-x1^2)"),
        CylinderFunction((0, 1), lambda xs: 2 * np.cos(xs[..., 0] - xs[..., 1]), "2cos(x0-x1)"),
        CylinderFunction((b,), lambda xs: np.arctan(4 * xs[..., 0]), f"atan(4x{b})"),
        CylinderFunction((0, b), lambda xs: xs[..., 0] * np.exp(-xs[..., 1] ** 2) * 3, f"3x0 exp(-x{b}^2)", False),
        CylinderFunction((1, b), lambda xs: 2 / (1 + 4 * xs[..., 0] ** 2 + xs[..., 1] ** 2), "2/(1+4x1^2+xb^2)"),
        CylinderFunction((0,), lambda xs: np.sin(5 * xs[..., 0]) ** 2 * 1.8 - 0.4, "1.8sin(5x0)^2-0.4"),
        CylinderFunction((0, 1, b), lambda xs: np.tanh(xs[..., 0] + 2 * xs[..., 1] - xs[..., 2]) * 1.2, "1.2tanh(x0+2x1-xb)"),
        CylinderFunction((1,), lambda xs: 3 * np.exp(-8 * xs[..., 0] ** 2) - 1, "3exp(-8x1^2)-1"),
    ]


def phi_alpha(u: CylinderFunction, v: CylinderFunction, i: int, y, y2, x: np.ndarray, alpha: float):
    """Increment product of ``u, v`` in coordinate ``i`` over ``|y - y2|^{1+alpha}``."""
    y = np.asarray(y, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    if np.any(y == y2):
        raise ConfigError("the kernel is singular on the diagonal y = y'")
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(y.shape, y2.shape)
    xa = np.broadcast_to(x, shape + x.shape[-1:]).copy()
    xb = xa.copy()
    xa[..., i] = np.broadcast_to(y, shape)
    xb[..., i] = np.broadcast_to(y2, shape)
    return (u(xa) - u(xb)) * (v(xa) - v(xb)) / np.abs(y - y2) ** (1 + alpha)


# ---------------------------------------------------------------- conditionals


@dataclass(frozen=True, eq=False)
class ConditionalDensity:
    """Law of coordinate ``i`` given the others.

    Gaussian densities are exact; tabulated ones store a normalized
    log-density on a grid and are zero outside it.
    """

    i: int
    mean: float
    std: float
    kind: str = "gaussian"
    grid: np.ndarray | None = None
    log_table: np.ndarray | None = None
    normalization_error: float = 0.0

    @cached_property
    def _spline(self):
        return CubicSpline(self.grid, self.log_table)

    def logpdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind == "gaussian":
            return -0.5 * ((y - self.mean) / self.std) ** 2 - np.log(self.std) - LOG_SQRT_2PI
        out = np.full(y.shape, -np.inf)
        inside = (y >= self.grid[0]) & (y <= self.grid[-1])
        out[inside] = self._spline(y[inside])
        return out

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.logpdf(y))


class ConditionalEngine:
    """Vectorized conditional densities of a Gaussian or Gibbs coordinate model."""

    def __init__(self, model: FreeFieldModel | GibbsModel):
        self.model = model
        if isinstance(model, GibbsModel):
            self.base = model.base
            self.gibbs = model if model.kind != "Free" else None
        else:
            self.base = model
            self.gibbs = None
        cov = np.asarray(self.base.cov)
        try:
            factor = scipy.linalg.cho_factor(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance is singular; conditionals are undefined") from exc
        prec = scipy.linalg.cho_solve(factor, np.eye(len(cov)))
        self.precision = 0.5 * (prec + prec.T)
        self.pdiag = np.diag(self.precision).copy()

    @property
    def count(self) -> int:
        return len(self.pdiag)

    def gaussian_params(self, i: int, x: np.ndarray):
        """Conditional mean and std of the Gaussian part at ``x`` of shape ``(..., K)``."""
        x = np.asarray(x, dtype=float)
        mean = x[..., i] - (x @ self.precision[:, i]) / self.pdiag[i]
        return mean, np.sqrt(1.0 / self.pdiag[i])

    def _delta_potential(self, i: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``V(x^{i<-y}) - V(x)`` for ``x`` of shape ``(N, K)``, ``y`` of shape ``(N, Q)``."""
        gm = self.gibbs
        phi_i = gm.base.es.basis[i]
        f0 = gm.base.fields(x)
        v0 = gm.potential_at(x)
        out = np.empty(y.shape)
        grid_size = phi_i.shape[0]
        chunk = max(1, 4_000_000 // max(1, y.shape[1] * grid_size))
        for s in range(0, len(x), chunk):
            sl = slice(s, s + chunk)
            shift = (y[sl] - x[sl, i, None])[..., None] * phi_i
            fields = f0[sl, None, :] + shift
            out[sl] = gm.potential_at_fields(fields) - v0[sl, None]
        return out

    def log_normalizer(self, i: int, x: np.ndarray, tol: float = 1e-4, max_points: int = 8193):
        """``log int N(y; m, s) exp(-dV) dy`` by refined trapezoid on ``m +- 8 s``.

        Returns the log-normalizer per sample and the achieved relative change
        between the last two refinements.
        """
        mean, std = self.gaussian_params(i, x)
        npts = 129
        prev = None
        while True:
            u = np.linspace(-8.0, 8.0, npts)
            y = mean[:, None] + std * u
            logf = -0.5 * u**2 - np.log(std) - LOG_SQRT_2PI - self._delta_potential(i, x, y)
            top = logf.max(axis=1, keepdims=True)
            z = np.trapezoid(np.exp(logf - top), y, axis=1) * np.exp(top[:, 0])
            if prev is not None:
                err = float(np.max(np.abs(z / prev - 1)))
                if err <= tol:
                    return np.log(z), err
            if npts >= max_points:
                raise NumericalError(
                    f"conditional density of coordinate {i} under-resolved: "
                    f"normalization still changes by {err:.2e}"
                )
            prev = z
            npts = 2 * npts - 1

    def log_density(self, i: int, x: np.ndarray, y: np.ndarray, log_norm=None) -> np.ndarray:
        """Normalized conditional log-density at points ``y`` of shape ``(N, Q)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mean, std = self.gaussian_params(i, x)
        out = -0.5 * ((y - mean[:, None]) / std) ** 2 - np.log(std) - LOG_SQRT_2PI
        if self.gibbs is not None:
            if log_norm is None:
                log_norm, _ = self.log_normalizer(i, x)
            out = out - self._delta_potential(i, x, y) - log_norm[:, None]
        return out


def conditional_density(
    model: FreeFieldModel | GibbsModel | ConditionalEngine,
    i: int,
    x: np.ndarray,
    representation: str = "auto",
) -> ConditionalDensity:
    """Conditional law of ``x_i`` given the remaining coordinates of ``x``.

    Free-field models give an exact Gaussian.  Gibbs models (or
    ``representation="tabulated"``) give a density tabulated on the conditional
    Gaussian mean +- 8 std, trapezoid-normalized, refined until the
    normalization changes by at most 1e-4 between refinements.
    """
    eng = model if isinstance(model, ConditionalEngine) else ConditionalEngine(model)
    x = np.asarray(x, dtype=float)
    if x.shape != (eng.count,):
        raise ConfigError(f"expected {eng.count} coordinates, got shape {x.shape}")
    if not 0 <= i < eng.count:
        raise ConfigError(f"coordinate {i} out of range")
    mean, std = eng.gaussian_params(i, x)
    mean = float(mean)
    if representation == "auto":
        representation = "gaussian" if eng.gibbs is None else "tabulated"
    if representation == "gaussian":
        if eng.gibbs is not None:
            raise ConfigError("an interacting model has no Gaussian conditional")
        return ConditionalDensity(i, mean, float(std))
    if representation != "tabulated":
        raise ConfigError(f"unknown representation {representation!r}")
    err = 0.0
    npts = 257
    if eng.gibbs is not None:
        log_norm, err = eng.log_normalizer(i, x[None, :])
    ys = mean + std * np.linspace(-8.0, 8.0, npts)
    while True:
        logp = eng.log_density(i, x[None, :], ys[None, :], log_norm if eng.gibbs is not None else None)[0]
        total = np.trapezoid(np.exp(logp), ys)
        # renormalize on the table itself so the stored density integrates to one
        logp = logp - np.log(total)
        fine = np.linspace(ys[0], ys[-1], 2 * npts - 1)
        check = np.trapezoid(np.exp(CubicSpline(ys, logp)(fine)), fine)
        if abs(check - 1) <= 1e-6 or npts > 16_000:
            break
        npts = 2 * npts - 1
        ys = mean + std * np.linspace(-8.0, 8.0, npts)
    return ConditionalDensity(i, mean, float(std), "tabulated", ys, logp, max(err, abs(check - 1)))


# ------------------------------------------------------------------ form value


@dataclass(frozen=True)
class InnerRule:
    """Inner singular quadrature settings.

    ``eps`` is the Taylor split radius in units of the conditional std; the
    regular part uses ``panels`` Gauss-Legendre panels of ``order`` points in
    ``log |y - x_i|`` on each side, out to ``tail`` stds beyond the mean.
    """

    eps: float = 1e-4
    panels: int = 16
    order: int = 10
    tail: float = 10.0
    tail_tol: float = 1e-6

    def nodes(self, order: int | None = None):
        order = order or self.order
        u, w = np.polynomial.legendre.leggauss(order)
        u, w = 0.5 * (u + 1), 0.5 * w
        edges = np.linspace(0.0, 1.0, self.panels + 1)
        width = np.diff(edges)
        nodes = (edges[:-1, None] + width[:, None] * u).ravel()
        weights = (width[:, None] * w).ravel()
        return nodes, weights


@dataclass(frozen=True)
class FormEstimate:
    value: float
    stderr: float
    mc_stderr: float
    quad_error: float
    per_coordinate: dict = field(default_factory=dict)
    extension: bool = False


def _increment_values(u: CylinderFunction, i: int, x: np.ndarray, y: np.ndarray):
    """``u(x^{i<-y}) - u(x)`` for ``x`` ``(N, K)`` and ``y`` ``(N, Q)``; None if ``i`` is off-support."""
    if i not in u.support:
        return None
    xs = x[:, list(u.support)]
    col = u.support.index(i)
    base = u.restricted(xs)
    moved = np.broadcast_to(xs[:, None, :], y.shape + (len(u.support),)).copy()
    moved[..., col] = y
    return u.restricted(moved) - base[:, None]


def _inner_integral(eng, u, v, i, x, alpha, rule, order=None, log_norm=None):
    """Per-sample inner integral for coordinate ``i``; also returns the last-panel share."""
    mean, std = eng.gaussian_params(i, x)
    xi = x[:, i]
    eps = rule.eps * std
    reach = np.abs(mean - xi) + rule.tail * std
    t_nodes, t_w = rule.nodes(order)
    lo, hi = np.log(eps), np.log(reach)
    if np.any(hi <= lo):
        raise NumericalError("inner integration range collapsed")
    t = lo + (hi - lo)[:, None] * t_nodes
    delta = np.exp(t)
    wts = (hi - lo)[:, None] * t_w * delta * delta ** (-1.0 - alpha)
    total = np.zeros(len(x))
    last = np.zeros(len(x))
    per_panel = (rule.order if order is None else order)
    for sign in (1.0, -1.0):
        y = xi[:, None] + sign * delta
        du = _increment_values(u, i, x, y)
        dv = _increment_values(v, i, x, y)
        if du is None or dv is None:
            return np.zeros(len(x)), np.zeros(len(x))
        dens = np.exp(eng.log_density(i, x, y, log_norm))
        with np.errstate(over="ignore", invalid="ignore"):
            contrib = du * dv * dens * wts
        total += contrib.sum(axis=1)
        # magnitude of the integrand at the far end, scaled to one panel
        last += np.abs(contrib[:, -1]) * per_panel
    # |y - x_i| < eps: leading Taylor term with central-difference derivatives
    yy = xi[:, None] + np.array([eps, -eps]).T
    du = _increment_values(u, i, x, yy)
    dv = _increment_values(v, i, x, yy)
    grad_u = (du[:, 0] - du[:, 1]) / (2 * eps)
    grad_v = (dv[:, 0] - dv[:, 1]) / (2 * eps)
    dens0 = np.exp(eng.log_density(i, x, xi[:, None], log_norm))[:, 0]
    total += grad_u * grad_v * dens0 * 2 * eps ** (2 - alpha) / (2 - alpha)
    return total, last


def form_value(
    u: CylinderFunction,
    v: CylinderFunction,
    model: FreeFieldModel | GibbsModel | ConditionalEngine,
    alpha: float,
    samples: np.ndarray,
    rule: InnerRule = InnerRule(),
    weights: np.ndarray | None = None,
) -> FormEstimate:
    """Monte-Carlo estimate of ``E(u, v)`` from outer samples of the measure.

    For a Gibbs model with free-field ``samples`` the outer average is
    importance-weighted by ``exp(-V)`` unless ``weights`` are given.  Only
    coordinates in both supports can contribute; all others add exactly zero.
    """
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    eng = model if isinstance(model, ConditionalEngine) else ConditionalEngine(model)
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[1] != eng.count:
        raise ConfigError(f"samples have {x.shape[1]} coordinates, model has {eng.count}")
    union = sorted(set(u.support) | set(v.support))
    if union and union[-1] >= eng.count:
        raise ConfigError(f"support reaches coordinate {union[-1]} beyond K = {eng.count}")
    if weights is None and eng.gibbs is not None:
        lw = eng.gibbs.log_weights(x)
        weights = np.exp(lw - lw.max())
    n = len(x)
    totals = np.zeros(n)
    coarse = np.zeros(n)
    per = {}
    for i in union:
        if i not in u.support or i not in v.support:
            per[i] = 0.0
            continue
        log_norm = eng.log_normalizer(i, x)[0] if eng.gibbs is not None else None
        fine, last = _inner_integral(eng, u, v, i, x, alpha, rule, log_norm=log_norm)
        # far-end share of the summed inner integrals: a slowly decaying
        # integrand (divergent for unbounded u) leaves a large share there
        if not np.all(np.isfinite(fine)) or last.sum() > rule.tail_tol * max(np.abs(fine).sum(), 1e-300):
            raise NumericalError(f"inner integral for coordinate {i} fails the tail test")
        low, _ = _inner_integral(eng, u, v, i, x, alpha, rule, order=max(2, rule.order // 2), log_norm=log_norm)
        totals += fine
        coarse += low
        per[i] = float(_average(fine, weights)[0])
    value, mc = _average(totals, weights)
    quad = abs(value - _average(coarse, weights)[0])
    return FormEstimate(
        float(value), float(np.hypot(mc, quad)), float(mc), float(quad), per,
        extension=not (u.bounded and v.bounded),
    )


def _average(vals: np.ndarray, weights: np.ndarray | None):
    n = len(vals)
    if weights is None:
        mean = vals.mean()
        se = vals.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
        return mean, se
    w = np.asarray(weights, dtype=float)
    mean = np.sum(w * vals) / np.sum(w)
    return mean, np.sqrt(np.sum((w * (vals - mean)) ** 2)) / np.sum(w)
