"""Windowed one-dimensional jump forms and their local limit as alpha -> 2.

For a density ``rho`` on the line and a window half-width ``M`` the windowed form is

    W(f, g) = int rho(x) int_{|y - x| <= M} (f(y) - f(x)) (g(y) - g(x)) |y - x|^{-1-alpha} rho(y) dy dx.

With the global window ``M(alpha) = (1 - alpha/2)^{1/(2-alpha)}`` it tends to
``int f' g' rho^2``; with the local window
``M(alpha; x) = ((1 - alpha/2) / rho(x))^{1/(2-alpha)}`` it tends to ``int f' g' rho``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from ..errors import ConfigError

WINDOWS = ("global", "local")
EDGE_TOL = 1e-13


def _hermite_derivs(u: np.ndarray, order: int) -> list[np.ndarray]:
    """``d^k/du^k exp(-u^2/2)`` for ``k = 0..order``."""
    e = np.exp(-0.5 * u * u)
    he = [np.ones_like(u), u]
    for k in range(1, order):
        he.append(u * he[k] - k * he[k - 1])
    return [(-1) ** k * he[k] * e for k in range(order + 1)]


@dataclass(frozen=True)
class Smooth1D:
    """``offset + sum_j a_j exp(-(x - c_j)^2 / (2 w_j^2))`` with exact derivatives."""

    bumps: tuple[tuple[float, float, float], ...] = ()
    offset: float = 0.0

    def derivs(self, x, order: int = 3) -> list[np.ndarray]:
        x = np.asarray(x, dtype=float)
        out = [np.full(x.shape, self.offset)] + [np.zeros(x.shape) for _ in range(order)]
        for a, c, w in self.bumps:
            for k, d in enumerate(_hermite_derivs((x - c) / w, order)):
                out[k] = out[k] + a * d / w**k
        return out

    def __call__(self, x) -> np.ndarray:
        return self.derivs(x, 0)[0]

    def scaled(self, s: float) -> "Smooth1D":
        return Smooth1D(tuple((s * a, c, w) for a, c, w in self.bumps), s * self.offset)

    @property
    def reach(self) -> tuple[float, float]:
        """Interval outside which every bump is below ``1e-16`` of its amplitude."""
        if not self.bumps:
            return (0.0, 0.0)
        k = np.sqrt(2 * np.log(1e16))
        return (min(c - k * w for _, c, w in self.bumps), max(c + k * w for _, c, w in self.bumps))


def gaussian_bump(center: float = 0.0, width: float = 0.5, amplitude: float = 1.0) -> Smooth1D:
    return Smooth1D(((amplitude, center, width),))


@dataclass(frozen=True)
class GaussianDensity1D:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigError("density std must be positive")

    def derivs(self, x, order: int = 2) -> list[np.ndarray]:
        u = (np.asarray(x, dtype=float) - self.mean) / self.std
        norm = 1.0 / (self.std * np.sqrt(2 * np.pi))
        return [norm * d / self.std**k for k, d in enumerate(_hermite_derivs(u, order))]

    def __call__(self, x) -> np.ndarray:
        return self.derivs(x, 0)[0]

    def support(self, sigmas: float = 12.0) -> tuple[float, float]:
        return (self.mean - sigmas * self.std, self.mean + sigmas * self.std)


def window_global(alpha: float) -> float:
    """``(1 - alpha/2)^{1/(2 - alpha)}``."""
    _check_alpha(alpha)
    return (1 - 0.5 * alpha) ** (1 / (2 - alpha))


def window_local(alpha: float, rho_x) -> np.ndarray:
    """``((1 - alpha/2) / rho(x))^{1/(2 - alpha)}``."""
    _check_alpha(alpha)
    rho_x = np.asarray(rho_x, dtype=float)
    if np.any(rho_x <= 0):
        raise ConfigError("the density must be positive where the local window is used")
    return ((1 - 0.5 * alpha) / rho_x) ** (1 / (2 - alpha))


def _check_alpha(alpha):
    if not 0 < alpha < 2:
        raise ConfigError(f"alpha must lie in (0, 2), got {alpha}")


@dataclass(frozen=True)
class WindowRule:
    """Quadrature settings: composite Gauss-Legendre everywhere.

    The outer integral uses ``outer_panels`` panels over the domain.  The inner
    integral splits at ``eps`` (Taylor piece), uses ``log_panels`` panels in
    ``log |y - x|`` up to ``knee`` and linear panels no wider than ``step`` beyond.
    """

    eps: float = 1e-4
    knee: float = 0.05
    log_panels: int = 12
    step: float = 0.2
    outer_panels: int = 120
    order: int = 8


def _gl(order):
    u, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (u + 1), 0.5 * w


def _composite(lo, hi, panels, order):
    """Nodes and weights on ``[lo, hi]`` per row, shapes ``(P, panels*order)``."""
    u, w = _gl(order)
    s = (np.arange(panels)[:, None] + u).ravel() / panels
    ws = np.tile(w, panels) / panels
    span = (hi - lo)[:, None]
    return lo[:, None] + span * s, span * ws


def windowed_form_1d(
    f: Smooth1D,
    g: Smooth1D,
    rho: GaussianDensity1D,
    alpha: float,
    window: str = "global",
    domain: tuple[float, float] | None = None,
    rule: WindowRule = WindowRule(),
) -> float:
    """Value of the windowed double integral.

    The inner window is clipped to ``domain`` (default ``rho`` mean +- 12 std);
    clipping is refused unless ``rho`` is negligible at the domain edges.
    """
    _check_alpha(alpha)
    if window not in WINDOWS:
        raise ConfigError(f"window must be one of {WINDOWS}")
    a, b = domain if domain is not None else rho.support()
    if not a < b:
        raise ConfigError("empty quadrature domain")
    edge = max(float(rho(a)), float(rho(b)))
    peak = float(rho(rho.mean)) if a <= rho.mean <= b else max(float(rho(a)), float(rho(b)))
    for h in (f, g):
        lo, hi = h.reach
        if h.bumps and (lo < a or hi > b):
            raise ConfigError("f and g must be negligible outside the quadrature domain")

    x, wx = _composite(np.array([a]), np.array([b]), rule.outer_panels, rule.order)
    x, wx = x[0], wx[0]
    fd, gd, rd = f.derivs(x, 3), g.derivs(x, 3), rho.derivs(x, 2)
    r0 = rd[0]
    if window == "global":
        m = np.full_like(x, window_global(alpha))
        # 2 M^{2-alpha} / (2 - alpha), exactly
        lead = np.ones_like(x)
    else:
        # far in the tails the window overflows; it is clipped to the domain below
        with np.errstate(over="ignore"):
            m = window_local(alpha, r0)
        lead = 1.0 / r0
    left, right = np.minimum(m, x - a), np.minimum(m, b - x)
    if np.any((left < m) | (right < m)) and edge > EDGE_TOL * peak:
        raise ConfigError("window exceeds the quadrature domain where the density is not negligible")

    # |y - x| < e: even Taylor terms of the integrand
    e = np.minimum(rule.eps, m)
    p2 = fd[1] * gd[1] * r0
    p4 = (r0 * ((fd[1] * gd[3] + fd[3] * gd[1]) / 6 + fd[2] * gd[2] / 4)
          + rd[1] * (fd[1] * gd[2] + fd[2] * gd[1]) / 2 + rd[2] * fd[1] * gd[1] / 2)
    inside = m <= rule.eps
    c2 = np.where(inside, lead, 2 * e ** (2 - alpha) / (2 - alpha))
    m_in = np.where(inside, m, 0.0)
    c4 = np.where(inside, lead * m_in**2 * (2 - alpha) / (4 - alpha), 2 * e ** (4 - alpha) / (4 - alpha))
    inner = p2 * c2 + p4 * c4

    for sign, reach in ((1.0, right), (-1.0, left)):
        top = np.maximum(reach, e)
        knee = np.clip(top, e, rule.knee)
        lo, hi = np.log(e), np.log(knee)
        t, wt = _composite(lo, hi, rule.log_panels, rule.order)
        d = np.exp(t)
        wd = wt * d
        far = top > knee
        panels = max(1, int(np.ceil(np.max(top - knee) / rule.step)))
        d2, wd2 = _composite(knee, np.where(far, top, knee), panels, rule.order)
        d = np.concatenate([d, d2], axis=1)
        wd = np.concatenate([wd, wd2], axis=1)
        # rows whose window lies inside the Taylor piece have nothing left
        empty = top <= e
        d[empty], wd[empty] = 1.0, 0.0
        y = x[:, None] + sign * d
        df = f(y) - fd[0][:, None]
        dg = g(y) - gd[0][:, None]
        inner += np.sum(df * dg * d ** (-1 - alpha) * rho(y) * wd, axis=1)
    return float(np.sum(wx * r0 * inner))


def local_limit_oracle(f: Smooth1D, g: Smooth1D, rho: GaussianDensity1D, window: str = "global") -> float:
    """``int f' g' rho^2`` (global) or ``int f' g' rho`` (local) by adaptive quadrature."""
    if window not in WINDOWS:
        raise ConfigError(f"window must be one of {WINDOWS}")
    power = 2 if window == "global" else 1

    def h(x):
        return f.derivs(x, 1)[1] * g.derivs(x, 1)[1] * rho(x) ** power

    a, b = rho.support()
    pts = sorted({c for _, c, _ in f.bumps + g.bumps if a < c < b})
    val, _ = integrate.quad(h, a, b, points=pts or None, limit=400, epsabs=1e-14, epsrel=1e-12)
    return float(val)


@dataclass(frozen=True)
class ScanRow:
    window: str
    alpha: float
    value: float
    oracle: float

    @property
    def rel_error(self) -> float:
        return abs(self.value - self.oracle) / abs(self.oracle)


def local_limit_scan(
    f: Smooth1D,
    g: Smooth1D,
    rho: GaussianDensity1D,
    alphas: Sequence[float] = (1.0, 1.5, 1.9, 1.99),
    windows: Sequence[str] = WINDOWS,
    rule: WindowRule = WindowRule(),
) -> list[ScanRow]:
    rows = []
    for w in windows:
        oracle = local_limit_oracle(f, g, rho, w)
        for a in alphas:
            rows.append(ScanRow(w, float(a), windowed_form_1d(f, g, rho, a, w, rule=rule), oracle))
    return rows


def errors_decrease(rows: Sequence[ScanRow], floor: float = 1e-12) -> bool:
    """Relative errors are nonincreasing in alpha per window, ignoring changes below ``floor``."""
    ok = True
    for w in {r.window for r in rows}:
        errs = [r.rel_error for r in sorted((r for r in rows if r.window == w), key=lambda r: r.alpha)]
        ok &= all(b <= a or b <= floor for a, b in zip(errs, errs[1:]))
    return bool(ok)


def scan_csv(rows: Sequence[ScanRow]) -> str:
    buf = io.StringIO()
    buf.write("window,alpha,windowed_value,oracle_value,rel_error\n")
    for r in rows:
        buf.write(f"{r.window},{r.alpha!r},{r.value:.17g},{r.oracle:.17g},{r.rel_error:.6e}\n")
    return buf.getvalue()
