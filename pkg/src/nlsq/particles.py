"""Classical particle configurations on a finite window.

A configuration is the measure ``z = sum_j m_j delta_{y_j}``.  This module
counts occupations of the unit cubes ``Q_r = prod_j [r_j - 1/2, r_j + 1/2)``,
tests the Ruelle-type sets ``U_N``, embeds configurations into the coordinates
of an ``Htilde`` eigensystem and checks the bound
``|<z, phi>| <= C3 ||phi||_{Htilde_1}`` numerically.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.special import zeta

from ._rng import make_rng
from .errors import ConfigError, NumericalError
from .spectral_core import EigenSystem

# (l^2 + 1) / ((l - 1/2)^2 + 1) peaks at l = 1 with value 1.6
SHELL_RATIO = 1.6


@dataclass(frozen=True, eq=False)
class Configuration:
    points: np.ndarray
    mult: np.ndarray
    window: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        if pts.size == 0:
            pts = pts.reshape(0, pts.shape[-1] if pts.ndim == 2 and pts.shape[-1] else 1)
        m = np.asarray(self.mult)
        if m.size == 0:
            m = np.zeros(0, dtype=np.int64)
        if m.shape != (len(pts),):
            raise ConfigError("one multiplicity per point is required")
        if not np.all(m == np.round(m)) or np.any(m < 1):
            raise ConfigError("multiplicities must be positive integers")
        if not self.window > 0:
            raise ConfigError("window half-width must be positive")
        if len(pts) and np.max(np.abs(pts)) > self.window:
            raise ConfigError("all points must lie in the window")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "mult", m.astype(np.int64))

    @classmethod
    def empty(cls, d: int = 1, window: float = 1.0) -> "Configuration":
        return cls(np.zeros((0, d)), np.zeros(0, dtype=np.int64), window)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def total(self) -> int:
        return int(self.mult.sum())

    def union(self, other: "Configuration") -> "Configuration":
        if other.d != self.d:
            raise ConfigError("dimensions differ")
        return Configuration(
            np.concatenate([self.points, other.points]),
            np.concatenate([self.mult, other.mult]),
            max(self.window, other.window),
        )

    def scaled(self, c: int) -> "Configuration":
        return Configuration(self.points, self.mult * int(c), self.window)

    def to_json(self) -> str:
        body = {"d": self.d, "window": self.window,
                "points": [{"y": [float(v) for v in y], "m": int(m)} for y, m in zip(self.points, self.mult)]}
        return json.dumps(body, indent=1)

    @classmethod
    def from_json(cls, text: str | dict) -> "Configuration":
        body = json.loads(text) if isinstance(text, str) else text
        try:
            d = int(body.get("d", 1))
            pts = [p["y"] for p in body["points"]]
            mult = [p.get("m", 1) for p in body["points"]]
            window = float(body["window"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed configuration: {exc}") from exc
        if not pts:
            return cls.empty(d, window)
        return cls(np.array(pts, dtype=float).reshape(len(pts), -1), np.array(mult), window)

    @cached_property
    def occupation(self) -> dict[tuple[int, ...], int]:
        out: dict[tuple[int, ...], int] = {}
        for r, m in zip(map(tuple, cube_index(self.points)), self.mult):
            out[r] = out.get(r, 0) + int(m)
        return out


def cube_index(y: np.ndarray) -> np.ndarray:
    """Lattice point ``r`` with ``y`` in the half-open cube ``Q_r``."""
    return np.floor(np.asarray(y, dtype=float) + 0.5).astype(np.int64)


def occupation_count(conf: Configuration, r: Sequence[int]) -> int:
    return conf.occupation.get(tuple(int(v) for v in np.atleast_1d(r)), 0)


@dataclass(frozen=True)
class MembershipResult:
    member: bool
    worst_l: int
    worst_ratio: float


def u_n_membership(conf: Configuration, N: int, l_max: int | None = None) -> MembershipResult:
    """``sum_{|r|_inf <= l} n(r)^2 <= N^2 (2l + 1)^d`` for ``l = 0..l_max``."""
    if N < 1:
        raise ConfigError("N must be a positive integer")
    need = math.ceil(conf.window + 0.5)
    l_max = need if l_max is None else int(l_max)
    occ = conf.occupation
    if occ:
        reach = max(max(abs(v) for v in r) for r in occ)
        if reach > l_max:
            raise ConfigError(f"l_max = {l_max} misses occupied cubes out to |r| = {reach}")
    shells = np.zeros(l_max + 1)
    for r, n in occ.items():
        shells[max(abs(v) for v in r)] += n * n
    lhs = np.cumsum(shells)
    ls = np.arange(l_max + 1)
    ratio = lhs / (N**2 * (2 * ls + 1.0) ** conf.d)
    worst = int(np.argmax(ratio))
    return MembershipResult(bool(np.all(lhs <= N**2 * (2 * ls + 1) ** conf.d)), worst, float(ratio[worst]))


@dataclass(frozen=True)
class RuelleParams:
    gamma: float
    delta: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")


def geometric_tail(gap: float) -> float:
    """``sum_{l >= 0} q^{l+1} = q / (1 - q)`` with ``q = exp(-gap)``."""
    if not gap > 0:
        raise NumericalError(
            f"geometric tail diverges: need gamma N^2 > e^delta, got gamma N^2 - e^delta = {gap:.6g}"
        )
    return 1.0 / math.expm1(gap)


def ruelle_tail_bound(params: RuelleParams, N: int) -> float:
    """Geometric tail bound at ``q = exp(-(gamma N^2 - e^delta))``."""
    return geometric_tail(params.gamma * N**2 - math.exp(params.delta))


def sample_poisson_config(intensity: float, window: float, d: int = 1, seed: int = 0, stream: int = 0) -> Configuration:
    if not intensity > 0 or not window > 0:
        raise ConfigError("intensity and window must be positive")
    rng = make_rng(seed, stream)
    n = rng.poisson(intensity * (2 * window) ** d)
    pts = rng.uniform(-window, window, size=(n, d))
    return Configuration(pts, np.ones(n, dtype=np.int64), window)


def sample_poisson_in_u_n(intensity, window, d, N, seed, count, max_tries: int | None = None):
    """``count`` Poisson configurations conditioned into ``U_N`` by rejection."""
    out, stream = [], 0
    max_tries = max_tries or 100 * count
    while len(out) < count:
        if stream >= max_tries:
            raise NumericalError(f"only {len(out)} of {count} draws landed in U_{N}")
        c = sample_poisson_config(intensity, window, d, seed, stream)
        stream += 1
        if u_n_membership(c, N).member:
            out.append(c)
    return out, stream


# ----------------------------------------------------------------- embedding


def _check_tilde(es: EigenSystem):
    if es.grid is None or es.spec is None or es.spec.kind != "Htilde":
        raise ConfigError("embedding needs an eigensystem of the Htilde operator with its grid")


def basis_at(es: EigenSystem, y: np.ndarray, k_modes: int | None = None) -> np.ndarray:
    """Eigenfunctions at off-grid points by periodic cubic-spline interpolation, shape ``(k, n_pts)``."""
    _check_tilde(es)
    grid = es.grid
    k = es.count if k_modes is None else int(k_modes)
    if not 1 <= k <= es.count:
        raise ConfigError(f"k_modes must lie in 1..{es.count}")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[1] != grid.d:
        raise ConfigError(f"points are {y.shape[1]}-dimensional, grid is {grid.d}-dimensional")
    if len(y) and np.max(np.abs(y)) >= grid.L:
        raise ConfigError("points must lie strictly inside the grid domain")
    idx = ((y + grid.L) / grid.h).T
    out = np.empty((k, len(y)))
    for i in range(k):
        out[i] = map_coordinates(es.basis[i].reshape(grid.shape), idx, order=3, mode="grid-wrap")
    return out


def embed(conf: Configuration, es: EigenSystem, k_modes: int | None = None) -> np.ndarray:
    """``<z, phi_i> = sum_j m_j phi_i(y_j)`` for the first ``k_modes`` modes."""
    k = es.count if k_modes is None else int(k_modes)
    if conf.total == 0:
        _check_tilde(es)
        return np.zeros(k)
    return basis_at(es, conf.points, k) @ conf.mult


def h1_norm(es: EigenSystem, c: np.ndarray) -> np.ndarray:
    """``(sum_i c_i^2 lambda_i^{-2})^{1/2}`` for coefficient vector(s) ``c``."""
    c = np.asarray(c, dtype=float)
    lam = es.lambdas[: c.shape[-1]]
    return np.sqrt(np.sum((c / lam) ** 2, axis=-1))


def dual_norm(es: EigenSystem, coords: np.ndarray) -> float:
    """``(sum_i lambda_i^2 <z, phi_i>^2)^{1/2}``: the largest ratio over the span."""
    coords = np.asarray(coords, dtype=float)
    return float(np.sqrt(np.sum((es.lambdas[: len(coords)] * coords) ** 2)))


def embedding_csv(coords: np.ndarray, es: EigenSystem, header: str = "") -> str:
    buf = io.StringIO()
    buf.write(header)
    buf.write("mode,coordinate,lambda_tilde\n")
    for i, (c, lam) in enumerate(zip(coords, es.lambdas), start=1):
        buf.write(f"{i},{c:.17g},{lam:.17g}\n")
    return buf.getvalue()


def coefficient_panel(es: EigenSystem, count: int = 50, seed: int = 0, k_modes: int | None = None) -> np.ndarray:
    """Random coefficient vectors with ``lambda``-shaped decay."""
    k = es.count if k_modes is None else k_modes
    rng = make_rng(seed, 0)
    return rng.standard_normal((count, k)) * es.lambdas[:k]


def c3_shape(N: int, d: int) -> float:
    """``N^2 (sum_{l >= 0} (l + 1)^{-d/2 - 5/2} + 1)``."""
    return N**2 * (float(zeta(d / 2 + 2.5)) + 1.0)


def lattice_configuration(window: float, d: int) -> Configuration:
    """One unit point at every integer site of the window (a member of ``U_1``)."""
    w = int(math.floor(window))
    axes = [np.arange(-w, w + 1, dtype=float)] * d
    pts = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
    return Configuration(pts, np.ones(len(pts), dtype=np.int64), window)


@dataclass(frozen=True)
class BoundCheck:
    max_ratio: float
    dual: float
    c3: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.c3 and self.dual <= self.c3


def calibrate_c3(es: EigenSystem, window: float, k_modes: int | None = None) -> float:
    """Constant ``kappa`` with ``C3 = kappa * c3_shape(N, d)``, fixed by the unit lattice at ``N = 1``."""
    ref = lattice_configuration(window, es.grid.d)
    return dual_norm(es, embed(ref, es, k_modes)) / c3_shape(1, es.grid.d)


def embedding_bound_check(
    conf: Configuration, N: int, es: EigenSystem, panel: np.ndarray, kappa: float
) -> BoundCheck:
    """Largest ``|<z, phi>| / ||phi||_1`` over the panel against ``C3``.

    ``dual`` is the supremum over the whole truncated span, which the panel
    ratio can only approach from below.
    """
    if not u_n_membership(conf, N).member:
        raise ConfigError(f"configuration is not in U_{N}")
    k = panel.shape[1]
    z = embed(conf, es, k)
    ratios = np.abs(panel @ z) / h1_norm(es, panel)
    return BoundCheck(float(ratios.max()) if len(ratios) else 0.0, dual_norm(es, z),
                      kappa * c3_shape(N, es.grid.d))


# ---------------------------------------------------------------- cell decay


def cell_weight_integral(r: Sequence[int], d: int, order: int = 24) -> float:
    """``int_{Q_r} (|y|^2 + 1)^{-2(d+1)} dy`` by tensor Gauss-Legendre."""
    u, w = np.polynomial.legendre.leggauss(order)
    u, w = 0.5 * u, 0.5 * w
    r = np.asarray(r, dtype=float)
    if r.shape != (d,):
        raise ConfigError(f"cube index must have {d} components")
    mesh = np.meshgrid(*[rj + u for rj in r], indexing="ij")
    wts = np.ones(())
    for _ in range(d):
        wts = np.multiply.outer(wts, w)
    sq = sum(m**2 for m in mesh)
    return float(np.sum(wts * (sq + 1.0) ** (-2 * (d + 1))))


def cell_decay_constant(d: int) -> float:
    """Analytic ``C`` with ``int_{Q_r} ... <= C (l^2 + 1)^{-(3d+5)/2}`` for ``|r|_inf = l``."""
    return SHELL_RATIO ** (2 * d + 2)


def cell_decay_scan(d: int, l_max: int = 20, order: int = 24) -> list[tuple[int, float]]:
    """Per shell ``l``, the largest ``integral * (l^2 + 1)^{(3d+5)/2}`` over cubes with ``|r|_inf = l``."""
    rows = []
    for l in range(l_max + 1):
        if d == 1:
            cubes = [(l,)]
        else:
            # symmetry: r = (l, j) with 0 <= j <= l covers the shell
            cubes = [(l, j) for j in range(l + 1)]
        worst = max(cell_weight_integral(r, d, order) for r in cubes)
        rows.append((l, worst * (l * l + 1.0) ** ((3 * d + 5) / 2)))
    return rows
