"""Discretized weighted pseudo-differential operators and their eigen-coordinates.

The operators act on grid functions over the periodic box ``[-L, L)^d``.  The
multiplication factor ``(|x|^2 + 1)^p`` is applied pointwise and the factor
``(-Delta + m0^2)^q`` through its discrete Fourier symbol, so both factors are
diagonal in some basis and their composition is exact up to round-off.

Eigenvalues are always those of the *inverse* operator, sorted decreasing and
rescaled so the largest equals one; the rescale factor is kept on the
:class:`EigenSystem` so raw values can be recovered.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericalError, ResourceError

#: Largest number of grid points (``n**d``) a dense operator may have.
MODE_BUDGET = 4096

OPERATOR_KINDS = ("H", "Htilde")


@dataclass(frozen=True)
class GridSpec:
    """Periodic grid on ``[-L, L)^d`` with ``n`` points per axis."""

    d: int = 1
    L: float = 10.0
    n: int = 128

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.d}")
        if self.n < 8 or self.n % 2:
            raise ConfigError(f"points per axis must be even and >= 8, got {self.n}")
        if not self.L > 0:
            raise ConfigError(f"half-width must be positive, got {self.L}")
        if self.size > MODE_BUDGET:
            raise ResourceError(
                f"grid has {self.size} points, above the mode budget {MODE_BUDGET}"
            )

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def size(self) -> int:
        return self.n**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def points(self) -> np.ndarray:
        """Grid points as an ``(n**d, d)`` array in C order."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def frequencies(self) -> np.ndarray:
        """Angular frequencies along one axis, in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.h)

    @cached_property
    def frequency_sq(self) -> np.ndarray:
        """``|xi|^2`` on the frequency grid, shape ``(n,)*d``."""
        mesh = np.meshgrid(*([self.frequencies] * self.d), indexing="ij")
        return sum(m**2 for m in mesh)

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Grid L^2 inner product over the last axis."""
        return self.cell_volume * np.sum(f * g, axis=-1)

    def to_dict(self) -> dict:
        return {"d": self.d, "L": self.L, "n": self.n}


@dataclass(frozen=True)
class OperatorSpec:
    """Which operator to discretize.

    ``kind="H"`` uses exponent ``(d+1)/2`` on both multiplication factors,
    ``kind="Htilde"`` uses ``d+1``; both use ``(d+1)/2`` on the Laplacian
    factor.  The exponent overrides exist for tests and experiments.
    """

    kind: str = "H"
    d: int = 1
    m0: float = 1.0
    mult_power: float | None = None
    lap_power: float | None = None

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ConfigError(f"operator kind must be one of {OPERATOR_KINDS}")
        if self.d not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.d}")
        if not self.m0 > 0:
            raise ConfigError("mass must be positive")

    @property
    def p(self) -> float:
        if self.mult_power is not None:
            return float(self.mult_power)
        return (self.d + 1) / 2 if self.kind == "H" else float(self.d + 1)

    @property
    def q(self) -> float:
        if self.lap_power is not None:
            return float(self.lap_power)
        return (self.d + 1) / 2

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "m0": self.m0, "p": self.p, "q": self.q}


def _check_compatible(grid: GridSpec, spec: OperatorSpec):
    if grid.d != spec.d:
        raise ConfigError(f"grid dimension {grid.d} != operator dimension {spec.d}")


def fourier_multiplier_matrix(grid: GridSpec, symbol: np.ndarray) -> np.ndarray:
    """Dense matrix of the periodic convolution with Fourier symbol ``symbol``.

    ``symbol`` has shape ``grid.shape`` in FFT order and must be even in the
    frequency, so the matrix is real and symmetric.
    """
    kernel = np.fft.ifftn(symbol).real
    idx = np.indices(grid.shape).reshape(grid.d, -1)
    diff = tuple((idx[k][:, None] - idx[k][None, :]) % grid.n for k in range(grid.d))
    return kernel[diff]


def build_operator_matrix(
    grid: GridSpec, spec: OperatorSpec, *, inverse: bool = False
) -> np.ndarray:
    """Matrix of ``M^p (-Delta + m0^2)^q M^p`` (or its exact inverse) on the grid.

    ``M = |x|^2 + 1`` acts pointwise.  With ``inverse=True`` every exponent is
    negated, which gives the exact inverse of the forward matrix since each
    factor is invertible and diagonal in its own basis.
    """
    _check_compatible(grid, spec)
    sign = -1.0 if inverse else 1.0
    mult = (np.sum(grid.points**2, axis=1) + 1.0) ** (sign * spec.p)
    symbol = (grid.frequency_sq + spec.m0**2) ** (sign * spec.q)
    conv = fourier_multiplier_matrix(grid, symbol)
    a = mult[:, None] * conv * mult[None, :]
    return 0.5 * (a + a.T)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Top eigenpairs of an inverse operator, grid-orthonormal.

    ``lambdas`` are normalized so ``lambdas[0] == 1``; the raw eigenvalues are
    ``lambdas * scale``.  ``basis`` has one grid function per row.
    """

    lambdas: np.ndarray
    basis: np.ndarray
    scale: float = 1.0
    cell_volume: float = 1.0
    grid: GridSpec | None = None
    spec: OperatorSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambdas.setflags(write=False)
        self.basis.setflags(write=False)

    @property
    def count(self) -> int:
        return len(self.lambdas)

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        """L^2 coefficients ``(f, phi_i)`` of grid function(s) ``f``."""
        return self.cell_volume * (np.asarray(f) @ self.basis.T)

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        """Grid function(s) ``sum_i c_i phi_i``."""
        c = np.asarray(c)
        return c @ self.basis[: c.shape[-1]]

    def gram(self) -> np.ndarray:
        return self.cell_volume * self.basis @ self.basis.T

    def truncate(self, k: int) -> "EigenSystem":
        if not 1 <= k <= self.count:
            raise ConfigError(f"cannot keep {k} of {self.count} modes")
        return EigenSystem(
            self.lambdas[:k].copy(),
            self.basis[:k].copy(),
            self.scale,
            self.cell_volume,
            self.grid,
            self.spec,
            dict(self.meta),
        )


def _canonical_order(lam: np.ndarray, vecs: np.ndarray, tol: float = 1e-9):
    """Sort decreasing, break ties by position of the dominant component,
    and fix signs so that component is positive."""
    dominant = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[dominant, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs = vecs * signs
    order = np.argsort(-lam, kind="stable")
    lam, vecs, dominant = lam[order], vecs[:, order], dominant[order]
    # group near-equal eigenvalues and order each group by dominant index
    groups = np.concatenate([[0], np.cumsum(np.diff(lam) < -tol * np.abs(lam[:-1]))])
    order = np.lexsort((dominant, groups))
    return lam[order], vecs[:, order]


def eigendecompose(
    matrix: np.ndarray,
    k_keep: int,
    *,
    of_inverse: bool = False,
    cell_volume: float = 1.0,
    grid: GridSpec | None = None,
    spec: OperatorSpec | None = None,
) -> EigenSystem:
    """Top ``k_keep`` eigenpairs of the inverse of a symmetric positive definite matrix.

    By default ``matrix`` is the forward operator and its smallest eigenvalues
    are inverted.  With ``of_inverse=True`` the matrix already represents the
    inverse and its largest eigenvalues are used directly, which keeps full
    relative accuracy on the leading modes.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError("matrix must be square")
    size = a.shape[0]
    if not 1 <= k_keep <= size:
        raise ConfigError(f"cannot keep {k_keep} modes of a {size}x{size} matrix")
    if grid is not None:
        cell_volume = grid.cell_volume
    a = 0.5 * (a + a.T)
    if of_inverse:
        try:
            scipy.linalg.cholesky(a, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("inverse operator matrix is not positive definite") from exc
        vals, vecs = scipy.linalg.eigh(a, subset_by_index=[size - k_keep, size - 1])
        lam_raw = vals
    else:
        vals, vecs = scipy.linalg.eigh(a, subset_by_index=[0, k_keep - 1])
        if vals[0] <= 0:
            raise NumericalError(
                f"operator matrix is indefinite: smallest Ritz value {vals[0]:.3e}"
            )
        lam_raw = 1.0 / vals
    if np.any(lam_raw <= 0):
        raise NumericalError("non-positive eigenvalue in the inverse spectrum")
    lam_raw, vecs = _canonical_order(lam_raw, vecs)
    scale = float(lam_raw[0])
    basis = (vecs / np.sqrt(cell_volume)).T.copy()
    return EigenSystem(lam_raw / scale, basis, scale, cell_volume, grid, spec)


def build_eigensystem(grid: GridSpec, spec: OperatorSpec, k_keep: int) -> EigenSystem:
    """Assemble the inverse operator on ``grid`` and keep its top modes."""
    inv = build_operator_matrix(grid, spec, inverse=True)
    return eigendecompose(inv, k_keep, of_inverse=True, grid=grid, spec=spec)


@dataclass(frozen=True)
class CoordinateVector:
    """A point of the truncated weighted l^2 space."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.shape(self.values) != np.shape(self.weights):
            raise ConfigError("values and weights must have the same length")

    @property
    def norm(self) -> float:
        return weighted_norm(self)


def weighted_norm(x: CoordinateVector) -> float:
    """``(sum_i beta_i x_i^2)^(1/2)``."""
    w = np.asarray(x.weights, dtype=float)
    if np.any(w <= 0):
        raise ConfigError("weights must be strictly positive")
    return float(np.sqrt(np.sum(w * np.asarray(x.values, dtype=float) ** 2)))


SCALE_RANGE = range(-3, 4)


def _check_scale(m: int, n_coef: int, es: EigenSystem):
    if m not in SCALE_RANGE:
        raise ConfigError(f"scale index {m} outside {SCALE_RANGE.start}..{SCALE_RANGE.stop - 1}")
    if n_coef > es.count:
        raise ConfigError(f"{n_coef} coefficients but only {es.count} modes")


def tau_forward(coefficients: np.ndarray, m: int, es: EigenSystem) -> CoordinateVector:
    """Map coefficients in the orthonormal basis ``lambda_i^m phi_i`` of the
    order-``m`` Sobolev space to the point ``(lambda_i^m a_i)`` of the
    ``lambda^(-2m)``-weighted sequence space."""
    a = np.asarray(coefficients, dtype=float)
    _check_scale(m, a.shape[-1], es)
    lam = es.lambdas[: a.shape[-1]]
    return CoordinateVector(lam**m * a, lam ** (-2.0 * m))


def tau_inverse(x: CoordinateVector | np.ndarray, m: int, es: EigenSystem) -> np.ndarray:
    values = np.asarray(x.values if isinstance(x, CoordinateVector) else x, dtype=float)
    _check_scale(m, values.shape[-1], es)
    return es.lambdas[: values.shape[-1]] ** (-m) * values


def sobolev_coefficients(f: np.ndarray, m: int, es: EigenSystem) -> np.ndarray:
    """Coefficients ``a_i = lambda_i^(-m) (f, phi_i)`` of a grid function."""
    _check_scale(m, es.count, es)
    return es.lambdas ** (-m) * es.coefficients(f)


def sobolev_norm_direct(f: np.ndarray, m: int, es: EigenSystem) -> float:
    """``||f||_m`` by applying the (normalized) operator ``|m|`` times on the grid.

    Uses the operator matrix rather than the eigen-coefficients, so it serves
    as an independent check of the isometry property.
    """
    if es.grid is None or es.spec is None:
        raise ConfigError("direct Sobolev norm needs the grid and operator spec")
    _check_scale(m, 0, es)
    g = np.asarray(f, dtype=float)
    if m:
        # the normalized inverse operator is (raw inverse) / scale
        op = build_operator_matrix(es.grid, es.spec, inverse=m < 0)
        op = op / es.scale if m < 0 else op * es.scale
        for _ in range(abs(m)):
            g = op @ g
    return float(np.sqrt(es.grid.inner(g, g)))


@dataclass(frozen=True)
class HilbertSchmidtReport:
    total: float
    tail_ratio: float
    tail_fraction: float
    increments_decreasing: bool


def hilbert_schmidt_sum(es: EigenSystem | np.ndarray) -> HilbertSchmidtReport:
    """``sum_i lambda_i^2`` with a summability diagnostic.

    ``tail_ratio`` compares the last quarter of the squared eigenvalues with
    the first quarter, ``tail_fraction`` the last quarter with the total.
    """
    lam = np.asarray(es.lambdas if isinstance(es, EigenSystem) else es, dtype=float)
    sq = lam**2
    total = float(sq.sum())
    q = max(1, len(sq) // 4)
    head, tail = sq[:q].sum(), sq[-q:].sum() if len(sq) >= 4 else 0.0
    return HilbertSchmidtReport(
        total=total,
        tail_ratio=float(tail / head),
        tail_fraction=float(tail / total),
        increments_decreasing=bool(np.all(np.diff(sq) <= 1e-12 * sq[:-1])),
    )


def spectrum_csv(es: EigenSystem) -> str:
    buf = io.StringIO()
    buf.write("index,lambda,lambda_squared_cumsum\n")
    for i, (lam, cum) in enumerate(zip(es.lambdas, np.cumsum(es.lambdas**2)), start=1):
        buf.write(f"{i},{lam:.17g},{cum:.17g}\n")
    return buf.getvalue()


def basis_csv(es: EigenSystem) -> str:
    """One row per mode: index, lambda, then the grid values."""
    buf = io.StringIO()
    if es.grid is not None:
        buf.write("# grid: " + ",".join(f"{k}={v}" for k, v in es.grid.to_dict().items()) + "\n")
    if es.spec is not None:
        buf.write("# operator: " + ",".join(f"{k}={v}" for k, v in es.spec.to_dict().items()) + "\n")
    buf.write(f"# scale: {es.scale:.17g}\n")
    n_grid = es.basis.shape[1]
    buf.write("index,lambda," + ",".join(f"g{j}" for j in range(n_grid)) + "\n")
    for i in range(es.count):
        row = ",".join(f"{v:.17g}" for v in es.basis[i])
        buf.write(f"{i + 1},{es.lambdas[i]:.17g},{row}\n")
    return buf.getvalue()
