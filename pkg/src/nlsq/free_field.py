"""Truncated Euclidean free field in eigen-coordinates.

A field sample is the coordinate vector ``X_i = <phi, phi_i>`` of a centered
Gaussian with covariance ``C_ij = (phi_i, (-Delta + m0^2)^{-1} phi_j)``.
Test functions are coefficient vectors ``c`` of ``sum_i c_i phi_i``, so the
pairing is ``<X, c> = c . X``.

Large Monte-Carlo runs never materialize all samples: :func:`sample_projections`
streams fixed-size batches and keeps only the requested pairings.  Batch ``b``
always draws from stream ``stream + b``, so results are identical whatever the
worker count.
"""

from __future__ import annotations

import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import factorial2

from ._rng import batch_sizes, make_rng
from .errors import ConfigError, NumericalError
from .spectral_core import EigenSystem

log = logging.getLogger(__name__)

BATCH = 50_000


@dataclass(frozen=True)
class Estimate:
    """A Monte-Carlo estimate with its standard error."""

    value: complex | float
    stderr: float


@dataclass(frozen=True, eq=False)
class FreeFieldModel:
    es: EigenSystem
    m0: float
    cov: np.ndarray
    root: np.ndarray

    @property
    def count(self) -> int:
        return self.cov.shape[0]

    @classmethod
    def from_covariance(cls, cov: np.ndarray, es: EigenSystem | None = None) -> "FreeFieldModel":
        """Gaussian coordinate model with a given covariance and no grid."""
        cov = np.array(cov, dtype=float, ndmin=2)
        w, v = scipy.linalg.eigh(0.5 * (cov + cov.T))
        if w[0] < -1e-10 * max(w[-1], 1.0):
            raise NumericalError("covariance is indefinite")
        return cls(es, float("nan"), cov, v * np.sqrt(np.clip(w, 0.0, None)))

    def fields(self, x: np.ndarray) -> np.ndarray:
        """Grid values of the field(s) with coordinates ``x``."""
        if self.es is None:
            raise ConfigError("this model has no grid basis")
        return self.es.synthesize(x)


def apply_green(es: EigenSystem, f: np.ndarray, m0: float) -> np.ndarray:
    """Apply ``(-Delta + m0^2)^{-1}`` to grid function(s) through the FFT."""
    grid = es.grid
    shape = f.shape[:-1] + grid.shape
    axes = tuple(range(-grid.d, 0))
    symbol = 1.0 / (grid.frequency_sq + m0**2)
    out = np.fft.ifftn(symbol * np.fft.fftn(f.reshape(shape), axes=axes), axes=axes)
    return out.real.reshape(f.shape)


def build_covariance(es: EigenSystem, m0: float = 1.0) -> FreeFieldModel:
    if not m0 > 0:
        raise ConfigError(f"mass must be positive, got {m0}")
    if es.grid is None:
        raise ConfigError("covariance needs an eigensystem that carries its grid")
    green = apply_green(es, es.basis, m0)
    cov = es.cell_volume * es.basis @ green.T
    if np.max(np.abs(cov - cov.T)) > 1e-10 * np.max(np.abs(cov)):
        raise NumericalError("covariance lost symmetry beyond round-off")
    cov = 0.5 * (cov + cov.T)
    w, v = scipy.linalg.eigh(cov)
    if w[0] < -1e-10 * max(w[-1], 1.0):
        raise NumericalError(f"covariance is indefinite: eigenvalue {w[0]:.3e}")
    root = v * np.sqrt(np.clip(w, 0.0, None))
    cov.setflags(write=False)
    root.setflags(write=False)
    return FreeFieldModel(es, float(m0), cov, root)


def _batches(count: int, seed: int, stream: int, batch: int, workers: int, fn):
    sizes = batch_sizes(count, batch)

    def run(b):
        rng = make_rng(seed, stream + b)
        return fn(rng, sizes[b])

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(b) for b in range(len(sizes))]
    return parts


def sample_field(
    model: FreeFieldModel,
    count: int,
    seed: int,
    *,
    stream: int = 0,
    batch: int = BATCH,
    workers: int = 1,
) -> np.ndarray:
    """``count`` i.i.d. coordinate vectors, shape ``(count, K)``."""
    if count < 1:
        raise ConfigError("sample count must be at least 1")
    k = model.count

    def draw(rng, size):
        return rng.standard_normal((size, k)) @ model.root.T

    return np.concatenate(_batches(count, seed, stream, batch, workers, draw))


def sample_projections(
    model: FreeFieldModel,
    tests: np.ndarray,
    count: int,
    seed: int,
    *,
    stream: int = 0,
    batch: int = BATCH,
    workers: int = 1,
) -> np.ndarray:
    """Pairings ``<X, c_t>`` of streamed samples, shape ``(count, T)``.

    Uses the same random streams as :func:`sample_field`, so the result equals
    ``sample_field(...) @ tests.T`` without holding the samples.
    """
    if count < 1:
        raise ConfigError("sample count must be at least 1")
    tests = np.atleast_2d(np.asarray(tests, dtype=float))
    k = model.count
    proj = model.root.T @ tests.T

    def draw(rng, size):
        return rng.standard_normal((size, k)) @ proj

    return np.concatenate(_batches(count, seed, stream, batch, workers, draw))


def triple_norm(model: FreeFieldModel, c: np.ndarray) -> float:
    """``(c^T C c)^{1/2}``; with ``m0 = 1`` this is the norm ``(G phi, phi)^{1/2}``."""
    c = np.asarray(c, dtype=float)
    return float(np.sqrt(max(c @ model.cov @ c, 0.0)))


def exact_char(model: FreeFieldModel, c: np.ndarray) -> float:
    """``exp(-c^T C c / 2)``."""
    return float(np.exp(-0.5 * triple_norm(model, c) ** 2))


def empirical_char(projections: np.ndarray, weights: np.ndarray | None = None) -> Estimate:
    """Mean of ``exp(i p)`` over samples, optionally self-normalized by ``weights``.

    The stderr is the modulus of the complex standard error.
    """
    p = np.asarray(projections, dtype=float)
    e = np.exp(1j * p)
    n = len(p)
    if weights is None:
        value = e.mean()
        resid = e - value
        stderr = np.sqrt(np.sum(np.abs(resid) ** 2) / max(n - 1, 1) / n)
    else:
        w = np.asarray(weights, dtype=float)
        value = np.sum(w * e) / np.sum(w)
        stderr = np.sqrt(np.sum((w * np.abs(e - value)) ** 2)) / np.sum(w)
    # an average of unit-modulus terms lies in the unit disk; clip round-off
    mod = abs(value)
    if mod > 1.0:
        value = value / mod
    return Estimate(complex(value), float(stderr))


def char_functional(
    model: FreeFieldModel,
    c: np.ndarray,
    samples: np.ndarray | None = None,
    weights: np.ndarray | None = None,
) -> Estimate:
    """Characteristic functional at test function ``c``.

    Without samples the exact Gaussian value is returned with zero stderr.
    """
    if samples is None:
        return Estimate(complex(exact_char(model, c)), 0.0)
    return empirical_char(np.asarray(samples) @ np.asarray(c, dtype=float), weights)


def char_scan(
    model: FreeFieldModel, c: np.ndarray, ts: np.ndarray, samples: np.ndarray
) -> list[tuple[float, float, float, float, float]]:
    """Rows ``(t, Re C(t c), Im C(t c), stderr, exact)`` along a ray."""
    p = samples @ np.asarray(c, dtype=float)
    rows = []
    for t in ts:
        est = empirical_char(t * p)
        rows.append((float(t), est.value.real, est.value.imag, est.stderr,
                     exact_char(model, t * np.asarray(c))))
    return rows


def char_matrix(projections: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Hermitian matrix ``[C(phi_i - phi_j)]`` from pairings of shape ``(N, k)``."""
    p = np.asarray(projections, dtype=float)
    k = p.shape[1]
    out = np.empty((k, k), dtype=complex)
    for i in range(k):
        for j in range(k):
            out[i, j] = empirical_char(p[:, i] - p[:, j], weights).value if i != j else 1.0
    return out


@dataclass(frozen=True)
class MomentCheck:
    exact: float
    empirical: float
    stderr: float

    @property
    def z(self) -> float:
        return (self.empirical - self.exact) / self.stderr if self.stderr > 0 else 0.0


def gaussian_moment(r: float, l: int) -> float:
    """``(2l - 1)!! r^{2l}``."""
    return float(factorial2(2 * l - 1, exact=True)) * r ** (2 * l) if l else 1.0


def gaussian_moment_check(
    model: FreeFieldModel, c: np.ndarray, l: int, projections: np.ndarray
) -> MomentCheck:
    """Compare ``E <X, c>^{2l}`` with its Gaussian value.

    ``projections`` are the pairings ``<X, c>`` of samples from ``model``.
    """
    if not 0 <= 2 * l <= 12:
        raise ConfigError("moment order 2l must lie in 0..12")
    exact = gaussian_moment(triple_norm(model, c), l)
    vals = np.asarray(projections, dtype=float) ** (2 * l)
    n = len(vals)
    return MomentCheck(exact, float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0)


@dataclass(frozen=True)
class MinlosCheck:
    lhs: float
    rhs: float
    stderr: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + 5.0 * self.stderr


def minlos_increment_check(
    model: FreeFieldModel,
    phi: np.ndarray,
    psi: np.ndarray,
    samples: np.ndarray | None = None,
    weights: np.ndarray | None = None,
) -> MinlosCheck:
    """``|C(psi + phi) - C(psi)|^2 <= 2 |C(phi) - 1|`` at one pair.

    All three values come from the same samples; the stderr of
    ``lhs - rhs`` is propagated to first order through per-sample influences.
    """
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if samples is None:
        a, b, c = (exact_char(model, t) for t in (psi + phi, psi, phi))
        return MinlosCheck(abs(a - b) ** 2, 2 * abs(c - 1), 0.0)
    x = np.asarray(samples)
    e_a, e_b, e_c = (np.exp(1j * (x @ t)) for t in (psi + phi, psi, phi))
    if weights is None:
        w = np.ones(len(x))
    else:
        w = np.asarray(weights, dtype=float)
    wsum = w.sum()
    a, b, c = (np.sum(w * e) / wsum for e in (e_a, e_b, e_c))
    infl = lambda e, est: w * (e - est) / wsum  # noqa: E731
    g = 2 * np.real(np.conj(a - b) * (infl(e_a, a) - infl(e_b, b)))
    if abs(c - 1) > 0:
        g = g - 2 * np.real(np.conj(c - 1) * infl(e_c, c)) / abs(c - 1)
    return MinlosCheck(float(abs(a - b) ** 2), float(2 * abs(c - 1)), float(np.sqrt(np.sum(g**2))))


def samples_csv(samples: np.ndarray, *, seed: int, m0: float) -> str:
    buf = io.StringIO()
    k = samples.shape[1]
    buf.write(f"# seed: {seed}\n# K: {k}\n# m0: {m0}\n")
    buf.write(",".join(f"x{i + 1}" for i in range(k)) + "\n")
    np.savetxt(buf, samples, delimiter=",", fmt="%.17g")
    return buf.getvalue()
