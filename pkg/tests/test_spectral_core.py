import numpy as np
import pytest

from nlsq.errors import ConfigError, NumericalError, ResourceError
from nlsq.spectral_core import (
    CoordinateVector,
    EigenSystem,
    GridSpec,
    OperatorSpec,
    basis_csv,
    build_eigensystem,
    build_operator_matrix,
    eigendecompose,
    hilbert_schmidt_sum,
    sobolev_norm_direct,
    spectrum_csv,
    tau_forward,
    tau_inverse,
    weighted_norm,
)


def dense_factor_oracle(grid, p, q, m0=1.0):
    """Apply each factor of M^p F^q M^p to every unit vector, d = 1 only."""
    n = grid.n
    j = np.arange(n)
    dft = np.exp(-2j * np.pi * np.outer(j, j) / n)
    idft = np.conj(dft) / n
    xi = 2 * np.pi * np.fft.fftfreq(n, d=grid.h)
    mult = (grid.axis**2 + 1) ** p
    out = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        v = mult * e
        v = (idft @ ((xi**2 + m0**2) ** q * (dft @ v))).real
        out[:, k] = mult * v
    return out


@pytest.fixture(scope="module")
def grid64():
    return GridSpec(d=1, L=10.0, n=64)


@pytest.fixture(scope="module")
def es_default():
    return build_eigensystem(GridSpec(), OperatorSpec(), 64)


class TestGrid:
    def test_spacing(self):
        g = GridSpec(d=1, L=10.0, n=128)
        assert g.h == pytest.approx(20 / 128)
        assert g.points.shape == (128, 1)

    @pytest.mark.parametrize("kw", [dict(n=7), dict(n=6), dict(L=0.0), dict(d=3)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            GridSpec(**kw)

    def test_budget(self):
        with pytest.raises(ResourceError):
            GridSpec(d=2, n=128)


class TestOperatorMatrix:
    def test_zero_exponents_identity(self, grid64):
        spec = OperatorSpec(d=1, mult_power=0, lap_power=0)
        np.testing.assert_allclose(build_operator_matrix(grid64, spec), np.eye(64), atol=1e-14)

    def test_constant_zero_frequency(self, grid64):
        spec = OperatorSpec(d=1, mult_power=0, lap_power=1.0)
        f = np.ones(64)
        np.testing.assert_allclose(build_operator_matrix(grid64, spec) @ f, f, atol=1e-12)

    @pytest.mark.parametrize("kind", ["H", "Htilde"])
    def test_factor_oracle(self, grid64, kind):
        spec = OperatorSpec(kind=kind, d=1)
        a = build_operator_matrix(grid64, spec)
        ref = dense_factor_oracle(grid64, spec.p, spec.q)
        assert np.max(np.abs(a - ref)) / np.max(np.abs(ref)) < 1e-8
        np.testing.assert_array_equal(a, a.T)

    def test_inverse_is_inverse(self, grid64):
        spec = OperatorSpec()
        a = build_operator_matrix(grid64, spec)
        b = build_operator_matrix(grid64, spec, inverse=True)
        np.testing.assert_allclose(a @ b, np.eye(64), atol=1e-8)

    def test_dimension_mismatch(self, grid64):
        with pytest.raises(ConfigError):
            build_operator_matrix(grid64, OperatorSpec(d=2))

    def test_two_dimensional_symmetric(self):
        g = GridSpec(d=2, L=5.0, n=16)
        a = build_operator_matrix(g, OperatorSpec(d=2))
        assert a.shape == (256, 256)
        np.testing.assert_array_equal(a, a.T)

    def test_exponents(self):
        assert OperatorSpec(kind="H", d=2).p == 1.5
        assert OperatorSpec(kind="Htilde", d=2).p == 3.0
        assert OperatorSpec(kind="Htilde", d=1).q == 1.0


class TestEigendecompose:
    def test_identity(self):
        es = eigendecompose(np.eye(5), 5)
        np.testing.assert_allclose(es.lambdas, 1.0)
        np.testing.assert_allclose(es.gram(), np.eye(5), atol=1e-14)

    def test_diag_forced(self):
        es = eigendecompose(np.diag([2.0, 8.0]), 2)
        np.testing.assert_allclose(es.lambdas, [1.0, 0.25])
        assert es.scale == pytest.approx(0.5)

    def test_indefinite(self):
        with pytest.raises(NumericalError):
            eigendecompose(np.diag([1.0, -1.0]), 2)
        with pytest.raises(NumericalError):
            eigendecompose(np.diag([1.0, -1.0]), 1, of_inverse=True)

    def test_too_many(self):
        with pytest.raises(ConfigError):
            eigendecompose(np.eye(3), 4)

    def test_dense_oracle(self, grid64):
        spec = OperatorSpec()
        es = build_eigensystem(grid64, spec, 32)
        ref = np.linalg.eigvalsh(dense_factor_oracle(grid64, spec.p, spec.q))
        ref = np.sort(1.0 / ref)[::-1][:32]
        ref = ref / ref[0]
        assert np.max(np.abs(es.lambdas / ref - 1)) < 1e-7

    def test_both_routes_agree(self, grid64):
        spec = OperatorSpec()
        a = eigendecompose(build_operator_matrix(grid64, spec), 32, grid=grid64, spec=spec)
        b = build_eigensystem(grid64, spec, 32)
        assert np.max(np.abs(a.lambdas / b.lambdas - 1)) < 1e-7

    def test_invariants(self, es_default):
        lam = es_default.lambdas
        assert lam[0] == 1.0 and np.all(lam > 0)
        assert np.all(np.diff(lam) <= 0)
        assert np.max(np.abs(es_default.gram() - np.eye(64))) < 1e-8

    def test_residual(self, es_default):
        g, spec = es_default.grid, es_default.spec
        b = build_operator_matrix(g, spec, inverse=True) / es_default.scale
        for lam, phi in zip(es_default.lambdas, es_default.basis):
            res = np.linalg.norm(b @ phi - lam * phi) / np.linalg.norm(lam * phi)
            assert res < 1e-6

    def test_sign_and_tie_convention(self):
        # degenerate pair: order by position of the dominant entry
        es = eigendecompose(np.diag([3.0, 1.0, 1.0]), 3)
        np.testing.assert_allclose(es.lambdas, [1.0, 1.0, 1 / 3])
        dominant = np.argmax(np.abs(es.basis), axis=1)
        assert dominant[0] < dominant[1]
        assert np.all(es.basis[np.arange(3), dominant] > 0)

    def test_deterministic(self, grid64):
        a = build_eigensystem(grid64, OperatorSpec(), 16)
        b = build_eigensystem(grid64, OperatorSpec(), 16)
        np.testing.assert_array_equal(a.basis, b.basis)

    def test_immutable(self, es_default):
        with pytest.raises(ValueError):
            es_default.lambdas[0] = 2.0


class TestWeightedNorm:
    def test_values(self):
        assert weighted_norm(CoordinateVector(np.zeros(3), np.ones(3))) == 0
        assert weighted_norm(CoordinateVector(np.array([3.0, 4.0]), np.ones(2))) == 5.0
        assert weighted_norm(
            CoordinateVector(np.array([1.0, 2.0]), np.array([4.0, 1.0]))
        ) == pytest.approx(np.sqrt(8))

    def test_nonpositive_weight(self):
        with pytest.raises(ConfigError):
            weighted_norm(CoordinateVector(np.ones(2), np.array([1.0, 0.0])))


class TestTau:
    def test_zero(self, es_default):
        x = tau_forward(np.zeros(10), 2, es_default)
        assert x.norm == 0

    @pytest.mark.parametrize("m", range(-3, 4))
    def test_round_trip(self, es_default, m):
        a = np.random.default_rng(m + 10).normal(size=64)
        back = tau_inverse(tau_forward(a, m, es_default), m, es_default)
        assert np.max(np.abs(back - a)) < 1e-10

    @pytest.mark.parametrize("m", [-2, -1, 1])
    def test_isometry_direct(self, es_default, m):
        # f = sum a_i lambda_i^m phi_i has ||f||_m^2 = sum a_i^2
        k = 24
        a = np.random.default_rng(3).normal(size=k)
        f = es_default.synthesize(es_default.lambdas[:k] ** m * a)
        x = tau_forward(a, m, es_default)
        direct = sobolev_norm_direct(f, m, es_default)
        assert abs(x.norm - direct) / direct < 1e-10
        assert abs(np.sum(a**2) - direct**2) / direct**2 < 1e-9

    def test_out_of_range(self, es_default):
        with pytest.raises(ConfigError):
            tau_forward(np.ones(3), 4, es_default)
        with pytest.raises(ConfigError):
            tau_forward(np.ones(65), 1, es_default)


class TestHilbertSchmidt:
    def test_forced(self):
        assert hilbert_schmidt_sum(np.array([1.0])).total == 1.0
        assert hilbert_schmidt_sum(np.array([1.0, 0.5, 0.25])).total == pytest.approx(21 / 16)

    def test_default_tail(self, es_default):
        rep = hilbert_schmidt_sum(es_default)
        assert rep.tail_fraction < 0.05
        assert rep.increments_decreasing


class TestExports:
    def test_spectrum_csv(self, es_default):
        lines = spectrum_csv(es_default).splitlines()
        assert lines[0] == "index,lambda,lambda_squared_cumsum"
        assert len(lines) == 65

    def test_basis_csv(self):
        es = build_eigensystem(GridSpec(n=16), OperatorSpec(), 4)
        text = basis_csv(es)
        assert text.startswith("# grid: d=1,L=10.0,n=16")
        rows = [ln for ln in text.splitlines() if ln[0].isdigit()]
        assert len(rows) == 4 and len(rows[0].split(",")) == 18


def test_truncate(es_default):
    small = es_default.truncate(8)
    assert isinstance(small, EigenSystem) and small.count == 8
