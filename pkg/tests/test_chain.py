import logging

import numpy as np
import pytest
from scipy import integrate, stats

from nlsq.errors import ConfigError
from nlsq.free_field import FreeFieldModel, build_covariance, sample_field
from nlsq.interactions import PotentialSpec, build_gibbs, cutoff_function, reweighted_expectation
from nlsq.nonlocal_form import (
    JumpChainConfig,
    detailed_balance_residual,
    importance_resample,
    invariance_report,
    proposal_density,
    sample_jump_radius,
    simulate_chain,
    trajectory_csv,
)


def system(k):
    from nlsq.spectral_core import GridSpec, OperatorSpec, build_eigensystem

    return build_covariance(build_eigensystem(GridSpec(), OperatorSpec(), k))


@pytest.fixture(scope="module")
def model16():
    return system(16)


@pytest.fixture(scope="module")
def start16(model16):
    return sample_field(model16, 1000, seed=1)


def radius_cdf(r, alpha, eps, R):
    return (eps ** (-alpha) - r ** (-alpha)) / (eps ** (-alpha) - R ** (-alpha))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"alpha": 1.2}, {"eps": 2.0, "R": 1.0},
                                    {"schedule": "random"}, {"stride": 0}, {"sweeps": -1}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            JumpChainConfig(**kw)


class TestProposal:
    def test_symmetry(self):
        rng = np.random.default_rng(0)
        cfg = JumpChainConfig(alpha=0.7)
        x, y = rng.normal(scale=3, size=(2, 10_000))
        s = rng.uniform(0.1, 2.0, 10_000)
        a, b = proposal_density(y - x, s, cfg), proposal_density(x - y, s, cfg)
        assert np.max(np.abs(a - b) / np.maximum(a, 1e-300)) <= 1e-14

    @pytest.mark.parametrize("alpha", [0.5, 1.0])
    def test_normalized(self, alpha):
        cfg = JumpChainConfig(alpha=alpha, eps=1e-3, R=1e3)
        pts = np.logspace(-3, 3, 13)
        half = sum(integrate.quad(lambda d: float(proposal_density(d, 1.0, cfg)), a, b)[0]
                   for a, b in zip(pts[:-1], pts[1:]))
        assert 2 * half == pytest.approx(1.0, rel=1e-8)

    @pytest.mark.parametrize("alpha", [0.5, 1.0])
    def test_radius_law(self, alpha):
        u = np.random.default_rng(3).random(20_000)
        r = sample_jump_radius(u, alpha, 1e-3, 1e3)
        assert r.min() >= 1e-3 and r.max() <= 1e3
        assert stats.kstest(r, lambda t: radius_cdf(t, alpha, 1e-3, 1e3)).pvalue > 1e-3


class TestDetailedBalance:
    def test_gaussian_triples(self, model16, start16):
        rng = np.random.default_rng(4)
        for alpha in (0.5, 1.0):
            cfg = JumpChainConfig(alpha=alpha)
            worst = 0.0
            for _ in range(1000):
                x = start16[rng.integers(len(start16))]
                i = int(rng.integers(16))
                s = np.sqrt(model16.cov[i, i])
                y = x[i] + rng.choice([-1, 1]) * s * rng.uniform(0.05, 3.0)
                worst = max(worst, detailed_balance_residual(model16, cfg, x, i, y))
            assert worst < 1e-12

    def test_gibbs_within_tabulation(self):
        m = system(4)
        xs = sample_field(m, 2000, seed=2)
        gm = build_gibbs(m, PotentialSpec("Exp", a0=1.0, cutoff=cutoff_function(m.es.grid)), xs)
        rng = np.random.default_rng(5)
        cfg = JumpChainConfig()
        worst = 0.0
        for _ in range(20):
            x = xs[rng.integers(len(xs))]
            i = int(rng.integers(4))
            y = x[i] + rng.choice([-1, 1]) * rng.uniform(0.05, 0.5)
            worst = max(worst, detailed_balance_residual(gm, cfg, x, i, y))
        assert worst < 1e-5

    def test_outside_range(self, model16, start16):
        with pytest.raises(ConfigError):
            detailed_balance_residual(model16, JumpChainConfig(), start16[0], 0, start16[0, 0] + 1e-9)


class TestSimulation:
    def test_deterministic_and_per_chain_streams(self, model16, start16):
        cfg = JumpChainConfig(alpha=0.5, sweeps=70, seed=8)
        a = simulate_chain(model16, cfg, start16[:10])
        b = simulate_chain(model16, cfg, start16[:10])
        c = simulate_chain(model16, cfg, start16[:4])
        np.testing.assert_array_equal(a.final, b.final)
        np.testing.assert_array_equal(a.final[:4], c.final)
        d = simulate_chain(model16, JumpChainConfig(alpha=0.5, sweeps=70, seed=9), start16[:10])
        assert not np.array_equal(a.final, d.final)

    def test_stride_and_export(self, model16, start16):
        cfg = JumpChainConfig(sweeps=25, stride=10)
        res = simulate_chain(model16, cfg, start16[:3])
        assert list(res.recorded_sweeps) == [0, 10, 20, 25]
        assert res.trajectory.shape == (4, 3, 16)
        text = trajectory_csv(res, chain=1)
        assert "# alpha: 1.0" in text and "# eps: 0.001" in text
        body = [ln for ln in text.splitlines() if not ln.startswith("#")]
        assert body[0].startswith("sweep,x1,") and len(body) == 5
        np.testing.assert_array_equal(np.array(body[-1].split(",")[1:], dtype=float), res.final[1])

    def test_proposal_counts(self, model16, start16):
        res = simulate_chain(model16, JumpChainConfig(sweeps=5), start16[:7])
        np.testing.assert_array_equal(res.proposals, np.full(16, 35.0))
        assert 0 < res.acceptance_rate <= 1

    def test_low_acceptance_warning(self, model16, start16, caplog):
        cfg = JumpChainConfig(eps=30.0, R=100.0, sweeps=100)
        with caplog.at_level(logging.WARNING):
            res = simulate_chain(model16, cfg, start16[:5])
        assert res.low_acceptance and "acceptance" in caplog.text

    def test_dimension_checked(self, model16):
        with pytest.raises(ConfigError):
            simulate_chain(model16, JumpChainConfig(sweeps=1), np.zeros((2, 5)))


class TestInvariance:
    def test_zero_sweeps(self, model16, start16):
        rows = invariance_report(model16, JumpChainConfig(sweeps=0), start16)
        assert all(r.z == 0.0 and r.passed for r in rows)

    def test_needs_chains(self, model16, start16):
        with pytest.raises(ConfigError):
            invariance_report(model16, JumpChainConfig(sweeps=1), start16[:50])

    @pytest.mark.parametrize("alpha,schedule", [(1.0, "systematic"), (0.5, "uniform-random")])
    def test_free_field(self, model16, start16, alpha, schedule):
        cfg = JumpChainConfig(alpha=alpha, sweeps=1000, schedule=schedule, seed=3)
        rows = invariance_report(model16, cfg, start16)
        assert [r.observable for r in rows] == ["x1", "x1^2", "x1*x2"]
        assert all(r.passed for r in rows), [r.to_dict() for r in rows]

    def test_broken_chain_detected(self, model16, start16):
        cfg = JumpChainConfig(alpha=0.5, sweeps=1000, seed=3, force_accept=True)
        rows = {r.observable: r for r in invariance_report(model16, cfg, start16)}
        assert abs(rows["x1^2"].z) > 4

    def test_long_run_moments(self):
        m = FreeFieldModel.from_covariance(np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.3], [0.0, 0.3, 0.5]]))
        x0 = np.random.default_rng(6).multivariate_normal(np.zeros(3), m.cov, 300)
        res = simulate_chain(m, JumpChainConfig(alpha=0.5, eps=1e-2, sweeps=10_000, seed=6), x0)
        n = len(x0)
        for stat in (lambda x: x, lambda x: x**2):
            d = stat(res.final) - stat(x0)
            z = d.mean(axis=0) / (d.std(axis=0, ddof=1) / np.sqrt(n))
            assert np.all(np.abs(z) < 5), z


class TestGibbsChain:
    def test_matches_reweighting(self):
        m = system(8)
        xs = sample_field(m, 100_000, seed=2)
        gm = build_gibbs(m, PotentialSpec("Exp", a0=2.0, cutoff=cutoff_function(m.es.grid)), xs)
        c = np.zeros(8)
        c[0], c[2] = 1.0, 0.5
        rw = reweighted_expectation(gm, lambda x: (x @ c) ** 2, xs)
        free = np.mean((xs @ c) ** 2)
        # an independent start: free-field draws, equilibrated by the chain itself
        cfg = JumpChainConfig(alpha=0.5, eps=1e-2, sweeps=800, stride=5, seed=9)
        res = simulate_chain(gm, cfg, sample_field(m, 400, seed=77))
        tail = res.trajectory[res.recorded_sweeps >= 200]
        per_chain = ((tail @ c) ** 2).mean(axis=0)
        est, se = per_chain.mean(), per_chain.std(ddof=1) / np.sqrt(len(per_chain))
        assert abs(est - rw.value) < 5 * np.hypot(se, rw.stderr)
        assert abs(free - rw.value) > 10 * rw.stderr

    def test_resampled_start_is_stationary(self):
        m = system(4)
        xs = sample_field(m, 50_000, seed=3)
        gm = build_gibbs(m, PotentialSpec("Exp", a0=1.5, cutoff=cutoff_function(m.es.grid)), xs)
        x0 = importance_resample(gm, xs, 400, seed=4)
        rows = invariance_report(gm, JumpChainConfig(alpha=0.5, eps=1e-2, sweeps=200, seed=5), x0)
        assert all(r.passed for r in rows), [r.to_dict() for r in rows]

    def test_resample_reproducible(self):
        m = system(4)
        xs = sample_field(m, 1000, seed=3)
        gm = build_gibbs(m, PotentialSpec("Exp", a0=1.0, cutoff=cutoff_function(m.es.grid)), xs)
        a = importance_resample(gm, xs, 50, seed=1)
        np.testing.assert_array_equal(a, importance_resample(gm, xs, 50, seed=1))
        assert {tuple(r) for r in a} <= {tuple(r) for r in xs}
