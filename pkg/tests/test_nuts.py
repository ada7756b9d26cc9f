import math

import numpy as np
import pytest

from yieldfuse import nuts, posterior
from yieldfuse.data import CraterObs, Dataset, SeismicObs


class StdNormal:
    """Known-target oracle density."""

    def __init__(self, dim):
        self.dim = dim

    def logp_and_grad(self, u):
        return -0.5 * float(u @ u), -u

    def sample_init(self, rng):
        return rng.standard_normal(self.dim) * 2.0


class CorrelatedGaussian:
    def __init__(self, cov):
        self.cov = np.asarray(cov, dtype=float)
        self.prec = np.linalg.inv(self.cov)
        self.dim = self.cov.shape[0]

    def logp_and_grad(self, u):
        g = -self.prec @ u
        return 0.5 * float(u @ g), g

    def sample_init(self, rng):
        return rng.standard_normal(self.dim)


@pytest.fixture(scope="module")
def std_normal_run():
    cfg = nuts.NutsConfig(n_chains=4, n_iter=2000, n_warmup=500, seed=42,
                          target_accept=0.95)
    return cfg, nuts.run_nuts(StdNormal(11), cfg)


class TestSamplerOracle:
    def test_moments(self, std_normal_run):
        _, chains = std_normal_run
        pooled = np.concatenate([c.draws for c in chains])
        assert np.abs(pooled.mean(axis=0)).max() < 0.05
        sd = pooled.std(axis=0, ddof=1)
        assert sd.min() > 0.95 and sd.max() < 1.05

    def test_convergence_diagnostics(self, std_normal_run):
        _, chains = std_normal_run
        rhat, ess = nuts.diagnostics(chains)
        assert rhat.max() < 1.01
        assert ess.min() > 1000

    def test_acceptance_near_target(self, std_normal_run):
        _, chains = std_normal_run
        mean_accept = np.mean([c.accept_stat.mean() for c in chains])
        assert 0.90 <= mean_accept <= 0.99

    def test_bit_identical_rerun(self, std_normal_run):
        cfg, chains = std_normal_run
        again = nuts.run_nuts(StdNormal(11), cfg)
        for a, b in zip(chains, again):
            assert np.array_equal(a.draws, b.draws)
            assert np.array_equal(a.step_size, b.step_size)

    def test_different_seed_differs(self, std_normal_run):
        cfg, chains = std_normal_run
        other = nuts.run_nuts(StdNormal(11), nuts.NutsConfig(
            n_chains=cfg.n_chains, n_iter=cfg.n_iter, n_warmup=cfg.n_warmup,
            seed=cfg.seed + 1))
        assert not np.array_equal(chains[0].draws, other[0].draws)

    def test_draw_count_and_fields(self, std_normal_run):
        cfg, chains = std_normal_run
        for c in chains:
            assert c.n_kept == cfg.n_iter - cfg.n_warmup
            assert c.step_size.shape == (cfg.n_iter,)
            assert c.divergent.shape == (c.n_kept,)
            assert np.all(np.isfinite(c.energy))


class TestCorrelatedTarget:
    def test_covariance_recovery(self):
        cov = np.array([[1.0, 0.7], [0.7, 1.3]])
        cfg = nuts.NutsConfig(n_chains=2, n_iter=5500, n_warmup=500, seed=5)
        chains = nuts.run_nuts(CorrelatedGaussian(cov), cfg)
        pooled = np.concatenate([c.draws for c in chains])
        est = np.cov(pooled.T)
        np.testing.assert_allclose(est, cov, rtol=0.05, atol=0.02)


class TestConfigValidation:
    def test_invariants(self):
        with pytest.raises(ValueError):
            nuts.NutsConfig(n_iter=100, n_warmup=100)
        with pytest.raises(ValueError):
            nuts.NutsConfig(target_accept=1.0)
        with pytest.raises(ValueError):
            nuts.NutsConfig(max_tree_depth=0)


class TestHdi:
    def test_uniform_grid(self):
        samples = np.arange(1.0, 101.0)
        lo, hi = nuts.hdi(samples, 0.95)
        assert hi - lo == pytest.approx(94.0)
        assert lo == 1.0  # leftmost tie

    def test_normal_symmetry(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(100_000)
        lo, hi = nuts.hdi(x, 0.95)
        mid = 0.5 * (lo + hi)
        assert abs(mid - x.mean()) < 0.1 * x.std()

    def test_exponential_hugs_zero(self):
        rng = np.random.default_rng(1)
        x = rng.exponential(size=100_000)
        lo, hi = nuts.hdi(x, 0.5)
        assert lo < np.quantile(x, 0.05)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            nuts.hdi(np.arange(50.0), 0.95)


class TestDiagnostics:
    def test_iid_chains(self):
        rng = np.random.default_rng(2)
        chains = [nuts.ChainOutput(
            draws=rng.standard_normal((1000, 2)),
            divergent=np.zeros(1000, bool), boundary_hits=np.zeros(1000, bool),
            tree_depth=np.ones(1000, np.int16), energy=np.zeros(1000),
            accept_stat=np.ones(1000), step_size=np.ones(1000))
            for _ in range(4)]
        rhat, ess = nuts.diagnostics(chains)
        assert rhat.max() < 1.01
        assert np.all(np.abs(ess - 4000) < 0.2 * 4000)

    def test_offset_chain_flagged(self):
        rng = np.random.default_rng(3)
        draws = [rng.standard_normal((1000, 1)) for _ in range(4)]
        draws[0] = draws[0] + 10.0
        chains = [nuts.ChainOutput(
            draws=d, divergent=np.zeros(1000, bool),
            boundary_hits=np.zeros(1000, bool),
            tree_depth=np.ones(1000, np.int16), energy=np.zeros(1000),
            accept_stat=np.ones(1000), step_size=np.ones(1000))
            for d in draws]
        rhat, _ = nuts.diagnostics(chains)
        assert rhat[0] > 1.5

    def test_requires_two_chains(self):
        c = nuts.ChainOutput(
            draws=np.zeros((200, 1)), divergent=np.zeros(200, bool),
            boundary_hits=np.zeros(200, bool), tree_depth=np.zeros(200, np.int16),
            energy=np.zeros(200), accept_stat=np.zeros(200),
            step_size=np.zeros(300))
        with pytest.raises(ValueError):
            nuts.diagnostics([c])


class TestConstrainedDraws:
    def test_support_invariants_hold(self):
        ds = Dataset(seismic=SeismicObs(4.5), crater=CraterObs(46.7, 108.1))
        dens = posterior.JointDensity(ds, posterior.FusionMethod.dirichlet_gamma())
        cfg = nuts.NutsConfig(n_chains=2, n_iter=700, n_warmup=300, seed=9)
        result = nuts.fit(dens, cfg)
        pooled = result.pooled_matrix()
        names = result.param_names
        y = pooled[:, names.index("yield_kt")]
        assert np.all((y > 0) & (y < 2.75))
        sm = pooled[:, names.index("sigma_m")]
        assert np.all((sm > 0.05) & (sm < 0.30))
        g = pooled[:, [names.index("gamma_seismic"), names.index("gamma_crater")]]
        assert np.all(g > 0)
        np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)

    def test_parallel_chains_match_serial(self):
        ds = Dataset(seismic=SeismicObs(4.5), crater=CraterObs(46.7, 108.1))
        dens = posterior.JointDensity(ds, posterior.FusionMethod.dirichlet_gamma())
        cfg = nuts.NutsConfig(n_chains=2, n_iter=400, n_warmup=200, seed=11)
        serial = nuts.run_nuts(dens, cfg, workers=1)
        parallel = nuts.run_nuts(dens, cfg, workers=2)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.draws, b.draws)


class TestSummaryAndCsv:
    def test_summary_fields(self, std_normal_run):
        cfg, chains = std_normal_run
        result = nuts.FitResult(chains=list(chains),
                                param_names=tuple(f"x{i}" for i in range(11)),
                                config=cfg)
        summ = nuts.summarize(result)
        assert set(summ.parameters) == {f"x{i}" for i in range(11)}
        s = summ.parameters["x0"]
        assert s.hdi_lo < s.median < s.hdi_hi
        assert abs(s.mode) < 0.25
        assert not summ.diagnostic_failure
        d = summ.to_dict()
        assert d["n_draws"] == 6000

    def test_csv_round_trip(self, std_normal_run, tmp_path):
        cfg, chains = std_normal_run
        result = nuts.FitResult(chains=list(chains[:2]),
                                param_names=tuple(f"x{i}" for i in range(11)),
                                config=cfg)
        path = tmp_path / "draws.csv"
        nuts.write_draws_csv(result, str(path))
        names, chain_id, draws = nuts.read_draws_csv(str(path))
        assert names == result.param_names
        assert draws.shape == (2 * chains[0].n_kept, 11)
        np.testing.assert_array_equal(draws[:chains[0].n_kept], chains[0].draws)
        assert set(chain_id) == {0, 1}
