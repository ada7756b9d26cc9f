import math
from dataclasses import replace

import numpy as np
import pytest

from yieldfuse import blast, synth
from yieldfuse.likelihoods import vlm_log_bin_probs


class TestPresets:
    def test_base_clean_row(self):
        cfg = synth.preset("base_clean")
        assert (cfg.n_sar, cfg.n_vlm) == (120, 160)
        assert cfg.nu_gen == 8.0 and cfg.delta_bias_dex == 0.0
        assert cfg.sigma_sar_gen == 40.0 and cfg.eta_mislabel == 0.0
        assert cfg.rho == 0.0 and cfg.y_true_kt == 0.30

    def test_single_field_perturbations(self):
        base = synth.preset("base_clean")
        heavy = synth.preset("sar_heavy_tail")
        assert heavy.nu_gen == 2.5
        assert replace(heavy, nu_gen=base.nu_gen) == base
        biased = synth.preset("sar_biased")
        assert biased.delta_bias_dex == 0.35
        assert replace(biased, delta_bias_dex=0.0) == base
        noisy = synth.preset("vlm_noisy")
        assert noisy.eta_mislabel == 0.10
        assert replace(noisy, eta_mislabel=0.0) == base
        dep = synth.preset("dependence_06")
        assert dep.rho == 0.6
        assert replace(dep, rho=0.0) == base

    def test_config_validation(self):
        with pytest.raises(ValueError):
            synth.ScenarioConfig(n_sar=0)
        with pytest.raises(ValueError):
            synth.ScenarioConfig(rho=1.0)
        with pytest.raises(ValueError):
            synth.ScenarioConfig(nu_gen=2.0)

    def test_matched_links(self):
        cfg = synth.matched_links(synth.preset("base_clean"))
        link = blast.DEFAULT_MAGNITUDE_LINK
        # generator magnitude equals the inference link's prediction
        y = cfg.y_true_kt
        mw_gen = cfg.seismic_a * math.log10(y) + cfg.seismic_b
        assert mw_gen == pytest.approx(blast.magnitude_from_yield(y, link), abs=1e-12)
        z_gen = cfg.crater_c * math.log10(y) + cfg.crater_d
        assert z_gen == pytest.approx(blast.crater_mu_log10(y), abs=1e-12)


class TestGenerate:
    def test_determinism(self):
        cfg = synth.preset("base_clean", seed=5)
        a = synth.generate(cfg)
        b = synth.generate(cfg)
        assert a.seismic.mw_obs == b.seismic.mw_obs
        assert a.crater.length_m == b.crater.length_m
        assert all(x.range_m == y.range_m and x.damage_pct == y.damage_pct
                   for x, y in zip(a.sar, b.sar))
        assert all(np.array_equal(x.pmf, y.pmf) for x, y in zip(a.vlm, b.vlm))

    def test_counts_and_shapes(self):
        ds = synth.generate(synth.preset("sar_biased", seed=3))
        assert ds.n_sar == 120 and ds.n_vlm == 160
        assert ds.crater.width_m == ds.crater.length_m  # single diameter emitted twice

    def test_noise_free_affine_links(self):
        cfg = replace(synth.preset("base_clean", seed=2), sigma_m_gen=0.0,
                      sigma_c_gen=0.0)
        ds = synth.generate(cfg)
        lt = math.log10(0.30)
        assert ds.seismic.mw_obs == pytest.approx(3.0 * lt - 1.2, abs=1e-12)
        assert math.log10(ds.crater.length_m) == pytest.approx(1.0 * lt + 1.2,
                                                               abs=1e-12)

    def test_full_mislabel_gives_uniform_pmfs(self):
        cfg = replace(synth.preset("base_clean", seed=4), eta_mislabel=1.0)
        ds = synth.generate(cfg)
        for rec in ds.vlm:
            np.testing.assert_allclose(rec.pmf, 1.0 / 9.0, atol=1e-12)

    def test_pmfs_on_simplex(self):
        for eta in (0.0, 0.1, 0.5):
            cfg = replace(synth.preset("base_clean", seed=6), eta_mislabel=eta)
            ds = synth.generate(cfg)
            q = np.stack([r.pmf for r in ds.vlm])
            assert np.all(q >= 0)
            np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)

    def test_vlm_pmfs_follow_generator_binning(self):
        cfg = replace(synth.preset("base_clean", seed=8), n_vlm=5)
        ds = synth.generate(cfg)
        for rec in ds.vlm:
            x = np.log10(
                blast.kb_incident_overpressure(rec.range_m, cfg.y_true_kt))
            pi = np.exp(vlm_log_bin_probs(np.array([x]), cfg.sdex_gen))[0]
            np.testing.assert_allclose(rec.pmf, pi, atol=1e-9)

    def test_ranges_within_bounds(self):
        ds = synth.generate(synth.preset("base_clean", seed=9))
        for b in ds.sar:
            assert 300.0 <= b.range_m <= 6000.0
        for v in ds.vlm:
            assert 300.0 <= v.range_m <= 6000.0

    def test_bias_shifts_damage_up(self):
        # degenerate range so every box sits at the same distance
        base = replace(synth.preset("base_clean"), r_min_m=1500.0,
                       r_max_m=1500.0, n_sar=1000)
        biased = replace(base, delta_bias_dex=0.35)
        d0 = np.array([b.damage_pct for b in synth.generate(
            replace(base, seed=21)).sar])
        d1 = np.array([b.damage_pct for b in synth.generate(
            replace(biased, seed=21)).sar])
        assert d1.mean() > d0.mean()
        # same seed, same noise: dominance is pointwise, not just on average
        assert np.all(d1 >= d0)


class TestDependenceShock:
    def test_innovation_correlation_structure(self):
        # X_i = sqrt(1 - rho^2) eta_i + rho Z gives corr(X_i, X_j) = rho^2
        rho = 0.6
        cfg = replace(synth.preset("dependence_06"), n_sar=2, n_vlm=2)
        xs, xc = [], []
        lt = math.log10(cfg.y_true_kt)
        for seed in range(10_000):
            ds = synth.generate(replace(cfg, seed=seed))
            xs.append((ds.seismic.mw_obs - (3.0 * lt - 1.2)) / cfg.sigma_m_gen)
            xc.append((math.log10(ds.crater.length_m) - (1.0 * lt + 1.2))
                      / cfg.sigma_c_gen)
        xs = np.asarray(xs)
        xc = np.asarray(xc)
        got = float(np.corrcoef(xs, xc)[0, 1])
        assert got == pytest.approx(rho ** 2, abs=0.05)

    def test_zero_rho_uncorrelated(self):
        cfg = replace(synth.preset("base_clean"), n_sar=2, n_vlm=2)
        lt = math.log10(cfg.y_true_kt)
        xs, xc = [], []
        for seed in range(4000):
            ds = synth.generate(replace(cfg, seed=seed))
            xs.append((ds.seismic.mw_obs - (3.0 * lt - 1.2)) / cfg.sigma_m_gen)
            xc.append((math.log10(ds.crater.length_m) - (1.0 * lt + 1.2))
                      / cfg.sigma_c_gen)
        got = float(np.corrcoef(np.asarray(xs), np.asarray(xc))[0, 1])
        assert abs(got) < 0.05

    def test_marginals_keep_unit_scale(self):
        cfg = replace(synth.preset("dependence_06"), n_sar=2, n_vlm=2)
        lt = math.log10(cfg.y_true_kt)
        xs = [(synth.generate(replace(cfg, seed=s)).seismic.mw_obs
               - (3.0 * lt - 1.2)) / cfg.sigma_m_gen for s in range(4000)]
        assert float(np.std(xs)) == pytest.approx(1.0, abs=0.05)
