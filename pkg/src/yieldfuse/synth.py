"""Synthetic four-modality data generator for fusion stress tests.

Each scenario perturbs one aspect of the base configuration: SAR tail
heaviness, a SAR pressure bias, VLM label noise, or a shared dependence
shock across the seismic/crater/SAR residuals. The seismic and crater
generator links are simple affine maps in log10 yield whose default
constants deliberately differ from the inference links (a misspecification
stress); use matched_links() when a model-consistent dataset is needed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace, asdict

import numpy as np

from . import likelihoods as lk
from .blast import DEFAULT_MAGNITUDE_LINK, LN10
from .data import CraterObs, Dataset, SarBox, SeismicObs, VlmRecord


class ScenarioPreset(enum.Enum):
    BASE_CLEAN = "base_clean"
    SAR_HEAVY_TAIL = "sar_heavy_tail"
    SAR_BIASED = "sar_biased"
    VLM_NOISY = "vlm_noisy"
    DEPENDENCE_06 = "dependence_06"


@dataclass(frozen=True)
class ScenarioConfig:
    y_true_kt: float = 0.30
    n_sar: int = 120
    nu_gen: float = 8.0
    delta_bias_dex: float = 0.0
    sigma_sar_gen: float = 40.0
    n_vlm: int = 160
    eta_mislabel: float = 0.0
    rho: float = 0.0
    seismic_a: float = 3.0
    seismic_b: float = -1.2
    sigma_m_gen: float = 0.10
    crater_c: float = 1.0
    crater_d: float = 1.2
    sigma_c_gen: float = 0.05
    r_min_m: float = 300.0
    r_max_m: float = 6000.0
    p50_gen_kpa: float = 60.0
    k_gen: float = 2.0
    sdex_gen: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sar <= 0 or self.n_vlm <= 0:
            raise ValueError("observation counts must be positive")
        if not (0.0 <= self.rho < 1.0):
            raise ValueError("rho must lie in [0, 1)")
        if self.nu_gen <= 2.0:
            raise ValueError("nu_gen must exceed 2")
        if not (0.0 <= self.eta_mislabel <= 1.0):
            raise ValueError("eta_mislabel must lie in [0, 1]")
        if self.r_min_m <= 0 or self.r_max_m < self.r_min_m:
            raise ValueError("invalid range bounds")


def preset(p: ScenarioPreset | str, seed: int = 0) -> ScenarioConfig:
    p = ScenarioPreset(p) if isinstance(p, str) else p
    base = ScenarioConfig(seed=seed)
    if p is ScenarioPreset.BASE_CLEAN:
        return base
    if p is ScenarioPreset.SAR_HEAVY_TAIL:
        return replace(base, nu_gen=2.5)
    if p is ScenarioPreset.SAR_BIASED:
        return replace(base, delta_bias_dex=0.35)
    if p is ScenarioPreset.VLM_NOISY:
        return replace(base, eta_mislabel=0.10)
    if p is ScenarioPreset.DEPENDENCE_06:
        return replace(base, rho=0.6)
    raise ValueError(f"unknown preset {p}")


def matched_links(cfg: ScenarioConfig) -> ScenarioConfig:
    """Replace the generator's affine seismic/crater links with the ones the
    inference model inverts, producing a fully well-specified dataset."""
    link = DEFAULT_MAGNITUDE_LINK
    return replace(cfg,
                   seismic_a=LN10 / link.beta,
                   seismic_b=-link.alpha / link.beta,
                   crater_c=1.0 / 3.0,
                   crater_d=2.0)


def _draw_ranges(rng: np.random.Generator, n: int, cfg: ScenarioConfig) -> np.ndarray:
    """Log-uniform ranges, redrawn while the blast chain is out of range."""
    lo, hi = math.log(cfg.r_min_m), math.log(cfg.r_max_m)
    r = np.exp(rng.uniform(lo, hi, n))
    for _ in range(100):
        ok = lk.kb_log10_pressure(np.log(r), cfg.y_true_kt, in_kpa=False)
        if ok is not None:
            return r
        bad = np.zeros(n, dtype=bool)
        for i, ri in enumerate(r):
            bad[i] = lk.kb_log10_pressure(np.log(np.array([ri])),
                                          cfg.y_true_kt, in_kpa=False) is None
        r[bad] = np.exp(rng.uniform(lo, hi, int(bad.sum())))
    raise RuntimeError("could not draw in-range SAR/VLM distances after 100 attempts")


def generate(cfg: ScenarioConfig) -> Dataset:
    """One synthetic dataset; pure function of the configuration."""
    rng = np.random.default_rng(cfg.seed)
    lt = math.log10(cfg.y_true_kt)

    shock = float(rng.standard_normal())
    mix = math.sqrt(1.0 - cfg.rho ** 2)
    eta_m = float(rng.standard_normal())
    eta_c = float(rng.standard_normal())
    x_m = mix * eta_m + cfg.rho * shock
    x_c = mix * eta_c + cfg.rho * shock

    mw = cfg.seismic_a * lt + cfg.seismic_b + cfg.sigma_m_gen * x_m
    z_crater = cfg.crater_c * lt + cfg.crater_d + cfg.sigma_c_gen * x_c
    diameter = 10.0 ** z_crater

    # SAR boxes: Student-t noise on the logit of the vulnerability curve,
    # with the Gaussian numerator carrying the shared shock
    r_sar = _draw_ranges(rng, cfg.n_sar, cfg)
    x_kpa, _ = lk.kb_log10_pressure(np.log(r_sar), cfg.y_true_kt, in_kpa=True)
    z_mu = cfg.k_gen * (x_kpa + cfg.delta_bias_dex - math.log10(cfg.p50_gen_kpa))
    eta_sar = rng.standard_normal(cfg.n_sar)
    x_sar = mix * eta_sar + cfg.rho * shock
    g = rng.chisquare(cfg.nu_gen, cfg.n_sar) / cfg.nu_gen
    z_obs = z_mu + (cfg.sigma_sar_gen / 100.0) * x_sar / np.sqrt(g)
    damage = 100.0 / (1.0 + np.exp(-z_obs))
    damage = np.clip(damage, 0.5, 99.5)
    sar = tuple(SarBox(float(r), float(d)) for r, d in zip(r_sar, damage))

    # VLM records: soft-binned PMFs at the generator spread, mislabel-mixed
    r_vlm = _draw_ranges(rng, cfg.n_vlm, cfg)
    x_psi, _ = lk.kb_log10_pressure(np.log(r_vlm), cfg.y_true_kt, in_kpa=False)
    pi = np.exp(lk.vlm_log_bin_probs(x_psi, cfg.sdex_gen))
    q = (1.0 - cfg.eta_mislabel) * pi + cfg.eta_mislabel / 9.0
    q /= q.sum(axis=1, keepdims=True)
    vlm = tuple(VlmRecord(float(r), row) for r, row in zip(r_vlm, q))

    meta = {"generator": asdict(cfg)}
    return Dataset(seismic=SeismicObs(mw),
                   crater=CraterObs(width_m=diameter, length_m=diameter),
                   sar=sar, vlm=vlm, meta=meta)
