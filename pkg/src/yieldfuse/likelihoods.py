"""The four modality log-likelihoods exactly as their tempered terms enter
the fused posterior.

Seismic and crater are Gaussian in (log-)observable space and sum over
observations. SAR is a Student-t on logit-damage with an arithmetic mean
over boxes, VLM a soft-binned cross-entropy with an entropy-weighted mean
over records; both means prevent the large box/image counts from drowning
the scalar modalities.

The *_core functions return the aggregate value together with its exact
partial derivatives; they are the single source of truth used both by the
public functions below and by the fused joint density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .blast import (DEFAULT_MAGNITUDE_LINK, KPA_PER_PSI, LN10, EN_PER_SI,
                    MagnitudeLink, ScaledDistanceError, kb_incident_overpressure,
                    kb_ln_pressure_terms, psi_to_kpa, _KB_LN_LO, _KB_LN_HI)
from .data import DAMAGE_CLAMP_HI, DAMAGE_CLAMP_LO, CraterObs, SarBox, SeismicObs, VlmRecord

# overpressure thresholds (psi) separating the nine damage categories
VLM_EDGES_PSI = np.array([0.04, 0.16, 0.40, 1.10, 2.10, 3.10, 5.10, 10.0])
VLM_LOG10_EDGES = np.log10(VLM_EDGES_PSI)

# characteristic pressure (psi) per category for the expected-overpressure map
VLM_PSI_VALUES = np.array([0.0, 0.095, 0.28, 0.705, 1.55, 2.55, 4.05, 6.05, 8.0])

_LN_KPA_PER_PSI = math.log(KPA_PER_PSI)
_LN_1E6 = math.log(1.0e6)
_LN_EN_PER_SI = math.log(EN_PER_SI)


@dataclass(frozen=True)
class ModalityLogLik:
    """Aggregate log-likelihood plus the pointwise contributions.

    `value` is the sum of `per_observation` for seismic/crater and the
    (weighted) mean for SAR/VLM; `weights` is populated for VLM only.
    """

    value: float
    per_observation: np.ndarray
    weights: np.ndarray | None = None


# ---------------------------------------------------------------------------
# blast-pressure chain shared by SAR and VLM
# ---------------------------------------------------------------------------

def kb_log10_pressure(ln_r: np.ndarray, yield_kt: float, in_kpa: bool
                      ) -> tuple[np.ndarray, np.ndarray] | None:
    """log10 peak incident pressure at each range, with d/d(yield).

    Returns None when any scaled distance leaves the fitted regimes, which
    the joint density treats as zero posterior mass.
    """
    ln_zen = ln_r + _LN_EN_PER_SI - (math.log(yield_kt) + _LN_1E6) / 3.0
    if ln_zen.min() < _KB_LN_LO or ln_zen.max() > _KB_LN_HI:
        return None
    lnp, dlnp_du = kb_ln_pressure_terms(ln_zen)
    if in_kpa:
        lnp = lnp + _LN_KPA_PER_PSI
    x = lnp / LN10
    dx_dy = -dlnp_du / (3.0 * yield_kt * LN10)
    return x, dx_dy


def sar_logits(damage_pct: np.ndarray) -> np.ndarray:
    """Logit of damage fraction, clamped away from the saturated endpoints."""
    d = np.clip(np.asarray(damage_pct, dtype=float), DAMAGE_CLAMP_LO, DAMAGE_CLAMP_HI)
    f = d / 100.0
    return np.log(f) - np.log1p(-f)


# ---------------------------------------------------------------------------
# seismic
# ---------------------------------------------------------------------------

def seismic_core(mw_obs: float, yield_kt: float, sigma_m: float,
                 link: MagnitudeLink = DEFAULT_MAGNITUDE_LINK
                 ) -> tuple[float, float, float]:
    """Gaussian log density of the observed magnitude; returns
    (loglik, d/d yield, d/d sigma_m)."""
    mw_pred = (math.log(yield_kt) - link.alpha) / link.beta
    r = mw_obs - mw_pred
    inv_var = 1.0 / (sigma_m * sigma_m)
    ll = -0.5 * r * r * inv_var - math.log(sigma_m) - 0.5 * math.log(2.0 * math.pi)
    d_y = r * inv_var / (link.beta * yield_kt)
    d_sigma = r * r * inv_var / sigma_m - 1.0 / sigma_m
    return ll, d_y, d_sigma


def seismic_loglik(obs: SeismicObs, yield_kt: float, sigma_m: float,
                   link: MagnitudeLink = DEFAULT_MAGNITUDE_LINK) -> ModalityLogLik:
    if yield_kt <= 0:
        raise ValueError("yield_kt must be positive")
    ll, _, _ = seismic_core(obs.mw_obs, yield_kt, sigma_m, link)
    return ModalityLogLik(value=ll, per_observation=np.array([ll]))


# ---------------------------------------------------------------------------
# crater
# ---------------------------------------------------------------------------

def crater_core(z_obs: np.ndarray, yield_kt: float, sigma_c: float
                ) -> tuple[float, np.ndarray, float, float]:
    """Independent Gaussians on log10 dimensions about the scaling mean.

    Returns (loglik, pointwise, d/d yield, d/d sigma_c)."""
    mu = (math.log10(yield_kt) + 6.0) / 3.0
    r = z_obs - mu
    inv_var = 1.0 / (sigma_c * sigma_c)
    pointwise = (-0.5 * r * r * inv_var - math.log(sigma_c)
                 - 0.5 * math.log(2.0 * math.pi))
    d_y = float(r.sum()) * inv_var / (3.0 * yield_kt * LN10)
    d_sigma = float((r * r).sum()) * inv_var / sigma_c - r.size / sigma_c
    return float(pointwise.sum()), pointwise, d_y, d_sigma


def crater_loglik(obs: CraterObs, yield_kt: float, sigma_c: float) -> ModalityLogLik:
    if yield_kt <= 0:
        raise ValueError("yield_kt must be positive")
    z = np.log10([obs.width_m, obs.length_m])
    ll, pointwise, _, _ = crater_core(z, yield_kt, sigma_c)
    return ModalityLogLik(value=ll, per_observation=pointwise)


# ---------------------------------------------------------------------------
# SAR
# ---------------------------------------------------------------------------

def sar_vulnerability_mu(range_m: float, yield_kt: float, p50_kpa: float,
                         k_slope: float) -> float:
    """Expected damage percentage from the logistic vulnerability curve."""
    if min(range_m, yield_kt, p50_kpa) <= 0:
        raise ValueError("range_m, yield_kt and p50_kpa must be positive")
    p_kpa = psi_to_kpa(kb_incident_overpressure(range_m, yield_kt))
    u = k_slope * (math.log10(p_kpa) - math.log10(p50_kpa))
    if u >= 0:
        return 100.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return 100.0 * e / (1.0 + e)


def sar_core(ln_r: np.ndarray, z_obs: np.ndarray, yield_kt: float,
             p50_kpa: float, k_slope: float, sigma_sar: float, nu: float
             ) -> tuple[float, np.ndarray, float, float, float, float, float] | None:
    """Student-t log density on the logit scale, averaged over boxes.

    Returns (L, pointwise, dY, dP50, dK, dSigmaSar, dNu) or None when the
    blast-pressure chain leaves its fitted range.
    """
    kb = kb_log10_pressure(ln_r, yield_kt, in_kpa=True)
    if kb is None:
        return None
    x, dx_dy = kb
    lp50 = math.log10(p50_kpa)
    z_mu = k_slope * (x - lp50)
    s = sigma_sar / 100.0
    e = (z_obs - z_mu) / s

    e2 = e * e
    denom = nu + e2
    half = 0.5 * (nu + 1.0)
    const = float(gammaln(half) - gammaln(0.5 * nu)) - 0.5 * math.log(nu * math.pi)
    pointwise = const - math.log(s) - half * np.log1p(e2 / nu)
    n = e.size
    value = float(pointwise.mean())

    ge = -(nu + 1.0) * e / denom  # d(pointwise)/d(e)
    d_y = -(k_slope / s) * float((ge * dx_dy).mean())
    d_p50 = (k_slope / (s * p50_kpa * LN10)) * float(ge.mean())
    d_k = -(1.0 / s) * float((ge * (x - lp50)).mean())
    d_ssar = float((-1.0 + (nu + 1.0) * e2 / denom).mean()) / (s * 100.0)
    d_nu = (0.5 * float(digamma(half) - digamma(0.5 * nu)) - 0.5 / nu
            + float((-0.5 * np.log1p(e2 / nu)
                     + half * e2 / (nu * denom)).mean()))
    return value, pointwise, d_y, d_p50, d_k, d_ssar, d_nu


def sar_loglik(boxes: list[SarBox] | tuple[SarBox, ...], yield_kt: float,
               p50_kpa: float, k_slope: float, sigma_sar: float,
               nu: float) -> ModalityLogLik:
    if not boxes:
        raise ValueError("sar_loglik requires at least one box; drop the modality instead")
    if nu <= 2:
        raise ValueError("nu must exceed 2")
    ln_r = np.log([b.range_m for b in boxes])
    z = sar_logits(np.array([b.damage_pct for b in boxes]))
    out = sar_core(ln_r, z, yield_kt, p50_kpa, k_slope, sigma_sar, nu)
    if out is None:
        zen_lo = math.exp(float(ln_r.min()) + _LN_EN_PER_SI
                          - (math.log(yield_kt) + _LN_1E6) / 3.0)
        raise ScaledDistanceError(
            f"scaled distance out of range for yield {yield_kt} kt "
            f"(smallest Z_en={zen_lo:.4g})")
    value, pointwise = out[0], out[1]
    return ModalityLogLik(value=value, per_observation=pointwise)


# ---------------------------------------------------------------------------
# VLM
# ---------------------------------------------------------------------------

def _softplus(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def vlm_log_bin_probs(x_log10_psi: np.ndarray, sigma_dex: float) -> np.ndarray:
    """Log category probabilities (N, 9) from log10 pressure via logistic
    CDF differences, computed in a cancellation-free form."""
    x = np.atleast_1d(np.asarray(x_log10_psi, dtype=float))
    a = (VLM_LOG10_EDGES[None, :] - x[:, None]) / sigma_dex  # (N, 8)
    sp = _softplus(a)
    delta = np.diff(VLM_LOG10_EDGES) / sigma_dex  # (7,)
    ln_em1 = delta + np.log1p(-np.exp(-delta))  # log(expm1(delta)), overflow-safe
    out = np.empty((x.size, 9))
    out[:, 0] = a[:, 0] - sp[:, 0]                       # log CDF at first edge
    out[:, 1:8] = a[:, :7] + ln_em1[None, :] - sp[:, :7] - sp[:, 1:]
    out[:, 8] = -sp[:, 7]                                # log survival at last edge
    return out


def vlm_bin_probs(p_psi: float, sigma_dex: float) -> np.ndarray:
    """The nine soft-binned category probabilities for one pressure."""
    if p_psi <= 0:
        raise ValueError("p_psi must be positive")
    return np.exp(vlm_log_bin_probs(np.log10(np.array([p_psi])), sigma_dex)[0])


def vlm_expected_psi(pmf: np.ndarray) -> float:
    """Expected overpressure (psi) under the characteristic-value map."""
    q = np.asarray(pmf, dtype=float)
    if q.shape != (9,):
        raise ValueError("pmf must have 9 entries")
    return float(q @ VLM_PSI_VALUES)


def vlm_entropy_weights(pmfs: np.ndarray) -> np.ndarray:
    """Informativeness weights: 1/(1 + H2), median-normalized, clipped."""
    q = np.asarray(pmfs, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * np.log2(np.where(q > 0, q, 1.0)), 0.0)
    h_bits = -terms.sum(axis=1)
    raw = 1.0 / (1.0 + h_bits)
    return np.clip(raw / np.median(raw), 0.25, 4.0)


def vlm_core(ln_r: np.ndarray, q: np.ndarray, weights: np.ndarray,
             yield_kt: float, sigma_dex: float
             ) -> tuple[float, np.ndarray, float, float] | None:
    """Weighted-mean cross-entropy term with exact derivatives.

    Returns (L, pointwise, dY, dSigmaDex) or None on blast range violation.
    Works column-blockwise (first bin, seven interior bins, last bin) to
    avoid padded intermediates in the sampler's hot path.
    """
    kb = kb_log10_pressure(ln_r, yield_kt, in_kpa=False)
    if kb is None:
        return None
    x, dx_dy = kb
    s = sigma_dex
    a = (VLM_LOG10_EDGES[None, :] - x[:, None]) / s  # (N, 8) edge coordinates
    sig = 1.0 / (1.0 + np.exp(-np.clip(a, -700.0, 700.0)))
    sp = _softplus(a)
    delta = np.diff(VLM_LOG10_EDGES) / s
    ln_em1 = delta + np.log1p(-np.exp(-delta))  # log(expm1(delta)), overflow-safe
    ratio = 1.0 / (-np.expm1(-delta))           # e^d / (e^d - 1)

    q0 = q[:, 0]
    qi = q[:, 1:8]
    q8 = q[:, 8]
    a_lo = a[:, :7]
    a_hi = a[:, 1:]
    s_lo = sig[:, :7]
    s_hi = sig[:, 1:]

    # cross-entropy: q . ln pi, with ln pi in the cancellation-free form
    pointwise = (q0 * (a[:, 0] - sp[:, 0])
                 + (qi * (a_lo + ln_em1[None, :] - sp[:, :7] - sp[:, 1:])).sum(axis=1)
                 - q8 * sp[:, 7])

    # d ln pi/d(edge): interior bins have la = 1 - R - sig_lo, lb = R - sig_hi;
    # their sum telescopes to 1 - sig_lo - sig_hi
    dx_terms = -(q0 * (1.0 - sig[:, 0])
                 + (qi * (1.0 - s_lo - s_hi)).sum(axis=1)
                 - q8 * sig[:, 7]) / s
    la = (1.0 - ratio)[None, :] - s_lo
    lb = ratio[None, :] - s_hi
    ds_terms = -(q0 * a[:, 0] * (1.0 - sig[:, 0])
                 + (qi * (a_lo * la + a_hi * lb)).sum(axis=1)
                 - q8 * a[:, 7] * sig[:, 7]) / s

    wsum = float(weights.sum())
    value = float(weights @ pointwise) / wsum
    d_y = float(weights @ (dx_terms * dx_dy)) / wsum
    d_s = float(weights @ ds_terms) / wsum
    return value, pointwise, d_y, d_s


def vlm_loglik(records: list[VlmRecord] | tuple[VlmRecord, ...],
               yield_kt: float, sigma_dex: float) -> ModalityLogLik:
    if not records:
        raise ValueError("vlm_loglik requires at least one record; drop the modality instead")
    ln_r = np.log([v.range_m for v in records])
    q = np.stack([v.pmf for v in records])
    w = vlm_entropy_weights(q)
    out = vlm_core(ln_r, q, w, yield_kt, sigma_dex)
    if out is None:
        raise ScaledDistanceError(
            f"scaled distance out of range for yield {yield_kt} kt")
    value, pointwise = out[0], out[1]
    return ModalityLogLik(value=value, per_observation=pointwise, weights=w)
