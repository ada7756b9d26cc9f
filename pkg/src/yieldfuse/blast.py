"""Deterministic forward maps from explosive yield to physical observables.

All yields are in kilotons TNT equivalent, ranges in meters, pressures in
psi unless converted explicitly. The overpressure correlations are the
simplified hemispherical-surface-burst fits evaluated in natural log space;
outside their scaled-distance fit range the quartic diverges quickly, so
out-of-range inputs are a hard error rather than an extrapolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LN10 = math.log(10.0)
FT_PER_M = 3.28084
LB_PER_KG = 2.20462
KPA_PER_PSI = 6.89476

# Z_en [ft/lb^(1/3)] = Z_si [m/kg^(1/3)] * EN_PER_SI
EN_PER_SI = FT_PER_M / LB_PER_KG ** (1.0 / 3.0)


class ScaledDistanceError(ValueError):
    """Scaled distance fell outside the fitted overpressure regimes."""


@dataclass(frozen=True)
class KbCoefficients:
    """Piecewise quartic overpressure fit, one (A..E) row per regime.

    regime_bounds are half-open on the left edge of each interior regime:
    [0.5, 7.25), [7.25, 60.0), [60.0, 500.0].
    """

    regime_bounds: tuple[float, ...] = (0.5, 7.25, 60.0, 500.0)
    coefficients: tuple[tuple[float, float, float, float, float], ...] = (
        (6.914, -1.439, -0.282, -0.142, 0.069),
        (8.831, -3.700, 0.271, 0.073, -0.013),
        (5.424, -1.407, 0.0, 0.0, 0.0),
    )

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.asarray(self.regime_bounds, dtype=float),
                np.asarray(self.coefficients, dtype=float))


KB_COEFFICIENTS = KbCoefficients()

_KB_BOUNDS, _KB_ROWS = KB_COEFFICIENTS.as_arrays()
# interior regime edges in ln(Z_en) space, used for vectorized row lookup
_KB_LN_EDGES = np.log(_KB_BOUNDS[1:3])
_KB_LN_LO = math.log(_KB_BOUNDS[0])
_KB_LN_HI = math.log(_KB_BOUNDS[-1])


@dataclass(frozen=True)
class MagnitudeLink:
    """Affine yield-magnitude regression ln(Y) = alpha + beta * Mw.

    Natural-log convention: with the default constants, Mw = 4.50 inverts
    to 0.343 kt, matching the seismic-only modal estimate.
    """

    alpha: float = -14.587
    beta: float = 3.004

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be positive")


DEFAULT_MAGNITUDE_LINK = MagnitudeLink()


def scaled_distance_en(range_m: float, yield_kt: float) -> float:
    """English-unit scaled distance Z_en (ft/lb^(1/3)) for a surface burst."""
    if range_m <= 0:
        raise ValueError("range_m must be positive")
    if yield_kt <= 0:
        raise ValueError("yield_kt must be positive")
    w_kg = yield_kt * 1.0e6
    return range_m / w_kg ** (1.0 / 3.0) * EN_PER_SI


def kb_ln_pressure_terms(ln_zen: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized quartic in u = ln(Z_en): returns (ln P_psi, d lnP / du).

    Callers are responsible for range checking; this only selects the
    coefficient row per element (half-open lower edges).
    """
    u = np.asarray(ln_zen, dtype=float)
    idx = np.searchsorted(_KB_LN_EDGES, u.ravel(), side="right")
    rows = _KB_ROWS[idx].reshape(u.shape + (5,))
    a, b, c, d, e = np.moveaxis(rows, -1, 0)
    lnp = a + u * (b + u * (c + u * (d + u * e)))
    dlnp = b + u * (2.0 * c + u * (3.0 * d + u * 4.0 * e))
    return lnp, dlnp


def kb_incident_overpressure(range_m: float, yield_kt: float) -> float:
    """Peak incident (side-on) overpressure in psi at range_m from yield_kt.

    Raises ScaledDistanceError when Z_en leaves [0.5, 500.0].
    """
    zen = scaled_distance_en(range_m, yield_kt)
    if not (_KB_BOUNDS[0] <= zen <= _KB_BOUNDS[-1]):
        raise ScaledDistanceError(
            f"scaled distance Z_en={zen:.6g} outside supported range "
            f"[{_KB_BOUNDS[0]}, {_KB_BOUNDS[-1]}] ft/lb^(1/3)")
    lnp, _ = kb_ln_pressure_terms(np.array([math.log(zen)]))
    return float(math.exp(lnp[0]))


def psi_to_kpa(p_psi: float) -> float:
    if p_psi < 0:
        raise ValueError("pressure must be nonnegative")
    return p_psi * KPA_PER_PSI


def crater_mu_log10(yield_kt: float) -> float:
    """Expected log10 crater diameter (m): cube-root scaling in yield."""
    if yield_kt <= 0:
        raise ValueError("yield_kt must be positive")
    return (math.log10(yield_kt) + 6.0) / 3.0


def magnitude_from_yield(yield_kt: float,
                         link: MagnitudeLink = DEFAULT_MAGNITUDE_LINK) -> float:
    """Expected moment magnitude for a given yield, inverting the link."""
    if yield_kt <= 0:
        raise ValueError("yield_kt must be positive")
    return (math.log(yield_kt) - link.alpha) / link.beta


def mw_from_log_moment(log10_m0_nm: float) -> float:
    """Moment magnitude from log10 seismic moment in N*m."""
    return (2.0 / 3.0) * log10_m0_nm - 6.07
