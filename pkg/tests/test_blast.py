import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yieldfuse import blast

# independent oracle: direct polynomial evaluation from the coefficient table
ROWS = blast.KB_COEFFICIENTS.coefficients


def poly_psi(zen, row):
    u = math.log(zen)
    a, b, c, d, e = ROWS[row]
    return math.exp(a + b * u + c * u**2 + d * u**3 + e * u**4)


def range_for_zen(zen, yield_kt):
    w_kg = yield_kt * 1.0e6
    return zen * w_kg ** (1.0 / 3.0) / blast.EN_PER_SI


class TestCoefficientTable:
    def test_exact_literals(self):
        kb = blast.KB_COEFFICIENTS
        assert kb.regime_bounds == (0.5, 7.25, 60.0, 500.0)
        assert kb.coefficients == (
            (6.914, -1.439, -0.282, -0.142, 0.069),
            (8.831, -3.700, 0.271, 0.073, -0.013),
            (5.424, -1.407, 0.0, 0.0, 0.0),
        )


class TestScaledDistance:
    def test_spec_example(self):
        # 1000 m from 0.5 kt lands in the middle regime near 31.77
        zen = blast.scaled_distance_en(1000.0, 0.5)
        w = 0.5e6
        assert zen == pytest.approx(1000.0 / w ** (1 / 3) * 3.28084 / 2.20462 ** (1 / 3),
                                    rel=1e-12)
        assert 7.25 <= zen < 60.0
        assert zen == pytest.approx(31.76, abs=0.01)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            blast.scaled_distance_en(-1.0, 1.0)
        with pytest.raises(ValueError):
            blast.scaled_distance_en(100.0, 0.0)


class TestIncidentOverpressure:
    def test_regime3_closed_form(self):
        r = range_for_zen(100.0, 1.0)
        expected = math.exp(5.424 - 1.407 * math.log(100.0))
        assert blast.kb_incident_overpressure(r, 1.0) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(0.348, abs=0.001)

    def test_regime2_example(self):
        zen = blast.scaled_distance_en(1000.0, 0.5)
        expected = poly_psi(zen, 1)
        got = blast.kb_incident_overpressure(1000.0, 0.5)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(1.55, abs=0.01)

    def test_boundary_is_half_open(self):
        # exactly 7.25 uses the middle row, not the near-field row
        r = range_for_zen(7.25, 1.0)
        zen = blast.scaled_distance_en(r, 1.0)
        assert zen == pytest.approx(7.25, rel=1e-12)
        got = blast.kb_incident_overpressure(r, 1.0)
        assert got == pytest.approx(poly_psi(zen, 1), rel=1e-10)

    def test_out_of_range_names_zen(self):
        with pytest.raises(blast.ScaledDistanceError, match="Z_en"):
            blast.kb_incident_overpressure(1.0, 1.0)
        with pytest.raises(blast.ScaledDistanceError):
            blast.kb_incident_overpressure(1.0e6, 0.01)

    def test_monotone_decreasing_in_range_per_regime(self):
        rng = np.random.default_rng(0)
        for lo, hi in [(0.5, 7.25), (7.25, 60.0), (60.0, 500.0)]:
            for _ in range(1000):
                y = float(rng.uniform(0.01, 2.75))
                z1, z2 = sorted(rng.uniform(lo * 1.0001, hi * 0.9999, 2))
                if z1 == z2:
                    continue
                p1 = blast.kb_incident_overpressure(range_for_zen(z1, y), y)
                p2 = blast.kb_incident_overpressure(range_for_zen(z2, y), y)
                assert p1 > p2

    def test_regime_junction_jumps_small(self):
        for zen in (7.25, 60.0):
            below = poly_psi(zen * (1 - 1e-9), 0 if zen == 7.25 else 1)
            above = poly_psi(zen, 1 if zen == 7.25 else 2)
            assert abs(above - below) / below < 0.10

    def test_cube_root_self_similarity(self):
        rng = np.random.default_rng(1)
        for k in (0.1, 10.0):
            for _ in range(50):
                y = float(rng.uniform(0.05, 1.5))
                r = float(rng.uniform(200.0, 4000.0))
                if not 0.5 <= blast.scaled_distance_en(r, y) <= 500.0:
                    continue
                p1 = blast.kb_incident_overpressure(r, y)
                p2 = blast.kb_incident_overpressure(r * k ** (1 / 3), y * k)
                assert p2 == pytest.approx(p1, rel=1e-12)


class TestUnitConversion:
    @pytest.mark.parametrize("psi,kpa", [(0.0, 0.0), (1.0, 6.89476), (10.0, 68.9476)])
    def test_psi_to_kpa(self, psi, kpa):
        assert blast.psi_to_kpa(psi) == pytest.approx(kpa, rel=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            blast.psi_to_kpa(-0.1)


class TestCraterScaling:
    def test_unit_yield(self):
        assert blast.crater_mu_log10(1.0) == pytest.approx(2.0, abs=1e-12)

    @pytest.mark.parametrize("y", [0.34, 2.75])
    def test_closed_form(self, y):
        assert blast.crater_mu_log10(y) == pytest.approx((math.log10(y) + 6.0) / 3.0,
                                                         rel=1e-12)

    def test_max_credible_yield_gives_140m(self):
        # 2.75 kt maps to roughly the observed 140 m diameter scale
        assert 10 ** blast.crater_mu_log10(2.75) == pytest.approx(140.1, abs=0.1)

    @given(st.floats(min_value=1e-3, max_value=2.75))
    @settings(max_examples=200, deadline=None)
    def test_cube_root_scaling_property(self, y):
        diff = blast.crater_mu_log10(8.0 * y) - blast.crater_mu_log10(y)
        assert diff == pytest.approx(math.log10(2.0), abs=1e-12)


class TestMagnitudeLink:
    def test_seismic_mode_value(self):
        # inversion at the observed magnitude lands on the reported mode
        y = math.exp(blast.DEFAULT_MAGNITUDE_LINK.alpha
                     + blast.DEFAULT_MAGNITUDE_LINK.beta * 4.50)
        assert blast.magnitude_from_yield(y) == pytest.approx(4.50, abs=1e-9)
        assert y == pytest.approx(0.343, abs=1e-3)

    def test_affine_root(self):
        y0 = math.exp(blast.DEFAULT_MAGNITUDE_LINK.alpha)
        assert blast.magnitude_from_yield(y0) == pytest.approx(0.0, abs=1e-12)

    def test_monotone(self):
        assert blast.magnitude_from_yield(0.2) < blast.magnitude_from_yield(0.4)

    def test_round_trip_identity(self):
        link = blast.DEFAULT_MAGNITUDE_LINK
        rng = np.random.default_rng(2)
        for y in rng.uniform(0.01, 2.75, 100):
            mw = blast.magnitude_from_yield(float(y), link)
            back = math.exp(link.alpha + link.beta * mw)
            assert back == pytest.approx(float(y), rel=1e-12)

    def test_beta_positive_enforced(self):
        with pytest.raises(ValueError):
            blast.MagnitudeLink(alpha=0.0, beta=-1.0)


class TestMomentMagnitude:
    def test_reported_ensemble_moment(self):
        assert blast.mw_from_log_moment(15.85) == pytest.approx(4.497, abs=1e-3)

    def test_affine_root(self):
        assert blast.mw_from_log_moment(9.105) == pytest.approx(0.0, abs=1e-12)

    def test_slope(self):
        d = blast.mw_from_log_moment(16.85) - blast.mw_from_log_moment(15.85)
        assert d == pytest.approx(2.0 / 3.0, abs=1e-12)
