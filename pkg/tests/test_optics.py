"""Unit tests for the polarization bench."""

import math

import pytest
from hypothesis import given, settings, strategies as st

from blindsim.optics import (BenchParams, PolarizationComponent,
                             _pbs_fractions, effective_extinction, route)
from blindsim.timeline import constant_diagram


def comp(angle, power=13e-12, total=1e-3, wavelength=820e-9):
    return PolarizationComponent(angle, constant_diagram(power, total, wavelength))


class TestBenchParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            BenchParams(pbs_extinction_db=0.0)
        with pytest.raises(ValueError):
            BenchParams(insertion_loss_db=-1.0)
        with pytest.raises(ValueError):
            BenchParams(basis_choice="magic")
        with pytest.raises(ValueError):
            BenchParams(basis_choice="active", n_detectors=4)
        with pytest.raises(ValueError):
            BenchParams(basis_choice="passive", n_detectors=2)

    def test_leak_fraction(self):
        b = BenchParams(pbs_extinction_db=30.0)
        g = 1e-3
        assert b.leak_fraction == pytest.approx(g / (1 + g))

    def test_component_angle_range(self):
        with pytest.raises(ValueError):
            comp(180.0)
        with pytest.raises(ValueError):
            comp(-1.0)


class TestRouting:
    def test_vertical_to_d0(self):
        # vertical input, matching basis, huge extinction: everything to D0
        bench = BenchParams(pbs_extinction_db=200.0)
        out = route([comp(0.0)], 0.0, bench)
        assert out[0].mean_power() == pytest.approx(13e-12)
        assert out[1].mean_power() == pytest.approx(0.0, abs=1e-25)

    def test_conjugate_basis_splits_evenly(self):
        bench = BenchParams(pbs_extinction_db=200.0)
        out = route([comp(0.0)], 45.0, bench)
        assert out[0].mean_power() == pytest.approx(6.5e-12)
        assert out[1].mean_power() == pytest.approx(6.5e-12)

    def test_extinction_leak_power(self):
        # 13 pW vertical, 30 dB PBS: the wrong port receives ~P*1e-3
        bench = BenchParams(pbs_extinction_db=30.0)
        out = route([comp(0.0)], 0.0, bench)
        assert out[1].mean_power() == pytest.approx(13e-12 * 1e-3, rel=2e-3)

    def test_empty_component_list_raises(self):
        with pytest.raises(ValueError):
            route([], 0.0, BenchParams())

    def test_mismatched_diagrams_raise(self):
        with pytest.raises(ValueError):
            route([comp(0.0, total=1e-3), comp(90.0, total=2e-3)], 0.0,
                  BenchParams())

    def test_passive_bench_detector_count_and_split(self):
        bench = BenchParams(basis_choice="passive", n_detectors=4,
                            pbs_extinction_db=200.0)
        out = route([comp(0.0)], 0.0, bench)
        assert sorted(out) == [0, 1, 2, 3]
        # 0-degree arm: all of its half to D0; 45-degree arm: even split
        assert out[0].mean_power() == pytest.approx(6.5e-12)
        assert out[1].mean_power() == pytest.approx(0.0, abs=1e-25)
        assert out[2].mean_power() == pytest.approx(3.25e-12)
        assert out[3].mean_power() == pytest.approx(3.25e-12)

    def test_insertion_loss(self):
        bench = BenchParams(pbs_extinction_db=200.0, insertion_loss_db=3.0)
        out = route([comp(0.0)], 0.0, bench)
        assert out[0].mean_power() == pytest.approx(13e-12 * 10 ** -0.3)

    @settings(max_examples=30, derandomize=True, deadline=None)
    @given(st.floats(0.0, 179.99), st.floats(0.0, 45.0), st.floats(3.0, 60.0))
    def test_power_conservation(self, angle, basis, ext_db):
        bench = BenchParams(pbs_extinction_db=ext_db)
        basis = 0.0 if basis < 22.5 else 45.0
        out = route([comp(angle)], basis, bench)
        total = sum(d.mean_power() for d in out.values())
        assert total == pytest.approx(13e-12, rel=1e-9)

    def test_pbs_fractions_sum_to_one(self):
        for angle in (0.0, 30.0, 45.0, 90.0, 170.0):
            f0, f1 = _pbs_fractions(angle, 1e-3)
            assert f0 + f1 == pytest.approx(1.0)
            assert 0.0 <= f0 <= 1.0


class TestEffectiveExtinction:
    def test_perfect_alignment_dominated_by_pbs(self):
        bench = BenchParams(pbs_extinction_db=30.0)
        assert effective_extinction(bench, 0.0) == pytest.approx(30.0, abs=0.01)

    def test_orthogonal_injection_zero_db(self):
        bench = BenchParams(pbs_extinction_db=30.0)
        assert effective_extinction(bench, 90.0) == pytest.approx(0.0, abs=0.01)

    def test_negative_error_rejected(self):
        with pytest.raises(ValueError):
            effective_extinction(BenchParams(), -1.0)

    def test_alignment_error_for_target_band(self):
        # at infinite PBS extinction, r_e = -10*log10(sin^2(err)): the 19-23 dB
        # band maps to errors of about 6.4 down to 4.1 degrees
        bench = BenchParams(pbs_extinction_db=1000.0)
        err_19 = math.degrees(math.asin(math.sqrt(10 ** -1.9)))
        err_23 = math.degrees(math.asin(math.sqrt(10 ** -2.3)))
        assert err_19 == pytest.approx(6.44, abs=0.05)
        assert err_23 == pytest.approx(4.06, abs=0.05)
        assert effective_extinction(bench, err_19) == pytest.approx(19.0, abs=0.05)
        assert effective_extinction(bench, err_23) == pytest.approx(23.0, abs=0.05)
