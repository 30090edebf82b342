"""Unit tests for the faked-state attacker."""

import numpy as np
import pytest

from blindsim.apd import load_preset
from blindsim.eve import (EveConfig, EveStats, carrier_components, forge,
                          premature_click_ratio, run_attack)
from blindsim.optics import BenchParams
from blindsim.protocol import AcceptancePolicy, AliceConfig, encoding_angle


@pytest.fixture(scope="module")
def model1():
    return load_preset("model1")


def make_cfg(params, meta, **kw):
    bench = BenchParams(pbs_extinction_db=60.0)
    defaults = dict(bob_prime_bench=bench, bob_prime_detectors=params,
                    p_high=meta["p_high_w"], gap_width=meta["gap_width_s"],
                    wavelength=meta["wavelength_m"],
                    bob_blinding_power=meta["measured_blinding_threshold_w"])
    defaults.update(kw)
    return EveConfig(**defaults)


class TestConfigAndForge:
    def test_validation(self, model1):
        params, meta = model1
        with pytest.raises(ValueError):
            make_cfg(params, meta, style="strobe")
        with pytest.raises(ValueError):
            make_cfg(params, meta, p_high=0.0)

    def test_forge_geometry(self, model1):
        params, meta = model1
        cfg = make_cfg(params, meta)
        for bit, basis in ((0, 0.0), (1, 0.0), (0, 45.0), (1, 45.0)):
            fs = forge((bit, basis), cfg, slot_period=30e-6, gap_start=10e-6)
            assert fs.target.angle == encoding_angle(bit, basis)
            assert fs.orthogonal.angle == (fs.target.angle + 90.0) % 180.0
            # target carries the gap; orthogonal stays at carrier power
            assert fs.target.diagram.power_at(11e-6) == 0.0
            assert fs.target.diagram.power_at(5e-6) == meta["p_high_w"]
            assert fs.orthogonal.diagram.power_at(11e-6) == meta["p_high_w"]

    def test_forge_rejects_deblinding_floor(self, model1):
        # carrier so weak that the wrong-basis mixture would let a
        # detector recover: the forge refuses to build the state
        params, meta = model1
        cfg = make_cfg(params, meta,
                       p_high=meta["measured_blinding_threshold_w"] * 0.5)
        with pytest.raises(ValueError):
            forge((0, 0.0), cfg, slot_period=30e-6, gap_start=10e-6)

    def test_intensity_multiplier_for_passive_bob(self, model1):
        params, meta = model1
        cfg = make_cfg(params, meta, intensity_multiplier=2.0)
        fs = forge((0, 0.0), cfg, slot_period=30e-6, gap_start=10e-6)
        assert fs.target.diagram.power_at(5e-6) == 2 * meta["p_high_w"]

    def test_carrier_components(self, model1):
        params, meta = model1
        cfg = make_cfg(params, meta)
        comps = carrier_components(cfg, 30e-6)
        assert len(comps) == 2
        assert abs(comps[0].angle - comps[1].angle) == 90.0
        assert comps[0].diagram.mean_power() == comps[1].diagram.mean_power()


@pytest.fixture(scope="module")
def small_attack(model1):
    params, meta = model1
    cfg = make_cfg(params, meta)
    alice = AliceConfig(mean_photon_number=0.1,
                        wavelength=meta["wavelength_m"])
    policy = AcceptancePolicy(qubit_bin_width=200e-9,
                              bin_offset=meta["gap_width_s"] + 50e-9)
    return run_attack(alice, 0.0, BenchParams(pbs_extinction_db=60.0),
                      params, policy, cfg, 4000, seed=5,
                      slot_period=30e-6)


class TestAttackSessions:
    def test_forced_clicks_track_gap_probability(self, small_attack, model1):
        _, meta = model1
        _, _, estats = small_attack
        assert estats.eve_detections > 50
        matched = estats.eve_detections - estats.mismatched_basis_slots
        p = estats.forced_clicks / matched
        assert p == pytest.approx(meta["gap_click_prob"], abs=0.1)

    def test_no_cross_basis_forced_clicks(self, small_attack):
        _, _, estats = small_attack
        assert estats.cross_basis_forced_clicks == 0

    def test_forced_click_delay_near_gap_width(self, small_attack, model1):
        _, meta = model1
        _, _, estats = small_attack
        delays = np.array(estats.delays)
        assert len(delays) > 10
        gap = meta["gap_width_s"]
        assert np.all(delays >= gap)
        assert float(np.mean(delays)) <= gap + 0.3e-6

    def test_attack_turn_on_transient(self, small_attack):
        _, _, estats = small_attack
        # the carrier turn-on forces one click per (initially recovered)
        # detector before the first slot
        assert 1 <= estats.transient_clicks <= 2

    def test_determinism(self, model1, small_attack):
        params, meta = model1
        cfg = make_cfg(params, meta)
        alice = AliceConfig(mean_photon_number=0.1,
                            wavelength=meta["wavelength_m"])
        policy = AcceptancePolicy(qubit_bin_width=200e-9,
                                  bin_offset=meta["gap_width_s"] + 50e-9)
        again = run_attack(alice, 0.0, BenchParams(pbs_extinction_db=60.0),
                           params, policy, cfg, 4000, seed=5,
                           slot_period=30e-6)
        assert again[1].to_dict() == small_attack[1].to_dict()
        assert again[2].to_dict() == small_attack[2].to_dict()

    def test_dark_emulation(self, model1):
        params, meta = model1
        cfg = make_cfg(params, meta, emulate_dark_counts=True,
                       dark_emulation_rate=100.0)
        alice = AliceConfig(mean_photon_number=0.1,
                            wavelength=meta["wavelength_m"])
        policy = AcceptancePolicy(qubit_bin_width=200e-9,
                                  bin_offset=meta["gap_width_s"] + 50e-9)
        # full loss: every Eve "detection" is an emulated dark count
        _, _, estats = run_attack(alice, float("inf"),
                                  BenchParams(pbs_extinction_db=60.0), params,
                                  policy, cfg, 3000, seed=6, slot_period=30e-6)
        expect = 100.0 / 0.4 * 30e-6 * 3000
        assert estats.dark_emulation_slots > 0
        assert abs(estats.dark_emulation_slots - expect) <= 4 * expect ** 0.5


class TestPrematureRatio:
    def test_requires_enough_trials(self, model1):
        params, meta = model1
        with pytest.raises(ValueError):
            premature_click_ratio(0.0, meta["p_high_w"], meta["gap_width_s"],
                                  params, meta["wavelength_m"], trials=10,
                                  seed=1)

    def test_ratio_rises_with_floor(self, model1):
        params, meta = model1
        args = (meta["gap_width_s"], params, meta["wavelength_m"])
        r0, c0 = premature_click_ratio(0.0, meta["p_high_w"], *args,
                                       trials=3000, seed=2)
        r1, c1 = premature_click_ratio(0.4e-12, meta["p_high_w"], *args,
                                       trials=3000, seed=3)
        assert c0["main"] > 0 and c1["main"] > 0
        assert r1 > r0

    def test_no_gap_means_no_main_peak(self, model1):
        params, meta = model1
        with pytest.raises(ValueError):
            premature_click_ratio(meta["p_high_w"], meta["p_high_w"],
                                  meta["gap_width_s"], params,
                                  meta["wavelength_m"], trials=1500, seed=4)


def test_eve_stats_ratios():
    s = EveStats(slots=100, eve_detections=50, forced_clicks=40)
    assert s.bob_prime_detection_rate == 0.5
    assert s.forced_click_probability == 0.8
    assert EveStats().forced_click_probability == 0.0
