"""Unit tests for the BB84 session layer."""

import math

import pytest

from blindsim.apd import ClickRecord, load_preset
from blindsim.optics import BenchParams
from blindsim.protocol import (AcceptancePolicy, AliceConfig, PulseRecord,
                               accept_clicks, compute_qber, encoding_angle,
                               pulse_component, records_to_csv, run_session)
from blindsim.timeline import H_C


@pytest.fixture(scope="module")
def model1():
    return load_preset("model1")


class TestEncoding:
    def test_angle_table(self):
        assert encoding_angle(0, 0.0) == 0.0
        assert encoding_angle(1, 0.0) == 90.0
        assert encoding_angle(0, 45.0) == 45.0
        assert encoding_angle(1, 45.0) == 135.0

    def test_pulse_energy_matches_mean_photon_number(self):
        alice = AliceConfig(mean_photon_number=0.1, wavelength=820e-9)
        comp = pulse_component(0, 0.0, 0.1, alice, slot_period=10e-6,
                               pulse_time=5e-6)
        energy = comp.diagram.mean_power() * comp.diagram.total_duration
        assert energy == pytest.approx(0.1 * H_C / 820e-9)
        assert comp.angle == 0.0


class TestPolicy:
    def test_validation(self):
        with pytest.raises(ValueError):
            AcceptancePolicy(qubit_bin_width=0.0)
        with pytest.raises(ValueError):
            AcceptancePolicy(out_of_bin_handling="drop-all")

    def test_in_bin_accept_and_out_of_bin_discard(self):
        policy = AcceptancePolicy(qubit_bin_width=2e-9)
        slot, center = 10e-6, 5e-6
        clicks = [(ClickRecord(time=3 * slot + center, detector_id=0), 3),
                  (ClickRecord(time=4 * slot + center + 5e-9, detector_id=1), 4)]
        accepted, wrong, _, _ = accept_clicks(clicks, policy, slot, center, 10)
        assert list(accepted) == [3]
        assert accepted[3][0][0] == 0
        assert wrong == 0

    def test_adjacent_bin_click_counted(self):
        # a click drifting into the next slot's bin is a wrong-bin count
        policy = AcceptancePolicy(qubit_bin_width=2e-9,
                                  out_of_bin_handling="adjacent-bin")
        slot, center = 10e-6, 5e-6
        clicks = [(ClickRecord(time=4 * slot + center, detector_id=0), 3)]
        accepted, wrong, _, _ = accept_clicks(clicks, policy, slot, center, 10)
        assert wrong == 1
        assert list(accepted) == [4]
        policy_d = AcceptancePolicy(qubit_bin_width=2e-9)
        accepted, wrong, _, _ = accept_clicks(clicks, policy_d, slot, center, 10)
        assert wrong == 1 and not accepted

    def test_bin_offset_shifts_window(self):
        policy = AcceptancePolicy(qubit_bin_width=2e-9, bin_offset=2e-6)
        slot, center = 10e-6, 5e-6
        late = [(ClickRecord(time=2 * slot + center + 2e-6, detector_id=0), 2)]
        on_time = [(ClickRecord(time=2 * slot + center, detector_id=0), 2)]
        acc_late, _, _, _ = accept_clicks(late, policy, slot, center, 5)
        acc_on, _, _, _ = accept_clicks(on_time, policy, slot, center, 5)
        assert list(acc_late) == [2]
        assert not acc_on

    def test_countermeasure_requires_state(self):
        policy = AcceptancePolicy(countermeasure_enabled=True)
        with pytest.raises(ValueError):
            accept_clicks([], policy, 10e-6, 5e-6, 1, sims=None)


class TestStats:
    def test_empty_sifted_set_gives_none(self):
        recs = [PulseRecord(slot_index=0, alice_bit=0, alice_basis=0.0,
                            mean_photon_number=0.1, bob_basis=0.0)]
        stats = compute_qber(recs)
        assert stats.qber is None
        assert stats.sifted_length == 0

    def test_all_correct_zero_qber(self):
        recs = []
        for i in range(50):
            r = PulseRecord(slot_index=i, alice_bit=0, alice_basis=0.0,
                            mean_photon_number=0.1, bob_basis=0.0)
            r.sifted, r.error = True, False
            r.clicks = [(0, 5e-6, True)]
            recs.append(r)
        stats = compute_qber(recs)
        assert stats.qber == 0.0
        assert stats.sifted_length == 50
        assert stats.detection_efficiency == 1.0

    def test_quarter_flipped(self):
        recs = []
        for i in range(100):
            r = PulseRecord(slot_index=i, alice_bit=0, alice_basis=0.0,
                            mean_photon_number=0.1, bob_basis=0.0)
            r.sifted = True
            r.error = (i % 4 == 0)
            recs.append(r)
        assert compute_qber(recs).qber == pytest.approx(0.25)


class TestSessions:
    def test_validation(self, model1):
        params, _ = model1
        alice = AliceConfig()
        with pytest.raises(ValueError):
            run_session(alice, 0.0, BenchParams(), params,
                        AcceptancePolicy(), 0, seed=1)
        with pytest.raises(ValueError):
            run_session(alice, 0.0, BenchParams(), params,
                        AcceptancePolicy(), 10, seed=1, eve_mode="blinding")

    def test_baseline_session(self, model1):
        params, _ = model1
        alice = AliceConfig(mean_photon_number=0.1)
        bench = BenchParams(pbs_extinction_db=60.0)
        policy = AcceptancePolicy(qubit_bin_width=200e-9)
        recs, stats = run_session(alice, 0.0, bench, params, policy, 4000,
                                  seed=2, slot_period=30e-6)
        assert stats.sent == 4000
        assert 0.02 <= stats.detection_efficiency <= 0.08
        # sifting requires a matched basis and exactly one accepted click
        for r in recs:
            if r.sifted:
                assert r.bob_basis == r.alice_basis
                assert len(r.clicks) == 1
        assert stats.qber is not None and stats.qber < 0.01

    def test_determinism(self, model1):
        params, _ = model1
        alice = AliceConfig()
        bench = BenchParams(pbs_extinction_db=60.0)
        policy = AcceptancePolicy(qubit_bin_width=200e-9)
        a = run_session(alice, 0.0, bench, params, policy, 500, seed=7,
                        slot_period=30e-6)[1]
        b = run_session(alice, 0.0, bench, params, policy, 500, seed=7,
                        slot_period=30e-6)[1]
        assert a.to_dict() == b.to_dict()

    def test_infinite_loss_only_dark(self, model1):
        params, _ = model1
        alice = AliceConfig()
        bench = BenchParams(pbs_extinction_db=60.0)
        policy = AcceptancePolicy(qubit_bin_width=200e-9)
        _, stats = run_session(alice, math.inf, bench, params, policy, 3000,
                               seed=3, slot_period=30e-6)
        # dark clicks land in the 200 ns bin at ~2e-5 per slot per detector
        assert stats.accepted_clicks <= 5

    def test_countermeasure_keeps_quiescent_acceptance(self, model1):
        params, _ = model1
        alice = AliceConfig()
        bench = BenchParams(pbs_extinction_db=60.0)
        policy = AcceptancePolicy(qubit_bin_width=200e-9)
        cm = AcceptancePolicy(qubit_bin_width=200e-9,
                              countermeasure_enabled=True)
        _, s0 = run_session(alice, 0.0, bench, params, policy, 4000, seed=5,
                            slot_period=30e-6)
        _, s1 = run_session(alice, 0.0, bench, params, cm, 4000, seed=5,
                            slot_period=30e-6)
        assert s1.accepted_clicks >= 0.9 * s0.accepted_clicks

    def test_intercept_resend_raises_qber(self, model1):
        params, _ = model1
        alice = AliceConfig(mean_photon_number=1.0)
        bench = BenchParams(pbs_extinction_db=60.0)
        policy = AcceptancePolicy(qubit_bin_width=200e-9)
        _, stats = run_session(alice, 0.0, bench, params, policy, 8000,
                               seed=6, slot_period=30e-6,
                               eve_mode="intercept-resend", eve_mu=0.15)
        assert stats.sifted_length > 50
        assert 0.15 <= stats.qber <= 0.35

    def test_records_csv_schema(self, tmp_path, model1):
        params, _ = model1
        recs, _ = run_session(AliceConfig(), 0.0,
                              BenchParams(pbs_extinction_db=60.0), params,
                              AcceptancePolicy(qubit_bin_width=200e-9), 100,
                              seed=8, slot_period=30e-6)
        path = tmp_path / "session.csv"
        records_to_csv(recs, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == ("slot,alice_bit,alice_basis,bob_basis,"
                            "n_accepted,sifted,error")
        assert len(lines) == 101
