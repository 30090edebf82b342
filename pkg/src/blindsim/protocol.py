"""BB84 polarization session: source, channel, receiver, sifting, statistics.

A session is a fixed grid of qubit slots.  Alice emits a weak coherent pulse
per slot; the channel attenuates; the bench routes polarization components
onto detector simulations; clicks are filtered by the acceptance policy
(qubit time bin, optional deadtime blanking and the detector-ready AND-gate
countermeasure); matched-basis single-click slots form the sifted key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .apd import ClickRecord, DetectorParams, DetectorSim
from .optics import BenchParams, PolarizationComponent, route
from .timeline import H_C, IntensityDiagram


def encoding_angle(bit: int, basis: float) -> float:
    """BB84 polarization angle for a bit in a basis (0 or 45 degrees)."""
    return (basis + 90.0 * bit) % 180.0


@dataclass(frozen=True)
class AliceConfig:
    """Weak-coherent-pulse source settings."""

    mean_photon_number: float = 0.1
    wavelength: float = 820e-9
    pulse_width: float = 1e-9


@dataclass(frozen=True)
class AcceptancePolicy:
    """How Bob turns raw detector clicks into recorded qubit events."""

    qubit_bin_width: float = 2e-9
    out_of_bin_handling: str = "discard"       # "discard" | "adjacent-bin"
    countermeasure_enabled: bool = False
    v_ready_fraction: float | None = None      # None: detector's own setting
    bin_offset: float = 0.0                    # time-sync shift of all bins

    def __post_init__(self):
        if self.qubit_bin_width <= 0:
            raise ValueError("bin width must be positive")
        if self.out_of_bin_handling not in ("discard", "adjacent-bin"):
            raise ValueError("unknown out_of_bin_handling")


@dataclass
class PulseRecord:
    """Everything that happened in one qubit slot."""

    slot_index: int
    alice_bit: int
    alice_basis: float
    mean_photon_number: float
    bob_basis: float
    clicks: list = field(default_factory=list)   # (detector_id, t_in_slot, accepted)
    sifted: bool = False
    error: bool = False


@dataclass
class SessionStats:
    sent: int
    sifted_length: int
    errors: int
    qber: float | None                 # None when no sifted bits exist
    per_detector_rates: dict
    detection_efficiency: float
    wrong_bin_clicks: int
    accepted_clicks: int = 0
    rejected_not_ready: int = 0
    rejected_blanking: int = 0

    def to_dict(self) -> dict:
        return {
            "sent": self.sent,
            "sifted_length": self.sifted_length,
            "errors": self.errors,
            "qber": self.qber,
            "per_detector_rates_hz": self.per_detector_rates,
            "detection_efficiency": self.detection_efficiency,
            "wrong_bin_clicks": self.wrong_bin_clicks,
            "accepted_clicks": self.accepted_clicks,
            "rejected_not_ready": self.rejected_not_ready,
            "rejected_blanking": self.rejected_blanking,
        }


def pulse_component(bit: int, basis: float, mean_photons: float, alice: AliceConfig,
                    slot_period: float, pulse_time: float) -> PolarizationComponent:
    """Alice's slot as a rectangular diagram carrying ``mean_photons``."""
    width = alice.pulse_width
    power = mean_photons * (H_C / alice.wavelength) / width
    if pulse_time > 0:
        starts = (0.0, pulse_time, pulse_time + width)
        powers = (0.0, power, 0.0)
    else:
        starts = (0.0, width)
        powers = (power, 0.0)
    diagram = IntensityDiagram(starts, powers, slot_period, alice.wavelength)
    return PolarizationComponent(encoding_angle(bit, basis), diagram)


class _ClickSink:
    """Collects each detector's clicks with their slot of origin."""

    def __init__(self, n_detectors):
        self.clicks: list[tuple[ClickRecord, int]] = []

    def take_new(self, sims: dict[int, DetectorSim], seen: dict[int, int], slot: int):
        for det, sim in sims.items():
            for c in sim.clicks[seen[det]:]:
                self.clicks.append((c, slot))
            seen[det] = len(sim.clicks)


def accept_clicks(clicks, policy: AcceptancePolicy, slot_period: float,
                  bin_center_in_slot: float, n_slots: int,
                  sims: dict[int, DetectorSim] | None = None,
                  v_ready: dict[int, float] | None = None):
    """Apply the acceptance policy to raw clicks.

    ``clicks`` is a list of (ClickRecord, origin_slot).  Returns
    (accepted: dict slot -> list of (detector_id, t_in_slot)), plus counters
    for wrong-bin clicks and countermeasure rejections.  When the
    countermeasure is enabled, a click is accepted only if every detector's
    overvoltage at click time guarantees the ready threshold, and clicks
    falling inside any detector's deadtime window are rejected.
    """
    if policy.countermeasure_enabled and sims is None:
        raise ValueError("countermeasure requires detector state access")
    accepted: dict[int, list] = {}
    wrong_bin = 0
    rej_ready = 0
    rej_blank = 0
    bw = policy.qubit_bin_width
    # deadtime windows from the accepted-output history of every detector
    click_times = {}
    deadtimes = {}
    if sims is not None:
        for det, sim in sims.items():
            click_times[det] = np.array([c.time for c in sim.clicks])
            deadtimes[det] = sim.params.deadtime
    for rec, origin in clicks:
        t = rec.time
        center0 = bin_center_in_slot + policy.bin_offset
        j = int(round((t - center0) / slot_period))
        in_bin = (0 <= j < n_slots
                  and abs(t - (j * slot_period + center0)) <= bw / 2.0)
        if not in_bin:
            continue
        if j != origin:
            wrong_bin += 1
            if policy.out_of_bin_handling == "discard":
                continue
        if policy.countermeasure_enabled:
            ready = True
            blanked = False
            for det, sim in sims.items():
                if det != rec.detector_id:
                    ct = click_times[det]
                    i = int(np.searchsorted(ct, t, side="right")) - 1
                    if i >= 0 and t - ct[i] < deadtimes[det]:
                        blanked = True
                        break
                    frac = sim.overvoltage_fraction_at(t)
                else:
                    # the click itself quenched the overvoltage; the ready
                    # signal is latched just before the triggering avalanche
                    frac = sim.ready_fraction_before_click(t)
                thr = (v_ready or {}).get(det, sim.params.v_ready_fraction)
                if policy.v_ready_fraction is not None:
                    thr = policy.v_ready_fraction
                if frac < thr:
                    ready = False
                    break
            if blanked:
                rej_blank += 1
                continue
            if not ready:
                rej_ready += 1
                continue
        accepted.setdefault(j, []).append((rec.detector_id, t - j * slot_period))
    return accepted, wrong_bin, rej_ready, rej_blank


def _sift(records: list[PulseRecord], accepted: dict[int, list],
          bench: BenchParams):
    """Decide sifting and errors per slot from its accepted clicks."""
    arm_basis = {0: 0.0, 1: 0.0, 2: 45.0, 3: 45.0}
    bit_of_det = {0: 0, 1: 1, 2: 0, 3: 1}
    for rec in records:
        acc = accepted.get(rec.slot_index, [])
        rec.clicks = [(det, t, True) for det, t in acc]
        if len(acc) != 1:
            continue   # vacuum or double click: discarded
        det, _ = acc[0]
        if bench.basis_choice == "passive":
            rec.bob_basis = arm_basis[det]
        if rec.bob_basis != rec.alice_basis:
            continue
        rec.sifted = True
        rec.error = bit_of_det[det] != rec.alice_bit


def compute_qber(records: list[PulseRecord], duration: float | None = None,
                 n_detectors: int = 2) -> SessionStats:
    """Session statistics over (sifted) pulse records.

    An empty sifted set yields qber=None rather than a silent zero.
    """
    sent = len(records)
    sifted = [r for r in records if r.sifted]
    errors = sum(1 for r in sifted if r.error)
    det_counts = {d: 0 for d in range(n_detectors)}
    accepted_clicks = 0
    detected_slots = 0
    for r in records:
        acc = [c for c in r.clicks if c[2]]
        accepted_clicks += len(acc)
        if acc:
            detected_slots += 1
        for det, _, _ in acc:
            det_counts[det] = det_counts.get(det, 0) + 1
    rates = {d: (n / duration if duration else float(n)) for d, n in det_counts.items()}
    return SessionStats(
        sent=sent,
        sifted_length=len(sifted),
        errors=errors,
        qber=(errors / len(sifted)) if sifted else None,
        per_detector_rates=rates,
        detection_efficiency=detected_slots / sent if sent else 0.0,
        wrong_bin_clicks=0,
        accepted_clicks=accepted_clicks,
    )


def run_session(alice: AliceConfig, channel_loss_db: float, bench: BenchParams,
                detectors: DetectorParams | dict[int, DetectorParams],
                policy: AcceptancePolicy, n_slots: int, seed: int,
                slot_period: float = 10e-6,
                eve_mode: str = "none",
                eve_bench: BenchParams | None = None,
                eve_detectors: DetectorParams | dict | None = None,
                eve_mu: float | None = None) -> tuple[list[PulseRecord], SessionStats]:
    """Run a BB84 session without Eve or with a conventional intercept-resend
    attacker (the faked-state attacker lives in :mod:`blindsim.eve`)."""
    if n_slots <= 0:
        raise ValueError("n_slots must be positive")
    if eve_mode not in ("none", "intercept-resend"):
        raise ValueError("eve_mode must be 'none' or 'intercept-resend'")
    rng = np.random.default_rng(seed)
    det_ids = list(range(bench.n_detectors))
    if isinstance(detectors, DetectorParams):
        det_params = {d: detectors for d in det_ids}
    else:
        det_params = dict(detectors)
    need_record = policy.countermeasure_enabled
    sims = {d: DetectorSim(det_params[d], detector_id=d,
                           rng=np.random.default_rng(rng.integers(2**63)),
                           record_avalanches=need_record)
            for d in det_ids}
    seen = {d: 0 for d in det_ids}
    sink = _ClickSink(len(det_ids))

    eve_sims = None
    if eve_mode == "intercept-resend":
        eve_bench = eve_bench or bench
        ep = eve_detectors if eve_detectors is not None else det_params
        if isinstance(ep, DetectorParams):
            ep = {d: ep for d in range(eve_bench.n_detectors)}
        eve_sims = {d: DetectorSim(ep[d], detector_id=d,
                                   rng=np.random.default_rng(rng.integers(2**63)))
                    for d in range(eve_bench.n_detectors)}
        eve_seen = {d: 0 for d in eve_sims}
        eve_mu = eve_mu if eve_mu is not None else alice.mean_photon_number

    trans = 10.0 ** (-channel_loss_db / 10.0) if math.isfinite(channel_loss_db) else 0.0
    pulse_time = slot_period / 2.0 - alice.pulse_width / 2.0
    bin_center = slot_period / 2.0
    records: list[PulseRecord] = []
    bases = (0.0, 45.0)

    for i in range(n_slots):
        t0 = i * slot_period
        t1 = t0 + slot_period
        bit = int(rng.integers(2))
        basis = bases[int(rng.integers(2))]
        bob_basis = bases[int(rng.integers(2))] if bench.basis_choice == "active" else 0.0
        rec = PulseRecord(slot_index=i, alice_bit=bit, alice_basis=basis,
                          mean_photon_number=alice.mean_photon_number,
                          bob_basis=bob_basis)
        records.append(rec)

        comp_to_bob = None
        if eve_mode == "none":
            if trans > 0:
                comp_to_bob = pulse_component(bit, basis, alice.mean_photon_number * trans,
                                              alice, slot_period, pulse_time)
        else:
            eve_basis = bases[int(rng.integers(2))]
            comp = pulse_component(bit, basis, alice.mean_photon_number * trans,
                                   alice, slot_period, pulse_time)
            routed = route([comp], eve_basis, eve_bench)
            for det, sim in eve_sims.items():
                sim.advance_diagram(routed[det], t0, t1)
            eve_clicks = [(d, c.time) for d, sim in eve_sims.items()
                          for c in sim.clicks[eve_seen[d]:]]
            for d in eve_sims:
                eve_seen[d] = len(eve_sims[d].clicks)
            if eve_clicks:
                det_hit, _ = min(eve_clicks, key=lambda x: x[1])
                eve_bit = {0: 0, 1: 1, 2: 0, 3: 1}[det_hit]
                comp_to_bob = pulse_component(eve_bit, eve_basis, eve_mu,
                                              alice, slot_period, pulse_time)
        if comp_to_bob is not None:
            routed = route([comp_to_bob], bob_basis, bench)
            for det, sim in sims.items():
                sim.advance_diagram(routed[det], t0, t1)
        else:
            for sim in sims.values():
                sim.advance(t1, 0.0)
        sink.take_new(sims, seen, i)

    accepted, wrong_bin, rej_ready, rej_blank = accept_clicks(
        sink.clicks, policy, slot_period, bin_center, n_slots,
        sims=sims if policy.countermeasure_enabled else None)
    _sift(records, accepted, bench)
    stats = compute_qber(records, duration=n_slots * slot_period,
                         n_detectors=bench.n_detectors)
    stats.wrong_bin_clicks = wrong_bin
    stats.rejected_not_ready = rej_ready
    stats.rejected_blanking = rej_blank
    return records, stats


def records_to_csv(records: list[PulseRecord], path) -> None:
    with open(path, "w") as fh:
        fh.write("slot,alice_bit,alice_basis,bob_basis,n_accepted,sifted,error\n")
        for r in records:
            fh.write(f"{r.slot_index},{r.alice_bit},{r.alice_basis:g},"
                     f"{r.bob_basis:g},{len(r.clicks)},{int(r.sifted)},{int(r.error)}\n")
