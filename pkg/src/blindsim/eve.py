"""The faked-state attacker.

Eve blocks the line, measures every slot with a replica of Bob's receiver,
and keeps Bob's detectors blinded with a constant carrier: equal power on
two orthogonal polarization components, so every basis choice at Bob sees
the same constant intensity.  On each detection she superimposes a faked
state: the target-bit component gets a gap (optionally framed by bright A/B
pulses) while the orthogonal component stays bright, so only the intended
detector recovers and clicks -- and only when Bob measures in Eve's basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .apd import DetectorParams, DetectorSim
from .optics import BenchParams, PolarizationComponent, route
from .protocol import (AcceptancePolicy, AliceConfig, PulseRecord, SessionStats,
                       _sift, accept_clicks, compute_qber, encoding_angle,
                       pulse_component)
from .timeline import (IntensityDiagram, build_ab_diagram, build_gap_diagram,
                       constant_diagram, mix, photon_rate)


@dataclass(frozen=True)
class FakedState:
    """A pair of orthogonal polarization components forming one faked state."""

    target: PolarizationComponent
    orthogonal: PolarizationComponent
    gap_start: float
    gap_width: float
    style: str = "gap-only"            # "gap-only" | "ab-pulse"


@dataclass(frozen=True)
class EveConfig:
    """Attack settings, including Eve's replica receiver Bob'."""

    bob_prime_bench: BenchParams
    bob_prime_detectors: DetectorParams
    p_high: float                       # W carrier power per component
    gap_width: float = 2e-6
    wavelength: float = 820e-9
    alignment_error_deg: float = 0.0
    intensity_multiplier: float = 1.0   # passive-basis doubling, loss make-up
    style: str = "gap-only"
    # ab-pulse style settings
    p_plus: float = 0.0
    pulse_a_width: float = 50e-9
    pulse_b_width: float = 200e-9
    p_gap: float = 0.0
    # dark-count emulation: target apparent dark rate at Bob
    emulate_dark_counts: bool = False
    dark_emulation_rate: float = 0.0
    # measured blinding threshold of Bob's detectors, used to validate that
    # the wrong-basis mixture keeps both detectors blinded
    bob_blinding_power: float = 0.0
    blinding_margin: float = 1.0

    def __post_init__(self):
        if self.style not in ("gap-only", "ab-pulse"):
            raise ValueError("unknown faked-state style")
        if self.p_high <= 0 or self.gap_width <= 0:
            raise ValueError("p_high and gap_width must be positive")


@dataclass
class EveStats:
    """Attack-side bookkeeping reported alongside the session statistics."""

    slots: int = 0
    eve_detections: int = 0
    forced_clicks: int = 0
    transient_clicks: int = 0
    dark_emulation_slots: int = 0
    cross_basis_forced_clicks: int = 0
    mismatched_basis_accepted: int = 0
    mismatched_basis_slots: int = 0
    delays: list = field(default_factory=list)

    @property
    def bob_prime_detection_rate(self) -> float:
        return self.eve_detections / self.slots if self.slots else 0.0

    @property
    def forced_click_probability(self) -> float:
        return self.forced_clicks / self.eve_detections if self.eve_detections else 0.0

    def to_dict(self) -> dict:
        d = {
            "slots": self.slots,
            "eve_detections": self.eve_detections,
            "forced_clicks": self.forced_clicks,
            "forced_click_probability": self.forced_click_probability,
            "bob_prime_detection_rate": self.bob_prime_detection_rate,
            "transient_clicks": self.transient_clicks,
            "dark_emulation_slots": self.dark_emulation_slots,
            "cross_basis_forced_clicks": self.cross_basis_forced_clicks,
            "mismatched_basis_accepted": self.mismatched_basis_accepted,
            "mismatched_basis_slots": self.mismatched_basis_slots,
            "mean_delay_s": float(np.mean(self.delays)) if self.delays else None,
        }
        return d


def measure(sims: dict[int, DetectorSim], bench: BenchParams,
            component: PolarizationComponent | None, eve_basis: float,
            t0: float, t1: float) -> tuple[int, float] | None:
    """Run one slot through Bob' and return Eve's (bit, basis) or None.

    Advances the replica detectors over [t0, t1); the earliest click in the
    slot decides the outcome.
    """
    before = {d: len(s.clicks) for d, s in sims.items()}
    if component is not None:
        routed = route([component], eve_basis, bench)
        for det, sim in sims.items():
            sim.advance_diagram(routed[det], t0, t1)
    else:
        for sim in sims.values():
            sim.advance(t1, 0.0)
    hits = [(c.time, d) for d, s in sims.items() for c in s.clicks[before[d]:]]
    if not hits:
        return None
    t_click, det = min(hits)
    bit = {0: 0, 1: 1, 2: 0, 3: 1}[det]
    basis = eve_basis if bench.basis_choice == "active" else (0.0 if det < 2 else 45.0)
    return bit, basis, t_click


def forge(outcome: tuple[int, float], cfg: EveConfig, slot_period: float,
          gap_start: float) -> FakedState:
    """Build the faked state for Eve's (bit, basis) detection outcome.

    The target component carries the control gap; the orthogonal component
    stays at carrier power so the wrong detector, and both detectors under
    the wrong basis choice, remain blinded.
    """
    bit, basis = outcome
    m = cfg.intensity_multiplier
    p_high = cfg.p_high * m
    theta = (encoding_angle(bit, basis) + cfg.alignment_error_deg) % 180.0
    theta_orth = (theta + 90.0) % 180.0
    if cfg.style == "ab-pulse":
        target_diag = build_ab_diagram(
            p_high, cfg.p_plus * m, cfg.pulse_a_width, cfg.gap_width,
            cfg.pulse_b_width, cfg.p_gap * m, slot_period, cfg.wavelength,
            lead=gap_start)
        floor = cfg.p_gap * m
    else:
        target_diag = build_gap_diagram(
            p_high, 0.0, cfg.gap_width, gap_start, slot_period, cfg.wavelength)
        floor = 0.0
    orth_diag = constant_diagram(p_high, slot_period, cfg.wavelength)
    # wrong-basis mixture must never de-blind either detector
    wrong_basis_floor = 0.5 * (floor + p_high)
    if cfg.bob_blinding_power > 0 and wrong_basis_floor < (
            cfg.blinding_margin * cfg.bob_blinding_power):
        raise ValueError(
            f"wrong-basis gap floor {wrong_basis_floor:.3g} W would de-blind "
            f"a detector (threshold {cfg.bob_blinding_power:.3g} W)")
    return FakedState(
        target=PolarizationComponent(theta, target_diag),
        orthogonal=PolarizationComponent(theta_orth, orth_diag),
        gap_start=gap_start,
        gap_width=cfg.gap_width,
        style=cfg.style,
    )


def carrier_components(cfg: EveConfig, slot_period: float) -> list[PolarizationComponent]:
    p = cfg.p_high * cfg.intensity_multiplier
    d = constant_diagram(p, slot_period, cfg.wavelength)
    return [PolarizationComponent(0.0, d), PolarizationComponent(90.0, d)]


def run_attack(alice: AliceConfig, channel_loss_db: float, bench: BenchParams,
               detectors: DetectorParams | dict[int, DetectorParams],
               policy: AcceptancePolicy, cfg: EveConfig, n_slots: int, seed: int,
               slot_period: float = 10e-6,
               carrier_lead: float = 50e-6,
               main_peak_window: float = 100e-9,
               ) -> tuple[list[PulseRecord], SessionStats, EveStats]:
    """Full faked-state intercept-resend attack session.

    Eve sits right after Alice (``channel_loss_db`` is the Alice-to-Eve
    loss); her classical processing and the line to Bob are taken as
    delay-free apart from the control gap itself, which is the dominant
    delay component and is reported per forced click.
    """
    rng = np.random.default_rng(seed)
    det_ids = list(range(bench.n_detectors))
    if isinstance(detectors, DetectorParams):
        det_params = {d: detectors for d in det_ids}
    else:
        det_params = dict(detectors)
    need_record = policy.countermeasure_enabled
    sims = {d: DetectorSim(det_params[d], detector_id=d,
                           rng=np.random.default_rng(rng.integers(2**63)),
                           start_time=-carrier_lead,
                           record_avalanches=need_record)
            for d in det_ids}
    eve_sims = {d: DetectorSim(cfg.bob_prime_detectors, detector_id=d,
                               rng=np.random.default_rng(rng.integers(2**63)),
                               start_time=-carrier_lead)
                for d in range(cfg.bob_prime_bench.n_detectors)}

    # attack start: carrier switches on, each Bob detector fires once
    carrier = carrier_components(cfg, carrier_lead)
    routed_carrier = route(carrier, 0.0, bench)
    for det, sim in sims.items():
        sim.advance_diagram(routed_carrier[det], -carrier_lead, 0.0)
    for sim in eve_sims.values():
        sim.advance(0.0, 0.0)
    stats_e = EveStats()
    stats_e.transient_clicks = sum(len(s.clicks) for s in sims.values())

    trans = 10.0 ** (-channel_loss_db / 10.0) if math.isfinite(channel_loss_db) else 0.0
    pulse_time = slot_period / 2.0 - alice.pulse_width / 2.0
    bases = (0.0, 45.0)
    records: list[PulseRecord] = []
    seen = {d: len(sims[d].clicks) for d in det_ids}
    raw_clicks: list = []
    slot_meta = []
    d_send = 0.0
    if cfg.emulate_dark_counts and cfg.dark_emulation_rate > 0:
        # each random faked state clicks with ~0.4 probability at Bob
        d_send = cfg.dark_emulation_rate / 0.4

    for i in range(n_slots):
        t0 = i * slot_period
        t1 = t0 + slot_period
        bit = int(rng.integers(2))
        basis = bases[int(rng.integers(2))]
        bob_basis = bases[int(rng.integers(2))] if bench.basis_choice == "active" else 0.0
        eve_basis = bases[int(rng.integers(2))]
        rec = PulseRecord(slot_index=i, alice_bit=bit, alice_basis=basis,
                          mean_photon_number=alice.mean_photon_number,
                          bob_basis=bob_basis)
        records.append(rec)

        comp = None
        if trans > 0:
            comp = pulse_component(bit, basis, alice.mean_photon_number * trans,
                                   alice, slot_period, pulse_time)
        got = measure(eve_sims, cfg.bob_prime_bench, comp, eve_basis, t0, t1)
        dark_emulated = False
        if got is None and d_send > 0 and rng.random() < d_send * slot_period:
            got = (int(rng.integers(2)), bases[int(rng.integers(2))],
                   t0 + pulse_time + rng.random() * slot_period / 4.0)
            dark_emulated = True

        if got is not None:
            e_bit, e_basis, t_click = got
            stats_e.eve_detections += 1
            if dark_emulated:
                stats_e.dark_emulation_slots += 1
            gap_start = t_click - t0
            # keep the whole gap and the main response window inside the slot
            gap_start = min(gap_start,
                            slot_period - cfg.gap_width - 4 * main_peak_window
                            - cfg.pulse_a_width - cfg.pulse_b_width)
            fs = forge((e_bit, e_basis), cfg, slot_period, gap_start)
            components = [fs.target, fs.orthogonal]
            slot_meta.append((i, e_bit, e_basis, t0 + gap_start, dark_emulated))
        else:
            components = carrier_components(cfg, slot_period)
            slot_meta.append(None)

        routed = route(components, bob_basis, bench)
        for det, sim in sims.items():
            sim.advance_diagram(routed[det], t0, t1)
        for det, sim in sims.items():
            for c in sim.clicks[seen[det]:]:
                raw_clicks.append((c, i))
            seen[det] = len(sim.clicks)

    stats_e.slots = n_slots

    # classify Bob's clicks against Eve's control gaps
    bit_of_det = {0: 0, 1: 1, 2: 0, 3: 1}
    by_slot: dict[int, list] = {}
    for c, i in raw_clicks:
        by_slot.setdefault(i, []).append(c)
    for meta, rec in zip(slot_meta, records):
        if meta is None:
            continue
        i, e_bit, e_basis, gap_t0, dark_emulated = meta
        gap_t1 = gap_t0 + cfg.gap_width
        clicks = by_slot.get(i, [])
        for c in clicks:
            c.premature = gap_t0 < c.time < gap_t1
        hit = [c for c in clicks if gap_t0 < c.time]
        if hit:
            stats_e.forced_clicks += 1
            main = [c for c in hit
                    if gap_t1 <= c.time <= gap_t1 + main_peak_window]
            if main:
                stats_e.delays.append(main[0].time - (gap_t0 - 0.0))
        if rec.bob_basis == e_basis and not dark_emulated:
            stats_e.cross_basis_forced_clicks += sum(
                1 for c in clicks if bit_of_det[c.detector_id] != e_bit)

    accepted, wrong_bin, rej_ready, rej_blank = accept_clicks(
        raw_clicks, policy, slot_period, slot_period / 2.0, n_slots,
        sims=sims if policy.countermeasure_enabled else None)
    _sift(records, accepted, bench)
    stats = compute_qber(records, duration=n_slots * slot_period,
                         n_detectors=bench.n_detectors)
    stats.wrong_bin_clicks = wrong_bin
    stats.rejected_not_ready = rej_ready
    stats.rejected_blanking = rej_blank

    for meta, rec in zip(slot_meta, records):
        if meta is not None and rec.bob_basis != meta[2]:
            stats_e.mismatched_basis_slots += 1
            if any(c[2] for c in rec.clicks):
                stats_e.mismatched_basis_accepted += 1
    return records, stats, stats_e


def premature_click_ratio(p_low: float, p_high: float, gap_width: float,
                          detector: DetectorParams, wavelength: float,
                          trials: int, seed: int,
                          main_peak_window: float = 100e-9,
                          lead: float | None = None) -> tuple[float, dict]:
    """Ratio of premature (in-gap) to main-peak click probability.

    Drives one detector with a repeated gap diagram and classifies every
    click as premature (inside the gap), main peak (within the window after
    the gap end) or delayed.  Raises ValueError if no main-peak clicks
    occur, since the ratio is then undefined.
    """
    if trials < 1000:
        raise ValueError("need at least 1000 trials")
    from .apd import simulate  # local import to avoid cycle at module load

    if lead is None:
        lead = max(12.0 * detector.tau_recharge, 4.0 * gap_width)
    period = lead + gap_width + lead
    diagram = build_gap_diagram(p_high, p_low, gap_width, lead, period, wavelength) \
        if p_high > p_low else constant_diagram(p_high, period, wavelength)
    clicks = simulate(detector, diagram, trials * period, seed=seed)
    premature = 0
    main = 0
    delayed = 0
    for c in clicks:
        if c.time < period:       # skip the turn-on transient trial
            continue
        phase = c.time % period
        if lead < phase < lead + gap_width:
            premature += 1
            c.premature = True
        elif lead + gap_width <= phase <= lead + gap_width + main_peak_window:
            main += 1
        else:
            delayed += 1
    counts = {"premature": premature, "main": main, "delayed": delayed,
              "trials": trials - 1}
    if main == 0:
        raise ValueError(f"no main-peak clicks; ratio undefined ({counts})")
    return premature / main, counts
