"""Piecewise-constant optical intensity diagrams and photon-arrival sampling.

An intensity diagram is the control signal of the whole simulator: a list of
(start_time, power) segments tiling [0, total_duration).  Diagrams are
immutable; when a detector is driven longer than ``total_duration`` the
diagram repeats periodically.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# Planck constant times vacuum speed of light, J*m.
H_C = 1.98644586e-25


def photon_rate(power_w: float, wavelength_m: float) -> float:
    """Photon flux in 1/s for a given optical power at the given wavelength."""
    return power_w * wavelength_m / H_C


@dataclass(frozen=True)
class IntensityDiagram:
    """Optical power vs. time as ordered, non-overlapping constant segments.

    ``segment_starts[0]`` must be 0 and segments tile [0, total_duration)
    exactly; evaluation at any t in that interval returns one power value.
    """

    segment_starts: tuple[float, ...]
    segment_powers: tuple[float, ...]
    total_duration: float
    wavelength: float

    def __post_init__(self):
        starts = np.asarray(self.segment_starts, dtype=float)
        powers = np.asarray(self.segment_powers, dtype=float)
        if starts.size == 0 or starts.size != powers.size:
            raise ValueError("segments must be non-empty and consistent")
        if starts[0] != 0.0:
            raise ValueError("first segment must start at t=0")
        if np.any(np.diff(starts) <= 0):
            raise ValueError("segment starts must be strictly increasing")
        if starts[-1] >= self.total_duration:
            raise ValueError("segments must not extend past total_duration")
        if np.any(powers < 0):
            raise ValueError("segment powers must be non-negative")
        if self.total_duration <= 0 or self.wavelength <= 0:
            raise ValueError("total_duration and wavelength must be positive")

    @property
    def starts(self) -> np.ndarray:
        return np.asarray(self.segment_starts, dtype=float)

    @property
    def powers(self) -> np.ndarray:
        return np.asarray(self.segment_powers, dtype=float)

    @property
    def durations(self) -> np.ndarray:
        edges = np.append(self.starts, self.total_duration)
        return np.diff(edges)

    def power_at(self, t: float) -> float:
        """Power at time t; periodic for t outside [0, total_duration)."""
        t = float(t) % self.total_duration
        i = int(np.searchsorted(self.starts, t, side="right")) - 1
        return float(self.powers[i])

    def segments_between(self, t0: float, t1: float):
        """Yield (start, end, power) covering [t0, t1), tiling periodically."""
        if t1 <= t0:
            return
        period = self.total_duration
        starts = self.starts
        powers = self.powers
        edges = np.append(starts, period)
        k = math.floor(t0 / period)
        phase = t0 - k * period
        if phase >= period:  # guard against divmod rounding at a period edge
            k += 1
            phase = 0.0
        i = int(np.searchsorted(starts, phase, side="right")) - 1
        t = t0
        while t < t1:
            seg_end = k * period + edges[i + 1]
            if seg_end > t:
                end = min(seg_end, t1)
                yield t, end, float(powers[i])
                t = end
            i += 1
            if i == len(starts):
                i = 0
                k += 1

    def mean_power(self) -> float:
        return float(np.sum(self.powers * self.durations) / self.total_duration)

    def to_dict(self) -> dict:
        return {
            "total_duration_s": self.total_duration,
            "wavelength_m": self.wavelength,
            "segments": [[s, p] for s, p in zip(self.segment_starts, self.segment_powers)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityDiagram":
        segs = d["segments"]
        return cls(
            segment_starts=tuple(float(s[0]) for s in segs),
            segment_powers=tuple(float(s[1]) for s in segs),
            total_duration=float(d["total_duration_s"]),
            wavelength=float(d["wavelength_m"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "IntensityDiagram":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _merge_adjacent(starts, powers):
    """Drop zero-length bookkeeping and merge equal-power neighbours."""
    out_s, out_p = [starts[0]], [powers[0]]
    for s, p in zip(starts[1:], powers[1:]):
        if p == out_p[-1]:
            continue
        out_s.append(s)
        out_p.append(p)
    return tuple(out_s), tuple(out_p)


def constant_diagram(power: float, total: float, wavelength: float) -> IntensityDiagram:
    return IntensityDiagram((0.0,), (float(power),), total, wavelength)


def build_gap_diagram(p_high: float, p_low: float, gap_width: float, lead: float,
                      total: float, wavelength: float) -> IntensityDiagram:
    """Constant p_high with a single rectangular gap at power p_low.

    The gap occupies [lead, lead + gap_width); the diagram covers [0, total).
    """
    if p_high < 0 or p_low < 0:
        raise ValueError("powers must be non-negative")
    if p_high <= p_low:
        if p_high == p_low:
            return constant_diagram(p_high, total, wavelength)
        raise ValueError("p_high must be >= p_low")
    if gap_width <= 0:
        raise ValueError("gap_width must be positive")
    if lead < 0 or lead + gap_width >= total:
        raise ValueError("gap must lie strictly inside [0, total)")
    if lead == 0:
        starts = (0.0, gap_width)
        powers = (p_low, p_high)
    else:
        starts = (0.0, lead, lead + gap_width)
        powers = (p_high, p_low, p_high)
    return IntensityDiagram(starts, powers, total, wavelength)


def build_ab_diagram(p_blind: float, p_plus: float, pulse_a_width: float,
                     gap_width: float, pulse_b_width: float, p_gap: float,
                     total: float, wavelength: float,
                     lead: float | None = None) -> IntensityDiagram:
    """Blinding baseline with a bright pulse A opening the gap and a bright
    pulse B closing it.

    Pulse A discharges the detector at a defined moment so the recovery
    always starts at the gap start; pulse B delivers the first photons after
    the gap within a very short time.  Setting ``pulse_a_width`` or
    ``pulse_b_width`` to 0 removes that pulse.
    """
    if p_plus < p_blind:
        raise ValueError("p_plus must be >= p_blind")
    if p_gap >= p_blind:
        raise ValueError("gap power must be below the blinding baseline")
    if gap_width <= 0:
        raise ValueError("gap_width must be positive")
    if lead is None:
        lead = total / 4.0
    tail_start = lead + pulse_a_width + gap_width + pulse_b_width
    if lead <= 0 or tail_start >= total:
        raise ValueError("diagram does not fit in [0, total)")
    starts = [0.0]
    powers = [p_blind]
    t = lead
    if pulse_a_width > 0:
        starts.append(t)
        powers.append(p_plus)
        t += pulse_a_width
    starts.append(t)
    powers.append(p_gap)
    t += gap_width
    if pulse_b_width > 0:
        starts.append(t)
        powers.append(p_plus)
        t += pulse_b_width
    starts.append(t)
    powers.append(p_blind)
    starts, powers = _merge_adjacent(starts, powers)
    return IntensityDiagram(starts, powers, total, wavelength)


def scale(diagram: IntensityDiagram, factor: float) -> IntensityDiagram:
    """Multiply every segment power by ``factor`` (structure unchanged)."""
    if factor < 0:
        raise ValueError("factor must be non-negative")
    return IntensityDiagram(
        diagram.segment_starts,
        tuple(p * factor for p in diagram.segment_powers),
        diagram.total_duration,
        diagram.wavelength,
    )


def mix(a: IntensityDiagram, b: IntensityDiagram, wa: float, wb: float) -> IntensityDiagram:
    """Pointwise weighted sum of two diagrams (incoherent power addition)."""
    if a.total_duration != b.total_duration or a.wavelength != b.wavelength:
        raise ValueError("diagrams must share total_duration and wavelength")
    starts = np.union1d(a.starts, b.starts)
    powers = tuple(wa * a.power_at(s) + wb * b.power_at(s) for s in starts)
    starts, powers = _merge_adjacent(tuple(float(s) for s in starts), powers)
    return IntensityDiagram(starts, powers, a.total_duration, a.wavelength)


@dataclass(frozen=True)
class PhotonEventStream:
    """Stochastic realization of a diagram as sorted photon arrival times."""

    arrival_times: np.ndarray
    source_seed: int = field(default=0)

    def __len__(self):
        return len(self.arrival_times)


def sample_photons(diagram: IntensityDiagram, seed: int,
                   duration: float | None = None) -> PhotonEventStream:
    """Draw an inhomogeneous Poisson realization with rate P(t)*lambda/(h*c).

    Exact per-segment exponential inter-arrival generation (no thinning
    loss); deterministic for a fixed (diagram, seed).
    """
    if duration is None:
        duration = diagram.total_duration
    rng = np.random.default_rng(seed)
    times = []
    for t0, t1, power in diagram.segments_between(0.0, duration):
        rate = photon_rate(power, diagram.wavelength)
        if rate <= 0.0:
            continue
        t = t0
        # draw in chunks sized to the expected count
        while t < t1:
            n = max(16, int((t1 - t) * rate * 1.2) + 4)
            gaps = rng.exponential(1.0 / rate, size=n)
            arr = t + np.cumsum(gaps)
            inside = arr[arr < t1]
            times.append(inside)
            if len(inside) < n:
                break
            t = arr[-1]
    if times:
        out = np.concatenate(times)
    else:
        out = np.empty(0)
    return PhotonEventStream(arrival_times=out, source_seed=seed)
