"""Bob's polarization bench: basis modulator plus polarizing beamsplitter.

Everything here is incoherent power bookkeeping: a polarization component is
an intensity diagram tagged with an angle, and the bench maps components to
per-detector diagrams through cos^2/sin^2 splitting with a finite extinction
leak.  Detector numbering: D0/D1 measure in the selected basis for an active
bench; a passive bench adds a 50/50 splitter in front of two PBS arms, with
D0/D1 in the 0-degree arm and D2/D3 in the 45-degree arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import timeline
from .timeline import IntensityDiagram


@dataclass(frozen=True)
class PolarizationComponent:
    """One incoherent polarization component of the light entering Bob.

    Angle convention: 0 degrees is the vertical axis, which an ideal PBS
    sends entirely to D0.
    """

    angle: float          # degrees, in [0, 180)
    diagram: IntensityDiagram

    def __post_init__(self):
        if not 0.0 <= self.angle < 180.0:
            raise ValueError("angle must be in [0, 180) degrees")


@dataclass(frozen=True)
class BenchParams:
    """Optical configuration of a receiver bench."""

    pbs_extinction_db: float = 30.0
    insertion_loss_db: float = 0.0
    n_detectors: int = 2
    basis_choice: str = "active"       # "active" | "passive"

    def __post_init__(self):
        if self.pbs_extinction_db <= 0:
            raise ValueError("extinction must be > 0 dB")
        if self.insertion_loss_db < 0:
            raise ValueError("insertion loss must be >= 0 dB")
        if self.basis_choice not in ("active", "passive"):
            raise ValueError("basis_choice must be 'active' or 'passive'")
        if (self.basis_choice == "active") != (self.n_detectors == 2):
            raise ValueError("active bench has 2 detectors, passive has 4")

    @property
    def leak_fraction(self) -> float:
        """Fraction of a fully-polarized input leaking to the wrong PBS port."""
        g = 10.0 ** (-self.pbs_extinction_db / 10.0)
        return g / (1.0 + g)

    @property
    def transmission(self) -> float:
        return 10.0 ** (-self.insertion_loss_db / 10.0)


def _pbs_fractions(angle_deg: float, leak: float) -> tuple[float, float]:
    """Power fractions (to D0, to D1) for a component at ``angle_deg``
    measured in the analysis basis."""
    th = math.radians(angle_deg)
    c2 = math.cos(th) ** 2
    s2 = 1.0 - c2
    return (1.0 - leak) * c2 + leak * s2, (1.0 - leak) * s2 + leak * c2


def route(components: list[PolarizationComponent], bob_basis: float,
          bench: BenchParams) -> dict[int, IntensityDiagram]:
    """Split incoming components onto the bench's detectors.

    The basis modulator rotates every component by ``-bob_basis`` (0 or 45
    degrees); the PBS then splits by cos^2/sin^2 with the extinction leak,
    and components add incoherently.  Returns a diagram per detector id.
    """
    if not components:
        raise ValueError("at least one component required")
    ref = components[0].diagram
    for c in components[1:]:
        if (c.diagram.total_duration != ref.total_duration
                or c.diagram.wavelength != ref.wavelength):
            raise ValueError("component diagrams must share duration and wavelength")
    leak = bench.leak_fraction
    trans = bench.transmission

    def pbs_pair(basis_deg: float, weight: float) -> dict[int, IntensityDiagram]:
        zero = timeline.constant_diagram(0.0, ref.total_duration, ref.wavelength)
        d0, d1 = zero, zero
        for comp in components:
            f0, f1 = _pbs_fractions(comp.angle - basis_deg, leak)
            w = weight * trans
            d0 = timeline.mix(d0, comp.diagram, 1.0, w * f0)
            d1 = timeline.mix(d1, comp.diagram, 1.0, w * f1)
        return d0, d1

    if bench.basis_choice == "active":
        d0, d1 = pbs_pair(bob_basis, 1.0)
        return {0: d0, 1: d1}
    # passive: ideal 50/50 split feeding a 0-degree arm and a 45-degree arm
    d0, d1 = pbs_pair(0.0, 0.5)
    d2, d3 = pbs_pair(45.0, 0.5)
    return {0: d0, 1: d1, 2: d2, 3: d3}


def effective_extinction(bench: BenchParams, eve_alignment_error_deg: float) -> float:
    """Combined extinction ratio r_e (dB) between Bob's two detectors in the
    target basis, folding PBS leakage and Eve's polarization misalignment."""
    if eve_alignment_error_deg < 0:
        raise ValueError("alignment error must be >= 0")
    leak = bench.leak_fraction + math.sin(math.radians(eve_alignment_error_deg)) ** 2
    if leak <= 0:
        return math.inf
    return -10.0 * math.log10(leak)
