"""blindsim: discrete-event simulation of passively quenched single-photon
detectors under bright-light control, and of a BB84 link attacked through
them.

Modules: :mod:`blindsim.timeline` (intensity diagrams, photon sampling),
:mod:`blindsim.apd` (detector physics, calibration, presets),
:mod:`blindsim.optics` (polarization bench), :mod:`blindsim.protocol`
(BB84 sessions), :mod:`blindsim.eve` (faked-state attacker) and
:mod:`blindsim.harness` (experiments and checks).
"""

__version__ = "1.0.0"
