"""Simulation of a cavity-enhanced photon-pair source entangled in OAM and polarization.

Modules: ``qstate`` (states over named degrees of freedom), ``cavity``
(Gouy-shifted resonances), ``spdc`` (frequency comb and time correlations),
``optics`` (pipeline elements and postselection), ``measure`` (counts,
fidelities, tomography, linewidth fit) and ``cli``.
"""
from . import cavity, measure, optics, qstate, spdc

__version__ = "0.1.0"
__all__ = ["cavity", "measure", "optics", "qstate", "spdc"]
