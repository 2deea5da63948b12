"""Distributed variational eigensolver toolkit.

Places Ansatz copies across a cluster of small QPUs, rewrites non-local gates
into entanglement-assisted form, schedules the result per QPU, and runs the
whole loop in statevector simulation.
"""

__version__ = "0.1.0"
