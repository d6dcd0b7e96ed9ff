"""Electron-phonon quantum kinetics toolkit.

Subpackages cover the physical model and its standing assumptions, energy
surface geometry, the collision kernel and resolvent functions, a kinetic
Monte Carlo solver for the linear Boltzmann equation with a Dyson-series
cross-check, Wigner transforms, an exact truncated-Fock-space oracle, and
the pairing/recollision combinatorics with exhaustive lemma checks.
"""

__version__ = "0.1.0"

# Shell tolerance shared by the kernel sampler and the Boltzmann chain
# validation (single config constant by design).
SHELL_TOLERANCE = 1e-3
