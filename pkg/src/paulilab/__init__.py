"""Desk-scale numerics for Pauli operators with self-generated magnetic fields.

The package is organised by task:

* :mod:`paulilab.problem`   grids, potentials, configuration, Z-scaling
* :mod:`paulilab.pauli`     the Pauli operator and magnetic-field quantities
* :mod:`paulilab.spectral`  negative spectrum, traces, densities, currents
* :mod:`paulilab.weyl`      semiclassical expressions and the Scott functional
* :mod:`paulilab.field`     Poisson solves, gauge projection, field minimisation
* :mod:`paulilab.tf`        Thomas-Fermi theory
* :mod:`paulilab.manybody`  Slater-determinant upper bound
* :mod:`paulilab.harness`   sweeps, exponent fits, reports, CLI
"""

__version__ = "0.1.0"
