"""Simulation and stability diagnostics for thermally driven compressible flows.

Subpackages
-----------
thermo       constitutive closures (pressure, energy, entropy, transport)
grids        staggered grids for the 1-D column and the periodic 2-D slab
simulator    semi-implicit time integration of the evolutionary system
stationary   stationary-state solvers (static, Kirchhoff pipeline, Newton)
diagnostics  relative/ballistic energy, entropy production, damping functionals
experiment   configuration, orchestration, persistence
cli          command-line front end (validate / run / compare / sweep)
"""

__version__ = "0.1.0"
