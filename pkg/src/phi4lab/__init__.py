"""Lattice Monte Carlo laboratory for the phi^4 model and its
random-cluster representation.

Subpackage layout:

- ``lattice``       finite regions of Z^d, boundaries, ghost graphs, boundary fields
- ``singlesite``    the single-site measure rho_{g,a} and exact tilted sampling
- ``spin``          phi^4 Gibbs measure, heat-bath and Langevin dynamics
- ``randomcluster`` FK-style edge/absolute-value representation and the
                    Edwards-Sokal coupling in both directions
- ``oracle``        exact small-graph computations (quadrature + enumeration)
- ``events``        geometric percolation event detectors and cluster statistics
- ``experiments``   estimator drivers (magnetisation, LDP scans, surface tension,
                    local uniqueness, spectral-gap bounds)
- ``cli``           batch runner over plain-text run configs
"""

__version__ = "0.1.0"
