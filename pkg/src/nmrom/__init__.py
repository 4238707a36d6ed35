"""Reduced-order models for parameterized Burgers problems.

Full-order solvers, POD, a shallow masked autoencoder, linear and
nonlinear-manifold Galerkin/LSPG ROMs, gappy-POD hyper-reduction with decoder
subnets, error bounds and a flop model.
"""

__version__ = "0.1.0"
