"""Riemannian shape analysis of closed planar curves under Sobolev metrics."""

from .splines import (
    CLAMPED,
    PERIODIC,
    Curve,
    KnotVector,
    Path,
    QuadratureGrid,
    TangentVector,
    constant_curve,
    fit_least_squares,
    gauss_legendre,
    make_knots,
    quadrature_grid,
)

__version__ = "0.1.0"
