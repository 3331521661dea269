"""Sobolev and elastic metrics on curves, path energies, and their gradients.

The second order metric weights a deformation field h along a curve c by

    G_c(h, k) = integral of a0 <h, k> + a1 <D_s h, D_s k> + a2 <D_s^2 h, D_s^2 k> ds

with D_s = |c_theta|^-1 d/dtheta and ds = |c_theta| dtheta.  The
scale-invariant variant replaces (a0, a1, a2) by (a0/l^3, a1/l, a2*l) with l
the curve length.  The planar elastic family splits D_s h into components
along the unit tangent v and normal n and weights them by b^2 and a^2.

Energies of spline paths are discretized with tensor-product Gauss-Legendre
quadrature; gradients with respect to the path controls are exact derivatives
of the discretized energy (chain rule through the collocation values).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCurveError,
    DegeneratePathError,
    InvalidArgumentError,
    UnsupportedDimensionError,
)
from .splines import Curve, Path, QuadratureGrid, TangentVector, quadrature_grid

CONSTANT = "constant"
SCALE_INVARIANT = "scale_invariant"
ELASTIC = "elastic"

DEGENERACY_REL_TOL = 1e-12  # |c_theta| threshold, relative to the knot spacing


@dataclass(frozen=True)
class MetricParams:
    """Coefficients and variant selector of the metric.

    For the elastic family the stored coefficients are a0=0, a1=b^2, a2=a^2
    so that the energy breakdown identity total = a0*e_l2 + a1*e_h1 + a2*e_h2
    holds across all variants (for elastic, e_h1/e_h2 are the unweighted
    tangential/normal parts).
    """

    a0: float = 1.0
    a1: float = 1.0
    a2: float = 1.0
    variant: str = CONSTANT
    elastic: tuple[float, float] | None = None
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.variant not in (CONSTANT, SCALE_INVARIANT, ELASTIC):
            raise InvalidArgumentError(f"unknown metric variant {self.variant!r}")
        if self.variant == ELASTIC:
            if self.elastic is None:
                raise InvalidArgumentError("elastic variant requires the (a, b) pair")
            return
        if min(self.a0, self.a1, self.a2) < 0:
            raise InvalidArgumentError("metric coefficients must be nonnegative")
        if self.a0 <= 0 or self.a2 <= 0:
            if not self.allow_degenerate:
                raise InvalidArgumentError(
                    "a0 > 0 and a2 > 0 are required; pass allow_degenerate=True "
                    "to use a lower-order metric anyway"
                )
            warnings.warn(
                "a2 = 0 drops to a lower-order metric whose geodesic equation "
                "need not be globally well-posed; results may degrade for "
                "distant curve pairs",
                stacklevel=2,
            )


def sobolev_params(
    a0: float, a1: float, a2: float, variant: str = CONSTANT, allow_degenerate: bool = False
) -> MetricParams:
    return MetricParams(a0=a0, a1=a1, a2=a2, variant=variant, allow_degenerate=allow_degenerate)


def elastic_params(a: float, b: float) -> MetricParams:
    return MetricParams(a0=0.0, a1=b * b, a2=a * a, variant=ELASTIC, elastic=(a, b))


@dataclass(frozen=True)
class EnergyBreakdown:
    """Unweighted L2/H1/H2 parts of an energy and the coefficient-weighted total."""

    e_l2: float
    e_h1: float
    e_h2: float
    total: float

    def scaled_total(self, params: MetricParams) -> float:
        return params.a0 * self.e_l2 + params.a1 * self.e_h1 + params.a2 * self.e_h2


def _rot90(x: np.ndarray) -> np.ndarray:
    """Rotate planar vectors by +pi/2 (last axis)."""
    out = np.empty_like(x)
    out[..., 0] = -x[..., 1]
    out[..., 1] = x[..., 0]
    return out


def _curve_nodes(c: Curve, grid: QuadratureGrid):
    """First/second derivative values, speed, and <c',c''> at the grid nodes."""
    x1 = grid.basis[1] @ c.controls
    x2 = grid.basis[2] @ c.controls
    s = np.sqrt(np.einsum("rd,rd->r", x1, x1))
    tol = DEGENERACY_REL_TOL * grid.kv.spacing
    if s.min() <= tol:
        r = int(np.argmin(s))
        raise DegenerateCurveError(
            f"|c_theta| = {s[r]:.3e} at node theta = {grid.nodes[r]:.6f}",
            node=float(grid.nodes[r]),
        )
    u = np.einsum("rd,rd->r", x1, x2)
    return x1, x2, s, u


def curve_grid(c: Curve, points_per_interval: int | None = None) -> QuadratureGrid:
    return quadrature_grid(c.basis, points_per_interval)


def curve_length(c: Curve, grid: QuadratureGrid | None = None) -> float:
    """Arc length by Gauss-Legendre quadrature of |c_theta|."""
    if grid is None:
        grid = curve_grid(c)
    _, _, s, _ = _curve_nodes(c, grid)
    return float(np.dot(grid.weights, s))


def _variant_weights(params: MetricParams, length: float | None) -> tuple[float, float, float]:
    if params.variant == SCALE_INVARIANT:
        if length is None:
            raise InvalidArgumentError("scale-invariant weights need the curve length")
        return (1.0 / length**3, 1.0 / length, length)
    return (1.0, 1.0, 1.0)


def metric_eval(
    params: MetricParams,
    c: Curve,
    h: TangentVector,
    k: TangentVector,
    grid: QuadratureGrid | None = None,
) -> float:
    """Value of G_c(h, k) by quadrature."""
    if grid is None:
        grid = curve_grid(c)
    if h.space_basis.count != c.basis.count or k.space_basis.count != c.basis.count:
        raise InvalidArgumentError("tangent vectors must share the curve's basis")
    if params.variant == ELASTIC:
        a, b = params.elastic
        return elastic_metric_eval(a, b, c, h, k, grid)
    x1, x2, s, u = _curve_nodes(c, grid)
    h0 = grid.basis[0] @ h.controls
    h1 = grid.basis[1] @ h.controls
    h2 = grid.basis[2] @ h.controls
    k0 = grid.basis[0] @ k.controls
    k1 = grid.basis[1] @ k.controls
    k2 = grid.basis[2] @ k.controls
    s2 = s * s
    dsh = h1 / s[:, None]
    dsk = k1 / s[:, None]
    ddh = h2 / s2[:, None] - h1 * (u / (s2 * s2))[:, None]
    ddk = k2 / s2[:, None] - k1 * (u / (s2 * s2))[:, None]
    w0, w1, w2 = _variant_weights(params, float(np.dot(grid.weights, s)))
    integrand = (
        params.a0 * w0 * np.einsum("rd,rd->r", h0, k0)
        + params.a1 * w1 * np.einsum("rd,rd->r", dsh, dsk)
        + params.a2 * w2 * np.einsum("rd,rd->r", ddh, ddk)
    )
    return float(np.dot(grid.weights, s * integrand))


def elastic_metric_eval(
    a: float,
    b: float,
    c: Curve,
    h: TangentVector,
    k: TangentVector,
    grid: QuadratureGrid | None = None,
) -> float:
    """Planar elastic metric: normal part weighted a^2, tangential part b^2."""
    if c.dim != 2:
        raise UnsupportedDimensionError("elastic metric is defined for planar curves only")
    if grid is None:
        grid = curve_grid(c)
    x1, _, s, _ = _curve_nodes(c, grid)
    h1 = grid.basis[1] @ h.controls
    k1 = grid.basis[1] @ k.controls
    jx1 = _rot90(x1)
    s3 = s**3
    pn = np.einsum("rd,rd->r", h1, jx1) * np.einsum("rd,rd->r", k1, jx1)
    pv = np.einsum("rd,rd->r", h1, x1) * np.einsum("rd,rd->r", k1, x1)
    return float(np.dot(grid.weights, (a * a * pn + b * b * pv) / s3))


def tangent_norm(
    params: MetricParams, c: Curve, v: TangentVector, grid: QuadratureGrid | None = None
) -> float:
    return float(np.sqrt(max(metric_eval(params, c, v, v, grid), 0.0)))


def metric_gram(
    params: MetricParams, c: Curve, grid: QuadratureGrid | None = None
) -> np.ndarray:
    """Gram matrix of G_c over the control coordinates, shape (N*d, N*d).

    Flattening follows controls.reshape(-1), i.e. control index major and
    coordinate minor.  For Sobolev variants the matrix is kron(K, I_d) with a
    scalar kernel K; the elastic variant couples the coordinates.
    """
    if grid is None:
        grid = curve_grid(c)
    x1, x2, s, u = _curve_nodes(c, grid)
    c0 = grid.basis[0]
    c1 = grid.basis[1]
    c2 = grid.basis[2]
    w = grid.weights
    if params.variant == ELASTIC:
        a, b = params.elastic
        jx1 = _rot90(x1)
        # rows of the two projection functionals over flattened controls
        an = np.einsum("rj,rd->rjd", c1, jx1).reshape(len(s), -1)
        av = np.einsum("rj,rd->rjd", c1, x1).reshape(len(s), -1)
        ws3 = w / s**3
        return (a * a) * (an.T * ws3) @ an + (b * b) * (av.T * ws3) @ av
    s2 = s * s
    l0 = c0
    l1 = c1 / s[:, None]
    l2 = c2 / s2[:, None] - c1 * (u / (s2 * s2))[:, None]
    w0, w1, w2 = _variant_weights(params, float(np.dot(w, s)))
    ws = w * s
    kern = (
        params.a0 * w0 * (l0.T * ws) @ l0
        + params.a1 * w1 * (l1.T * ws) @ l1
        + params.a2 * w2 * (l2.T * ws) @ l2
    )
    return np.kron(kern, np.eye(c.dim))


@dataclass(frozen=True)
class PathGrids:
    """Quadrature grids of a path: one in time, one in the curve parameter."""

    time: QuadratureGrid
    space: QuadratureGrid


def path_grids(
    path: Path,
    time_points: int | None = None,
    space_points: int | None = None,
) -> PathGrids:
    return PathGrids(
        time=quadrature_grid(path.time_basis, time_points),
        space=quadrature_grid(path.space_basis, space_points),
    )


def _project_space(csk: np.ndarray, pt: np.ndarray) -> np.ndarray:
    """(Q_s, N_s) collocation times (Q_t, N_s, d) controls -> (Q_t, Q_s, d)."""
    return np.tensordot(pt, csk, axes=(1, 1)).transpose(0, 2, 1)


def _assemble_grad(a: np.ndarray, bt: np.ndarray, cs: np.ndarray) -> np.ndarray:
    """Sum_{q,r} a[q,r,d] bt[q,i] cs[r,j] -> (N_t, N_s, d), via matmuls."""
    out = np.empty((bt.shape[1], cs.shape[1], a.shape[2]))
    for dd in range(a.shape[2]):
        out[..., dd] = bt.T @ a[..., dd] @ cs
    return out


def _path_nodes(P: np.ndarray, grids: PathGrids):
    """Velocity and space-derivative values of a path on the tensor node grid."""
    bt0 = grids.time.basis[0]
    bt1 = grids.time.basis[1]
    cs0 = grids.space.basis[0]
    cs1 = grids.space.basis[1]
    cs2 = grids.space.basis[2]
    # time combinations first: (Q_t, N_theta, d)
    pt0 = np.tensordot(bt0, P, axes=(1, 0))
    pt1 = np.tensordot(bt1, P, axes=(1, 0))
    ct = _project_space(cs0, pt1)
    ct1 = _project_space(cs1, pt1)
    ct2 = _project_space(cs2, pt1)
    x1 = _project_space(cs1, pt0)
    x2 = _project_space(cs2, pt0)
    s = np.sqrt(np.einsum("qrd,qrd->qr", x1, x1))
    tol = DEGENERACY_REL_TOL * grids.space.kv.spacing
    if s.min() <= tol:
        q, r = np.unravel_index(int(np.argmin(s)), s.shape)
        raise DegeneratePathError(
            f"|c_theta| = {s[q, r]:.3e} at (t, theta) = "
            f"({grids.time.nodes[q]:.6f}, {grids.space.nodes[r]:.6f})",
            t=float(grids.time.nodes[q]),
            theta=float(grids.space.nodes[r]),
        )
    u = np.einsum("qrd,qrd->qr", x1, x2)
    return ct, ct1, ct2, x1, x2, s, u


def _breakdown_from_parts(params: MetricParams, e0: float, e1: float, e2: float) -> EnergyBreakdown:
    total = params.a0 * e0 + params.a1 * e1 + params.a2 * e2
    return EnergyBreakdown(e_l2=e0, e_h1=e1, e_h2=e2, total=total)


def _energy_core(params: MetricParams, P: np.ndarray, grids: PathGrids, want_grad: bool):
    """Discretized path energy, per-time metric values, and optional full gradient.

    Returns (breakdown, g_per_time, grad) where g_per_time[q] approximates
    G_{c(t_q)}(c_t, c_t) and grad covers every control (boundary rows
    included); callers slice off the fixed rows.
    """
    wt = grids.time.weights
    ws = grids.space.weights
    ct, ct1, ct2, x1, x2, s, u = _path_nodes(P, grids)
    bt0 = grids.time.basis[0]
    bt1 = grids.time.basis[1]
    cs0 = grids.space.basis[0]
    cs1 = grids.space.basis[1]
    cs2 = grids.space.basis[2]

    if params.variant == ELASTIC:
        a, b = params.elastic
        jx1 = _rot90(x1)
        pn = np.einsum("qrd,qrd->qr", ct1, jx1)
        pv = np.einsum("qrd,qrd->qr", ct1, x1)
        s3 = s**3
        fn = pn * pn / s3
        fv = pv * pv / s3
        # per-time metric values and unweighted parts
        gn = fn @ ws
        gv = fv @ ws
        g_per_time = (a * a) * gn + (b * b) * gv
        e1 = 0.5 * float(np.dot(wt, gv))
        e2 = 0.5 * float(np.dot(wt, gn))
        breakdown = _breakdown_from_parts(params, 0.0, e1, e2)
        if not want_grad:
            return breakdown, g_per_time, None
        wqr = wt[:, None] * ws[None, :]
        coef_n = (a * a) * wqr * pn / s3
        coef_v = (b * b) * wqr * pv / s3
        d_ct1 = 2.0 * (coef_n[..., None] * jx1 + coef_v[..., None] * x1)
        # d/dx1: through pn (J^T ct1 = -J ct1), pv (ct1), and the s^-3 factor
        d_x1 = (
            2.0 * (-coef_n[..., None] * _rot90(ct1) + coef_v[..., None] * ct1)
            - 3.0 * (wqr * ((a * a) * fn + (b * b) * fv) / (s * s))[..., None] * x1
        )
        grad = 0.5 * (
            _assemble_grad(d_ct1, bt1, cs1) + _assemble_grad(d_x1, bt0, cs1)
        )
        return breakdown, g_per_time, grad

    s2 = s * s
    s4 = s2 * s2
    v2 = ct2 / s2[..., None] - ct1 * (u / s4)[..., None]
    t0 = np.einsum("qrd,qrd->qr", ct, ct)
    t1 = np.einsum("qrd,qrd->qr", ct1, ct1) / s2
    t2 = np.einsum("qrd,qrd->qr", v2, v2)

    if params.variant == SCALE_INVARIANT:
        ell = s @ ws  # per-time curve length
        w0q, w1q, w2q = 1.0 / ell**3, 1.0 / ell, ell
    else:
        ones = np.ones(len(wt))
        w0q = w1q = w2q = ones

    p0 = (s * t0) @ ws
    p1 = (s * t1) @ ws
    p2 = (s * t2) @ ws
    e0 = 0.5 * float(np.dot(wt, w0q * p0))
    e1 = 0.5 * float(np.dot(wt, w1q * p1))
    e2 = 0.5 * float(np.dot(wt, w2q * p2))
    breakdown = _breakdown_from_parts(params, e0, e1, e2)
    g_per_time = params.a0 * w0q * p0 + params.a1 * w1q * p1 + params.a2 * w2q * p2
    if not want_grad:
        return breakdown, g_per_time, None

    a0q = params.a0 * w0q
    a1q = params.a1 * w1q
    a2q = params.a2 * w2q
    wqr = wt[:, None] * ws[None, :]
    # adjoints of the node integrand s*(a0 t0 + a1 t1 + a2 t2)
    a_ct = (wqr * s * 2.0 * a0q[:, None])[..., None] * ct
    a_ct1 = (wqr * 2.0 * a1q[:, None] / s)[..., None] * ct1 - (
        wqr * 2.0 * a2q[:, None] * u / (s * s2)
    )[..., None] * v2
    a_ct2 = (wqr * 2.0 * a2q[:, None] / s)[..., None] * v2
    i_node = a0q[:, None] * t0 + a1q[:, None] * t1 + a2q[:, None] * t2
    v2_dot_ct2 = np.einsum("qrd,qrd->qr", v2, ct2)
    v2_dot_ct1 = np.einsum("qrd,qrd->qr", v2, ct1)
    p_s = (
        i_node
        - 2.0 * a1q[:, None] * t1
        + 2.0 * a2q[:, None] * (-2.0 * v2_dot_ct2 / s2 + 4.0 * v2_dot_ct1 * u / s4)
    )
    p_u = -2.0 * a2q[:, None] * v2_dot_ct1 / (s * s2)
    a_x1 = (wqr * p_s / s)[..., None] * x1 + (wqr * p_u)[..., None] * x2
    a_x2 = (wqr * p_u)[..., None] * x1
    grad = 0.5 * (
        _assemble_grad(a_ct, bt1, cs0)
        + _assemble_grad(a_ct1, bt1, cs1)
        + _assemble_grad(a_ct2, bt1, cs2)
        + _assemble_grad(a_x1, bt0, cs1)
        + _assemble_grad(a_x2, bt0, cs2)
    )
    if params.variant == SCALE_INVARIANT:
        # the per-time length ell(t_q) depends on the controls as well
        de_dell = 0.5 * wt * (
            -3.0 * params.a0 * p0 / ell**4 - params.a1 * p1 / ell**2 + params.a2 * p2
        )
        dell = (de_dell[:, None] * ws[None, :] / s)[..., None] * x1
        grad = grad + _assemble_grad(dell, bt0, cs1)
    return breakdown, g_per_time, grad


def path_energy(
    params: MetricParams, path: Path, grids: PathGrids | None = None
) -> EnergyBreakdown:
    """E = 1/2 integral of G_{c(t)}(c_t, c_t) dt via tensor-product quadrature."""
    if grids is None:
        grids = path_grids(path)
    breakdown, _, _ = _energy_core(params, path.controls, grids, want_grad=False)
    return breakdown


def path_energy_gradient(
    params: MetricParams, path: Path, grids: PathGrids | None = None
) -> np.ndarray:
    """Exact gradient of the discretized energy over the interior control rows.

    Shape (N_t - 2, N_theta, d); the fixed boundary rows are excluded.
    """
    if grids is None:
        grids = path_grids(path)
    _, _, grad = _energy_core(params, path.controls, grids, want_grad=True)
    return grad[1:-1]


def path_energy_with_full_gradient(
    params: MetricParams, path: Path, grids: PathGrids | None = None
) -> tuple[EnergyBreakdown, np.ndarray]:
    """Energy and gradient over all control rows, boundary included."""
    if grids is None:
        grids = path_grids(path)
    breakdown, _, grad = _energy_core(params, path.controls, grids, want_grad=True)
    return breakdown, grad


def path_length(params: MetricParams, path: Path, grids: PathGrids | None = None) -> float:
    """L = integral of sqrt(G_{c(t)}(c_t, c_t)) dt by quadrature in t."""
    if grids is None:
        grids = path_grids(path)
    _, g_per_time, _ = _energy_core(params, path.controls, grids, want_grad=False)
    return float(np.dot(grids.time.weights, np.sqrt(np.maximum(g_per_time, 0.0))))
