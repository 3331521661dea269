"""B-spline bases, curves, paths of curves, fitting, and quadrature grids.

Closed curves are periodic splines on [0, 2*pi] with uniform knots and
controls indexed modulo N (no duplicated wrap-around controls).  Paths of
curves are tensor-product splines, clamped in time on [0, 1] and periodic
in the curve parameter.  Quadrature grids carry Gauss-Legendre nodes per
knot interval together with precomputed collocation values of every basis
function and its first two derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, SingularFitError

TWO_PI = 2.0 * math.pi

PERIODIC = "periodic"
CLAMPED = "clamped"


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on the reference interval [-1, 1]."""
    if n < 1:
        raise InvalidArgumentError("need at least one quadrature point per interval")
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, weights


def default_points_per_interval(degree: int) -> int:
    """Default quadrature order: max(ceil((2*degree+1)/2), 5) points."""
    return max(degree + 1, 5)


@dataclass(frozen=True)
class KnotVector:
    """Knot sequence of a univariate B-spline basis.

    For ``periodic`` kind the knots are the extended uniform sequence
    2*pi*(j - degree)/count for j = 0..count+2*degree, so that `count`
    uniform intervals tile [0, 2*pi] and the basis wraps around by index
    arithmetic.  For ``clamped`` kind the first and last knots carry full
    multiplicity degree+1 and the interior knots are uniform in (0, 1).
    """

    knots: np.ndarray
    degree: int
    kind: str
    count: int  # number of independent basis functions / controls

    def __post_init__(self):
        object.__setattr__(self, "knots", _readonly(np.asarray(self.knots, dtype=float)))

    @property
    def n_basis(self) -> int:
        return self.count

    @property
    def domain(self) -> tuple[float, float]:
        return (0.0, TWO_PI) if self.kind == PERIODIC else (0.0, 1.0)

    @property
    def spacing(self) -> float:
        """Uniform interval width (2*pi/count periodic, 1/(count-degree) clamped)."""
        if self.kind == PERIODIC:
            return TWO_PI / self.count
        return 1.0 / (self.count - self.degree)

    def breakpoints(self) -> np.ndarray:
        """Distinct knot values delimiting the quadrature intervals."""
        if self.kind == PERIODIC:
            return np.arange(self.count + 1) * self.spacing
        return np.linspace(0.0, 1.0, self.count - self.degree + 1)

    def greville(self) -> np.ndarray:
        """Greville abscissae (knot averages), one per basis function."""
        p = self.degree
        if self.kind == PERIODIC:
            # control j's native basis spans knots (j-p..j+1)*h; the average
            # of the p interior knots is (j + (1-p)/2)*h
            offset = (1.0 - p) / 2.0 * self.spacing
            return (np.arange(self.count) * self.spacing + offset) % TWO_PI
        u = self.knots
        return np.array([u[j + 1 : j + p + 1].mean() if p > 0 else u[j] for j in range(self.count)])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def make_knots(count: int, degree: int, kind: str) -> KnotVector:
    """Build a uniform periodic (on [0,2*pi]) or clamped (on [0,1]) knot vector."""
    if degree < 0:
        raise InvalidArgumentError("degree must be nonnegative")
    if count < degree + 1:
        raise InvalidArgumentError(
            f"need at least degree+1={degree + 1} basis functions, got {count}"
        )
    if kind == PERIODIC:
        h = TWO_PI / count
        knots = (np.arange(count + 2 * degree + 1) - degree) * h
    elif kind == CLAMPED:
        interior = count - degree - 1
        body = np.linspace(0.0, 1.0, interior + 2)
        knots = np.concatenate([np.zeros(degree), body, np.ones(degree)])
    else:
        raise InvalidArgumentError(f"unknown knot kind {kind!r}")
    return KnotVector(knots=knots, degree=degree, kind=kind, count=count)


def _ders_basis_funs(span: int, u: float, p: int, order: int, knots: np.ndarray) -> np.ndarray:
    """Nonzero basis functions and derivatives at u (de Boor recursion).

    Returns array of shape (order+1, p+1); row k holds the k-th derivative
    of basis functions span-p..span.  Rows beyond the degree are zero.
    """
    n = min(order, p)
    ndu = np.empty((p + 1, p + 1))
    ndu[0, 0] = 1.0
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    for j in range(1, p + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved
    ders = np.zeros((order + 1, p + 1))
    ders[0, :] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, n + 1):
        ders[k, :] *= fac
        fac *= p - k
    return ders


def _reduce_periodic(theta: float) -> float:
    """Reduce theta into [0, 2*pi) by whole-period index arithmetic."""
    if 0.0 <= theta < TWO_PI:
        return theta
    k = math.floor(theta / TWO_PI)
    r = theta - k * TWO_PI
    while r >= TWO_PI:
        r -= TWO_PI
    while r < 0.0:
        r += TWO_PI
    return r


def _span_periodic(kv: KnotVector, theta: float) -> tuple[int, float]:
    r = _reduce_periodic(theta)
    i = min(int(r / kv.spacing), kv.count - 1)
    return i, r


def _span_clamped(kv: KnotVector, t: float) -> int:
    p, n = kv.degree, kv.count
    if t >= kv.knots[n]:
        return n - 1
    if t <= kv.knots[p]:
        return p
    return int(np.searchsorted(kv.knots, t, side="right")) - 1


def local_basis(kv: KnotVector, u: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Control indices and derivative table of the nonzero basis functions at u.

    Returns (idx, ders) with idx of length degree+1 (control indices, already
    wrapped for periodic bases) and ders of shape (order+1, degree+1).
    """
    p = kv.degree
    if kv.kind == PERIODIC:
        i, r = _span_periodic(kv, u)
        span = i + p  # index into the extended knot sequence
        ders = _ders_basis_funs(span, r, p, order, kv.knots)
        idx = (np.arange(i, i + p + 1)) % kv.count
    else:
        a, b = kv.domain
        if u < a - 1e-12 or u > b + 1e-12:
            raise InvalidArgumentError(f"parameter {u} outside clamped domain [0, 1]")
        span = _span_clamped(kv, u)
        ders = _ders_basis_funs(span, u, p, order, kv.knots)
        idx = np.arange(span - p, span + 1)
    return idx, ders


def basis_row(kv: KnotVector, u: float, order: int) -> np.ndarray:
    """Dense row of all basis function derivatives of one order at u."""
    idx, ders = local_basis(kv, u, order)
    row = np.zeros(kv.n_basis)
    row[idx] = ders[order]
    return row


def collocation(kv: KnotVector, params: np.ndarray, max_order: int = 2) -> np.ndarray:
    """Collocation matrices B[k, i, j] = d^k/du^k C_j(params[i]) for k <= max_order."""
    params = np.atleast_1d(np.asarray(params, dtype=float))
    out = np.zeros((max_order + 1, params.size, kv.n_basis))
    for i, u in enumerate(params):
        idx, ders = local_basis(kv, u, max_order)
        # count >= degree+1 guarantees the wrapped indices are distinct,
        # so assignment (not accumulation) is correct
        for k in range(max_order + 1):
            out[k, i, idx] = ders[k]
    return out


@dataclass(frozen=True)
class Curve:
    """Closed spline curve: N controls in R^d over a periodic basis."""

    controls: np.ndarray  # (N, d)
    basis: KnotVector

    def __post_init__(self):
        ctrl = np.asarray(self.controls, dtype=float)
        if ctrl.ndim != 2:
            raise InvalidArgumentError("curve controls must be an (N, d) array")
        if self.basis.kind != PERIODIC:
            raise InvalidArgumentError("curves require a periodic basis")
        if ctrl.shape[0] != self.basis.count:
            raise InvalidArgumentError(
                f"control count {ctrl.shape[0]} does not match basis count {self.basis.count}"
            )
        object.__setattr__(self, "controls", _readonly(ctrl))

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    @property
    def dim(self) -> int:
        return self.controls.shape[1]

    @property
    def degree(self) -> int:
        return self.basis.degree

    def eval(self, theta, order: int = 0) -> np.ndarray:
        """Point (or order-th derivative) of the curve at parameter theta."""
        if order > self.basis.degree:
            raise InvalidArgumentError(
                f"derivative order {order} exceeds spline degree {self.basis.degree}"
            )
        thetas = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.empty((thetas.size, self.dim))
        for i, u in enumerate(thetas):
            idx, ders = local_basis(self.basis, u, order)
            out[i] = ders[order] @ self.controls[idx]
        return out[0] if np.isscalar(theta) or np.ndim(theta) == 0 else out

    def translated(self, vec) -> "Curve":
        return Curve(self.controls + np.asarray(vec, dtype=float), self.basis)

    def scaled(self, rho: float) -> "Curve":
        return Curve(self.controls * float(rho), self.basis)

    def rotated(self, angle: float) -> "Curve":
        if self.dim != 2:
            from .errors import UnsupportedDimensionError

            raise UnsupportedDimensionError("rotation helper is planar only")
        return Curve(self.controls @ rotation_matrix(angle).T, self.basis)

    def shifted(self, k: int) -> "Curve":
        """Cyclic shift of the control indices (parameter shift by k knots)."""
        return Curve(np.roll(self.controls, -int(k), axis=0), self.basis)

    def with_controls(self, controls) -> "Curve":
        return Curve(controls, self.basis)


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class TangentVector:
    """Deformation field along a curve, expressed in the curve's spline basis."""

    controls: np.ndarray  # (N, d)
    space_basis: KnotVector

    def __post_init__(self):
        ctrl = np.asarray(self.controls, dtype=float)
        if ctrl.ndim != 2 or ctrl.shape[0] != self.space_basis.count:
            raise InvalidArgumentError("tangent controls must match the basis count")
        object.__setattr__(self, "controls", _readonly(ctrl))

    def eval(self, theta, order: int = 0) -> np.ndarray:
        return Curve(self.controls, self.space_basis).eval(theta, order)

    def __add__(self, other: "TangentVector") -> "TangentVector":
        _check_same_basis(self.space_basis, other.space_basis)
        return TangentVector(self.controls + other.controls, self.space_basis)

    def __sub__(self, other: "TangentVector") -> "TangentVector":
        _check_same_basis(self.space_basis, other.space_basis)
        return TangentVector(self.controls - other.controls, self.space_basis)

    def __mul__(self, scalar: float) -> "TangentVector":
        return TangentVector(self.controls * float(scalar), self.space_basis)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentVector":
        return TangentVector(-self.controls, self.space_basis)


def _check_same_basis(a: KnotVector, b: KnotVector) -> None:
    if a.kind != b.kind or a.degree != b.degree or a.count != b.count:
        raise InvalidArgumentError("operands live in different spline bases")


@dataclass(frozen=True)
class Path:
    """Tensor-product spline path of curves: clamped in t, periodic in theta."""

    controls: np.ndarray  # (N_t, N_theta, d)
    time_basis: KnotVector
    space_basis: KnotVector

    def __post_init__(self):
        ctrl = np.asarray(self.controls, dtype=float)
        if ctrl.ndim != 3:
            raise InvalidArgumentError("path controls must be an (N_t, N_theta, d) array")
        if self.time_basis.kind != CLAMPED or self.space_basis.kind != PERIODIC:
            raise InvalidArgumentError("paths are clamped in time and periodic in space")
        if ctrl.shape[0] != self.time_basis.count or ctrl.shape[1] != self.space_basis.count:
            raise InvalidArgumentError("path control grid does not match its bases")
        object.__setattr__(self, "controls", _readonly(ctrl))

    @property
    def nt(self) -> int:
        return self.controls.shape[0]

    @property
    def ntheta(self) -> int:
        return self.controls.shape[1]

    @property
    def dim(self) -> int:
        return self.controls.shape[2]

    def eval(self, t: float, theta: float, dt: int = 0, dtheta: int = 0) -> np.ndarray:
        if dt > self.time_basis.degree:
            raise InvalidArgumentError(
                f"time derivative order {dt} exceeds degree {self.time_basis.degree}"
            )
        if dtheta > self.space_basis.degree:
            raise InvalidArgumentError(
                f"space derivative order {dtheta} exceeds degree {self.space_basis.degree}"
            )
        ti, tders = local_basis(self.time_basis, float(t), dt)
        si, sders = local_basis(self.space_basis, float(theta), dtheta)
        block = self.controls[np.ix_(ti, si)]
        return np.einsum("i,j,ijd->d", tders[dt], sders[dtheta], block)

    def curve_at(self, t: float) -> Curve:
        """Exact time slice: spatial controls are B-spline combinations in t."""
        row = basis_row(self.time_basis, float(t), 0)
        return Curve(np.einsum("i,ijd->jd", row, self.controls), self.space_basis)

    def initial_velocity(self) -> TangentVector:
        """d/dt at t=0, a combination of the first two control rows (clamped basis)."""
        p = self.time_basis.degree
        if p == 0:
            return TangentVector(np.zeros_like(self.controls[0]), self.space_basis)
        span = self.time_basis.knots[p + 1] - self.time_basis.knots[1]
        coeff = p / span
        return TangentVector(coeff * (self.controls[1] - self.controls[0]), self.space_basis)

    def endpoint_curves(self) -> tuple[Curve, Curve]:
        return (
            Curve(self.controls[0], self.space_basis),
            Curve(self.controls[-1], self.space_basis),
        )


@dataclass(frozen=True)
class QuadratureGrid:
    """Gauss-Legendre nodes per knot interval plus collocation values.

    ``basis[k]`` is the (n_nodes, n_basis) matrix of k-th derivatives of all
    basis functions at the nodes, k = 0, 1, 2.
    """

    kv: KnotVector
    nodes: np.ndarray
    weights: np.ndarray
    basis: np.ndarray = field(repr=False)  # (3, n_nodes, n_basis)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(self.nodes))
        object.__setattr__(self, "weights", _readonly(self.weights))
        b = np.asarray(self.basis, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size


def quadrature_grid(kv: KnotVector, points_per_interval: int | None = None) -> QuadratureGrid:
    """Gauss-Legendre rule on each inter-knot interval with collocation values."""
    if points_per_interval is None:
        points_per_interval = default_points_per_interval(kv.degree)
    if points_per_interval < 1:
        raise InvalidArgumentError("points_per_interval must be >= 1")
    ref_nodes, ref_weights = gauss_legendre(points_per_interval)
    breaks = kv.breakpoints()
    nodes = []
    weights = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        nodes.append(mid + half * ref_nodes)
        weights.append(half * ref_weights)
    nodes = np.concatenate(nodes)
    weights = np.concatenate(weights)
    basis = collocation(kv, nodes, max_order=2)
    return QuadratureGrid(kv=kv, nodes=nodes, weights=weights, basis=basis)


def fit_least_squares(
    params: np.ndarray,
    points: np.ndarray,
    count: int,
    degree: int,
    kind: str = PERIODIC,
) -> Curve:
    """Least-squares spline fit of sampled points at given parameters.

    For periodic fits the result is a Curve; clamped fits return the control
    array together with the knot vector since open curves are not part of the
    curve type (see ``fit_controls``).
    """
    if kind != PERIODIC:
        raise InvalidArgumentError("fit_least_squares builds closed curves; use fit_controls")
    controls, kv = fit_controls(params, points, count, degree, kind)
    return Curve(controls, kv)


def fit_controls(
    params: np.ndarray,
    points: np.ndarray,
    count: int,
    degree: int,
    kind: str,
) -> tuple[np.ndarray, KnotVector]:
    """Solve the linear least-squares problem min ||A c - points|| by QR/SVD."""
    params = np.asarray(params, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if params.size != points.shape[0]:
        raise InvalidArgumentError("one parameter per sample point is required")
    if params.size < count:
        raise InvalidArgumentError(
            f"need at least {count} samples to determine {count} controls, got {params.size}"
        )
    kv = make_knots(count, degree, kind)
    design = collocation(kv, params, max_order=0)[0]
    controls, _, rank, _ = np.linalg.lstsq(design, points, rcond=None)
    if rank < count:
        raise SingularFitError(
            f"design matrix rank {rank} < {count}; samples do not determine the spline",
            rank=int(rank),
            needed=count,
        )
    return controls, kv


def constant_curve(point, count: int, degree: int) -> Curve:
    """Curve whose every control equals the given point (degenerate helper)."""
    point = np.asarray(point, dtype=float)
    return Curve(np.tile(point, (count, 1)), make_knots(count, degree, PERIODIC))
