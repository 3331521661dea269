"""Time-discrete geodesic calculus: discrete energy, Exp, and Log maps.

A curve triple (c0, c1, c2) is a discrete geodesic when c1 minimizes

    E2(c0, c1, c2) = G_{c0}(c1 - c0, c1 - c0) + G_{c1}(c2 - c1, c2 - c1)

with the endpoints held fixed; differences are taken control-wise in the
shared spline basis.  The discrete exponential extends (c0, c1) to the c2
solving the first-order stationarity system

    2 G_{c0}(c1 - c0, .) - 2 G_{c1}(c2 - c1, .) + D_{c1} G_.(c2 - c1, c2 - c1) = 0

by a damped Newton iteration.  The logarithm is read off a geodesic boundary
value solve as the initial velocity of the time spline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bvp import BvpProblem, solve_bvp
from .errors import ExpStepError, InvalidArgumentError
from .metric import (
    ELASTIC,
    SCALE_INVARIANT,
    MetricParams,
    curve_grid,
    metric_eval,
    metric_gram,
    tangent_norm,
)
from .splines import Curve, QuadratureGrid, TangentVector


@dataclass(frozen=True)
class DiscreteGeodesic:
    """K+1 curves forming a discrete geodesic under one metric."""

    curves: tuple[Curve, ...]
    params: MetricParams

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))

    @property
    def steps(self) -> int:
        return len(self.curves) - 1

    @property
    def last(self) -> Curve:
        return self.curves[-1]


def _tangent(c: Curve, controls: np.ndarray) -> TangentVector:
    return TangentVector(controls, c.basis)


def discrete_energy(
    params: MetricParams,
    c0: Curve,
    c1: Curve,
    c2: Curve,
    grid: QuadratureGrid | None = None,
) -> float:
    """E2 of a curve triple: two squared metric increments."""
    if grid is None:
        grid = curve_grid(c0)
    w01 = _tangent(c0, c1.controls - c0.controls)
    w12 = _tangent(c1, c2.controls - c1.controls)
    return metric_eval(params, c0, w01, w01, grid) + metric_eval(params, c1, w12, w12, grid)


def metric_variation(
    params: MetricParams,
    c: Curve,
    w_controls: np.ndarray,
    grid: QuadratureGrid,
) -> np.ndarray:
    """Gradient of c -> G_c(w, w) with respect to the curve controls (w fixed).

    Shape (N, d).  This is the metric-variation term of the stationarity
    system, computed through the same quadrature discretization as the
    metric itself.
    """
    b0, b1, b2 = grid.basis[0], grid.basis[1], grid.basis[2]
    wts = grid.weights
    x1 = b1 @ c.controls
    x2 = b2 @ c.controls
    s = np.sqrt(np.einsum("rd,rd->r", x1, x1))
    u = np.einsum("rd,rd->r", x1, x2)
    w1 = b1 @ w_controls

    if params.variant == ELASTIC:
        a, b = params.elastic
        jx1 = np.stack([-x1[:, 1], x1[:, 0]], axis=1)
        jw1 = np.stack([-w1[:, 1], w1[:, 0]], axis=1)
        pn = np.einsum("rd,rd->r", w1, jx1)
        pv = np.einsum("rd,rd->r", w1, x1)
        s3 = s**3
        f = (a * a * pn * pn + b * b * pv * pv) / s3
        df_dx1 = (
            2.0 * ((a * a * pn)[:, None] * -jw1 + (b * b * pv)[:, None] * w1) / s3[:, None]
            - 3.0 * (f / (s * s))[:, None] * x1
        )
        return np.einsum("r,rd,rj->jd", wts, df_dx1, b1)

    w0 = b0 @ w_controls
    w2 = b2 @ w_controls
    s2 = s * s
    s4 = s2 * s2
    v2 = w2 / s2[:, None] - w1 * (u / s4)[:, None]
    t0 = np.einsum("rd,rd->r", w0, w0)
    t1 = np.einsum("rd,rd->r", w1, w1) / s2
    t2 = np.einsum("rd,rd->r", v2, v2)
    if params.variant == SCALE_INVARIANT:
        ell = float(np.dot(wts, s))
        a0, a1, a2 = params.a0 / ell**3, params.a1 / ell, params.a2 * ell
    else:
        a0, a1, a2 = params.a0, params.a1, params.a2
    i_node = a0 * t0 + a1 * t1 + a2 * t2
    v2_w2 = np.einsum("rd,rd->r", v2, w2)
    v2_w1 = np.einsum("rd,rd->r", v2, w1)
    p_s = i_node - 2.0 * a1 * t1 + 2.0 * a2 * (-2.0 * v2_w2 / s2 + 4.0 * v2_w1 * u / s4)
    p_u = -2.0 * a2 * v2_w1 / (s * s2)
    a_x1 = (p_s / s)[:, None] * x1 + p_u[:, None] * x2
    a_x2 = p_u[:, None] * x1
    grad = np.einsum("r,rd,rj->jd", wts, a_x1, b1) + np.einsum("r,rd,rj->jd", wts, a_x2, b2)
    if params.variant == SCALE_INVARIANT:
        s0 = float(np.dot(wts, s * t0))
        s1 = float(np.dot(wts, s * t1))
        s2sum = float(np.dot(wts, s * t2))
        dg_dell = -3.0 * params.a0 * s0 / ell**4 - params.a1 * s1 / ell**2 + params.a2 * s2sum
        dell = np.einsum("r,rd,rj->jd", wts / s, x1, b1)
        grad = grad + dg_dell * dell
    return grad


def stationarity_residual(
    params: MetricParams,
    c0: Curve,
    c1: Curve,
    c2: Curve,
    grid: QuadratureGrid | None = None,
) -> np.ndarray:
    """Residual of the discrete-geodesic system at (c0, c1, c2), shape (N, d)."""
    if grid is None:
        grid = curve_grid(c0)
    n, d = c1.controls.shape
    m0 = metric_gram(params, c0, grid)
    m1 = metric_gram(params, c1, grid)
    u = (c1.controls - c0.controls).reshape(-1)
    w = (c2.controls - c1.controls).reshape(-1)
    lin = 2.0 * (m0 @ u) - 2.0 * (m1 @ w)
    return lin.reshape(n, d) + metric_variation(params, c1, c2.controls - c1.controls, grid)


def discrete_exp_step(
    params: MetricParams,
    c0: Curve,
    c1: Curve,
    grid: QuadratureGrid | None = None,
    tol: float = 1e-9,
    max_iter: int = 50,
    freeze_metric: bool = False,
) -> Curve:
    """Solve the stationarity system for c2 given (c0, c1) by damped Newton.

    ``freeze_metric`` is a test hook: it evaluates both metric terms at c0 and
    drops the variation term, which reduces the step to the flat-space
    reflection c2 = 2 c1 - c0.
    """
    if grid is None:
        grid = curve_grid(c0)
    n, d = c1.controls.shape
    m0 = metric_gram(params, c0, grid)
    m1 = m0 if freeze_metric else metric_gram(params, c1, grid)
    u = (c1.controls - c0.controls).reshape(-1)
    rhs = 2.0 * (m0 @ u)

    def variation(w_flat: np.ndarray) -> np.ndarray:
        if freeze_metric:
            return np.zeros(n * d)
        return metric_variation(params, c1, w_flat.reshape(n, d), grid).reshape(-1)

    def residual(w_flat: np.ndarray) -> np.ndarray:
        return rhs - 2.0 * (m1 @ w_flat) + variation(w_flat)

    def jacobian(w_flat: np.ndarray) -> np.ndarray:
        jac = -2.0 * m1.copy()
        if not freeze_metric:
            # the variation term is an exact quadratic form in w, so the
            # central difference with unit step is its exact derivative
            for k in range(n * d):
                e = np.zeros(n * d)
                e[k] = 1.0
                jac[:, k] += 0.5 * (variation(w_flat + e) - variation(w_flat - e))
        return jac

    w = u.copy()  # flat extrapolation c2 = 2 c1 - c0
    r = residual(w)
    rnorm = float(np.abs(r).max())
    for _ in range(max_iter):
        if rnorm <= tol:
            break
        try:
            step = np.linalg.solve(jacobian(w), -r)
        except np.linalg.LinAlgError as exc:
            raise ExpStepError(f"singular Newton system: {exc}") from exc
        t = 1.0
        r2 = float(r @ r)
        for _ in range(40):
            r_new = residual(w + t * step)
            if float(r_new @ r_new) < r2 * (1.0 - 1e-4 * t) or float(np.abs(r_new).max()) <= tol:
                break
            t *= 0.5
        else:
            raise ExpStepError(
                "line search stalled; the step from c0 to c1 is too large, "
                "use more subdivision steps"
            )
        w = w + t * step
        r = r_new
        rnorm = float(np.abs(r).max())
    if rnorm > tol:
        raise ExpStepError(
            f"Newton did not reach residual {tol:.1e} (got {rnorm:.3e}); "
            "use a smaller step"
        )
    return c1.with_controls(c1.controls + w.reshape(n, d))


def default_step_count(params: MetricParams, c0: Curve, v: TangentVector) -> int:
    """About 10 discrete steps per unit of metric velocity, at least 5."""
    return max(5, int(math.ceil(10.0 * tangent_norm(params, c0, v))))


def exp_map(
    params: MetricParams,
    c0: Curve,
    v: TangentVector,
    steps: int | None = None,
    grid: QuadratureGrid | None = None,
    tol: float = 1e-9,
) -> DiscreteGeodesic:
    """Discrete geodesic shooting: c1 = c0 + v/K, then K-1 extension steps."""
    if steps is None:
        steps = default_step_count(params, c0, v)
    if steps < 1:
        raise InvalidArgumentError("need at least one step")
    if grid is None:
        grid = curve_grid(c0)
    curves = [c0, c0.with_controls(c0.controls + v.controls / steps)]
    for index in range(1, steps):
        try:
            curves.append(
                discrete_exp_step(params, curves[-2], curves[-1], grid=grid, tol=tol)
            )
        except ExpStepError as exc:
            raise ExpStepError(
                f"discrete exponential failed at step {index + 1} of {steps}: {exc}",
                step_index=index,
            ) from exc
    return DiscreteGeodesic(curves=tuple(curves), params=params)


def log_map(
    params: MetricParams,
    c0: Curve,
    c1: Curve,
    **bvp_options,
) -> TangentVector:
    """Riemannian logarithm: initial velocity of the minimizing BVP geodesic."""
    problem = BvpProblem(c0=c0, c1=c1, params=params, **bvp_options)
    result = solve_bvp(problem)
    return result.path.initial_velocity()


def log_map_with_result(params: MetricParams, c0: Curve, c1: Curve, **bvp_options):
    """Logarithm plus the full BVP result (distance, convergence, group)."""
    problem = BvpProblem(c0=c0, c1=c1, params=params, **bvp_options)
    result = solve_bvp(problem)
    return result.path.initial_velocity(), result
