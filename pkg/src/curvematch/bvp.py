"""Geodesic boundary value problem: energy minimization over path controls.

The discretized path energy is minimized over the interior control rows with
the endpoint rows held fixed, using L-BFGS-B with the exact analytic
gradient.  Optionally the end curve is also optimized over translations,
rotations (jointly, via chain-rule gradients), and cyclic parameter shifts
(grid search with one continuous sub-knot refinement).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DegenerateCurveError,
    DegeneratePathError,
    InvalidArgumentError,
    UnsupportedDimensionError,
)
from .metric import (
    EnergyBreakdown,
    MetricParams,
    PathGrids,
    _energy_core,
    curve_grid,
    curve_length,
    path_grids,
)
from .splines import (
    CLAMPED,
    Curve,
    Path,
    TangentVector,
    fit_least_squares,
    make_knots,
    quadrature_grid,
    rotation_matrix,
)


@dataclass(frozen=True)
class ModuloFlags:
    """Which group actions to quotient out when comparing curves."""

    translation: bool = False
    rotation: bool = False
    parameter_shift: bool = False

    @property
    def any(self) -> bool:
        return self.translation or self.rotation or self.parameter_shift


@dataclass(frozen=True)
class GroupTransform:
    """Alignment applied to the end curve: c1 -> R(beta) c1(. - alpha) + lam."""

    alpha: float = 0.0
    beta: float = 0.0
    lam: tuple[float, ...] = (0.0, 0.0)


@dataclass(frozen=True)
class BvpProblem:
    c0: Curve
    c1: Curve
    params: MetricParams
    nt: int = 10
    t_degree: int = 2
    modulo: ModuloFlags = field(default_factory=ModuloFlags)
    grad_tol: float = 1e-6  # max-norm of the interior-control gradient
    step_tol: float = 1e-14  # relative energy decrease per iteration
    max_iterations: int = 2000
    time_points: int | None = None
    space_points: int | None = None
    init: Path | None = None
    seed: int = 0

    def __post_init__(self):
        if self.nt < self.t_degree + 1:
            raise InvalidArgumentError("nt must be at least t_degree + 1")
        _check_curve_pair(self.c0, self.c1)


def _check_curve_pair(c0: Curve, c1: Curve) -> None:
    if (
        c0.basis.count != c1.basis.count
        or c0.basis.degree != c1.basis.degree
        or c0.dim != c1.dim
    ):
        raise InvalidArgumentError("curves must share one spatial spline basis")


@dataclass(frozen=True)
class GeodesicResult:
    path: Path
    energy: EnergyBreakdown
    distance: float
    group: GroupTransform
    iterations: int
    converged: bool


def init_linear_path(c0: Curve, c1: Curve, nt: int = 10, t_degree: int = 2) -> Path:
    """Straight-line path: control rows interpolate c0, c1 at the Greville
    abscissae, which makes the spline exactly linear in t."""
    _check_curve_pair(c0, c1)
    kvt = make_knots(nt, t_degree, CLAMPED)
    gamma = kvt.greville()
    ctrl = (1.0 - gamma)[:, None, None] * c0.controls[None] + gamma[:, None, None] * c1.controls[
        None
    ]
    ctrl[0] = c0.controls
    ctrl[-1] = c1.controls
    return Path(ctrl, kvt, c0.basis)


def procrustes_align(
    moving: np.ndarray, target: np.ndarray, rotation: bool, translation: bool
) -> tuple[float, np.ndarray]:
    """Closed-form (beta, lam) minimizing sum |R(beta) q_j + lam - p_j|^2."""
    d = moving.shape[1]
    beta = 0.0
    lam = np.zeros(d)
    q, p = moving, target
    if translation:
        qbar, pbar = q.mean(axis=0), p.mean(axis=0)
        qc, pc = q - qbar, p - pbar
    else:
        qbar = pbar = np.zeros(d)
        qc, pc = q, p
    if rotation:
        if d != 2:
            raise UnsupportedDimensionError("rotation quotient is planar only")
        cos_term = float(np.sum(pc * qc))
        sin_term = float(np.sum(pc[:, 0] * -qc[:, 1] + pc[:, 1] * qc[:, 0]))
        beta = math.atan2(sin_term, cos_term)
    if translation:
        lam = pbar - qbar @ rotation_matrix(beta).T
    return beta, lam


def _transform_controls(controls: np.ndarray, beta: float, lam: np.ndarray) -> np.ndarray:
    if beta != 0.0:
        controls = controls @ rotation_matrix(beta).T
    return controls + lam


def _shift_refit(c: Curve, alpha: float) -> Curve:
    """Continuous parameter shift c(. + alpha) re-expressed in the same basis."""
    n = c.n_controls
    params = np.linspace(0.0, 2.0 * math.pi, 8 * n, endpoint=False)
    pts = c.eval(params + alpha)
    return fit_least_squares(params, pts, n, c.degree)


def _linear_proxy(params: MetricParams, c0: Curve, c1_controls: np.ndarray, kvs) -> float:
    """Energy of the straight-line path, used to rank group candidates."""
    kvt = make_knots(2, 1, CLAMPED)
    ctrl = np.stack([c0.controls, c1_controls])
    grids = PathGrids(time=quadrature_grid(kvt, 3), space=quadrature_grid(kvs))
    try:
        breakdown, _, _ = _energy_core(params, ctrl, grids, want_grad=False)
    except DegeneratePathError:
        return math.inf
    return breakdown.total


def _search_parameter_shift(problem: BvpProblem) -> tuple[Curve, float]:
    """Grid search over cyclic control shifts plus one sub-knot refinement."""
    c0, c1 = problem.c0, problem.c1
    n = c1.n_controls
    spacing = c1.basis.spacing
    flags = problem.modulo

    def proxy_for(curve: Curve) -> float:
        ctrl = curve.controls
        if flags.rotation or flags.translation:
            beta, lam = procrustes_align(ctrl, c0.controls, flags.rotation, flags.translation)
            ctrl = _transform_controls(ctrl, beta, lam)
        return _linear_proxy(problem.params, c0, ctrl, c1.basis)

    proxies = np.array([proxy_for(c1.shifted(k)) for k in range(n)])
    k_best = int(np.argmin(proxies))
    alpha = k_best * spacing
    best_curve = c1.shifted(k_best)
    best_proxy = proxies[k_best]

    # parabola through the three proxies around the best shift
    em = proxies[(k_best - 1) % n]
    e0 = proxies[k_best]
    ep = proxies[(k_best + 1) % n]
    denom = em - 2.0 * e0 + ep
    if np.isfinite(denom) and denom > 0.0:
        delta = 0.5 * (em - ep) / denom
        if 0.05 < abs(delta) < 1.0:
            cand_alpha = (k_best + delta) * spacing
            cand = _shift_refit(c1, cand_alpha)
            cand_proxy = proxy_for(cand)
            if cand_proxy < best_proxy:
                return cand, cand_alpha
    return best_curve, alpha


def _max_interior_grad(grad_full: np.ndarray) -> float:
    return float(np.abs(grad_full[1:-1]).max()) if grad_full.shape[0] > 2 else 0.0


def solve_bvp(problem: BvpProblem) -> GeodesicResult:
    """Minimize the discretized path energy with fixed (group-aligned) endpoints."""
    try:
        return _solve_bvp_once(problem, perturb=0.0)
    except DegeneratePathError:
        try:
            return _solve_bvp_once(problem, perturb=1e-3)
        except DegeneratePathError as exc:
            raise DegeneratePathError(
                f"degenerate path persisted after perturbed restart: {exc}",
                t=exc.t,
                theta=exc.theta,
            ) from exc


def _solve_bvp_once(problem: BvpProblem, perturb: float) -> GeodesicResult:
    c0 = problem.c0
    params = problem.params
    flags = problem.modulo
    d = c0.dim

    alpha = 0.0
    c1_work = problem.c1
    if flags.parameter_shift:
        c1_work, alpha = _search_parameter_shift(problem)

    beta0, lam0 = 0.0, np.zeros(d)
    if flags.rotation or flags.translation:
        beta0, lam0 = procrustes_align(
            c1_work.controls, c0.controls, flags.rotation, flags.translation
        )

    if problem.init is not None:
        base = problem.init.controls.copy()
        kvt = problem.init.time_basis
        if base.shape[0] != problem.nt:
            raise InvalidArgumentError("init path must have nt control rows")
    else:
        end0 = Curve(_transform_controls(c1_work.controls, beta0, lam0), c1_work.basis)
        lin = init_linear_path(c0, end0, problem.nt, problem.t_degree)
        base = lin.controls.copy()
        kvt = lin.time_basis
    if perturb > 0.0:
        rng = np.random.default_rng(problem.seed + 1)
        scale = perturb * float(np.abs(c0.controls).max() + 1.0)
        base[1:-1] += rng.normal(scale=scale, size=base[1:-1].shape)

    grids = PathGrids(
        time=quadrature_grid(kvt, problem.time_points),
        space=quadrature_grid(c0.basis, problem.space_points),
    )

    nt, ntheta = problem.nt, c0.n_controls
    n_interior = (nt - 2) * ntheta * d
    use_rot = flags.rotation
    use_trans = flags.translation
    q1 = c1_work.controls

    def unpack(x):
        interior = x[:n_interior].reshape(nt - 2, ntheta, d)
        pos = n_interior
        lam = np.zeros(d)
        beta = 0.0
        if use_trans:
            lam = x[pos : pos + d]
            pos += d
        if use_rot:
            beta = x[pos]
        return interior, beta, lam

    def assemble(interior, beta, lam):
        P = np.empty((nt, ntheta, d))
        P[0] = c0.controls
        P[1:-1] = interior
        P[-1] = _transform_controls(q1, beta, lam)
        return P

    def objective(x):
        interior, beta, lam = unpack(x)
        P = assemble(interior, beta, lam)
        breakdown, _, grad = _energy_core(params, P, grids, want_grad=True)
        gx = [grad[1:-1].reshape(-1)]
        if use_trans:
            gx.append(grad[-1].sum(axis=0))
        if use_rot:
            dR = rotation_matrix(beta + 0.5 * math.pi)  # derivative of R(beta)
            gx.append(np.array([float(np.sum(grad[-1] * (q1 @ dR.T)))]))
        return breakdown.total, np.concatenate(gx)

    x0 = [base[1:-1].reshape(-1)]
    if use_trans:
        x0.append(lam0)
    if use_rot:
        x0.append(np.array([beta0]))
    x0 = np.concatenate(x0)

    res = minimize(
        objective,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": problem.max_iterations,
            "ftol": problem.step_tol,
            "gtol": problem.grad_tol,
            "maxls": 60,
        },
    )

    interior, beta, lam = unpack(res.x)
    P = assemble(interior, beta, lam)
    breakdown, _, grad = _energy_core(params, P, grids, want_grad=True)
    gmax = _max_interior_grad(grad)
    converged = gmax <= problem.grad_tol
    path = Path(P, kvt, c0.basis)
    return GeodesicResult(
        path=path,
        energy=breakdown,
        distance=math.sqrt(max(2.0 * breakdown.total, 0.0)),
        group=GroupTransform(alpha=alpha, beta=float(beta), lam=tuple(float(v) for v in lam)),
        iterations=int(res.nit),
        converged=bool(converged),
    )


def distance(c0: Curve, c1: Curve, params: MetricParams, **options) -> float:
    """Geodesic distance sqrt(2 * E_min); symmetric up to solver tolerance."""
    problem = BvpProblem(c0=c0, c1=c1, params=params, **options)
    return solve_bvp(problem).distance


def speed_variation(c: Curve, grid=None) -> float:
    """Coefficient of variation of |c_theta| across quadrature nodes."""
    if grid is None:
        grid = curve_grid(c)
    s = np.sqrt(np.einsum("rd,rd->r", grid.basis[1] @ c.controls, grid.basis[1] @ c.controls))
    return float(s.std() / s.mean())


def reparam_constant_speed(c: Curve, samples: int = 1024, tol: float = 0.02, max_rounds: int = 10) -> Curve:
    """Reparametrize a curve to approximately constant speed.

    Samples the curve densely, inverts the normalized arc-length function,
    and refits the spline at arc-length-uniform parameters; repeats until the
    speed coefficient of variation stops improving or falls below tol.
    """
    if samples < 4 * c.n_controls:
        samples = 4 * c.n_controls
    grid = curve_grid(c)
    best = c
    best_var = speed_variation(c, grid)
    cur = c
    for _ in range(max_rounds):
        if best_var <= tol:
            break
        theta_dense = np.linspace(0.0, 2.0 * math.pi, samples + 1)
        pts = cur.eval(theta_dense)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        sig = np.concatenate([[0.0], np.cumsum(seg)])
        if sig[-1] <= 0.0:
            raise DegenerateCurveError("curve has zero length; cannot reparametrize")
        sig *= 2.0 * math.pi / sig[-1]
        targets = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
        theta_of_s = np.interp(targets, sig, theta_dense)
        new = fit_least_squares(targets, cur.eval(theta_of_s), c.n_controls, c.degree)
        var = speed_variation(new, grid)
        if var < best_var:
            best, best_var = new, var
        cur = new
    return best


def log_map_from_path(path: Path) -> TangentVector:
    """Initial velocity of a geodesic path (derivative of the time spline at 0)."""
    return path.initial_velocity()
