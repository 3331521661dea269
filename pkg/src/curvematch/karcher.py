"""Karcher (Frechet) mean of a curve set by Riemannian descent.

The mean minimizes F(c) = (1/n) sum_j dist(c, c_j)^2.  Each outer iteration
computes the logarithms of all data curves at the current iterate (one
geodesic boundary solve per curve, independently solvable and optionally
threaded), averages them into a descent direction, and walks along the
discrete exponential with an Armijo step rule.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bvp import BvpProblem, ModuloFlags, solve_bvp
from .errors import CurvematchError, InvalidArgumentError, PartialResultError
from .ivp import exp_map
from .metric import MetricParams, curve_grid, tangent_norm
from .splines import Curve, TangentVector

FIXED_STEP = "fixed_step"
LINE_SEARCH = "line_search"


@dataclass(frozen=True)
class MeanOptions:
    step: float = 1.0
    step_cap: float | None = 1.0  # largest move per iteration, in metric units
    tolerance: float = 1e-3  # threshold on ||grad F||_G at the mean
    max_iters: int = 60
    method: str = LINE_SEARCH
    modulo: ModuloFlags = field(default_factory=ModuloFlags)
    # inner geodesic solves use a finer time grid than the BVP defaults:
    # the average of near-cancelling logarithms is sensitive to the
    # per-log velocity bias, which decays fast in nt and t_degree
    nt: int = 14
    t_degree: int = 3
    bvp_grad_tol: float = 1e-7
    bvp_max_iterations: int = 2000
    exp_steps: int | None = None
    init: Curve | None = None
    jobs: int = 1

    def bvp_kwargs(self) -> dict:
        return {
            "nt": self.nt,
            "t_degree": self.t_degree,
            "modulo": self.modulo,
            "grad_tol": self.bvp_grad_tol,
            "max_iterations": self.bvp_max_iterations,
        }


@dataclass(frozen=True)
class MeanResult:
    mean: Curve
    objective: float
    grad_norm: float
    iterations: int
    converged: bool
    per_curve: tuple[tuple[float, TangentVector], ...]


def _solve_logs(
    params: MetricParams, c: Curve, dataset: list[Curve], options: MeanOptions
) -> tuple[list[float], list[TangentVector], list[int]]:
    """Distances and log velocities from c to every dataset curve, in order."""
    kwargs = options.bvp_kwargs()

    def one(cj: Curve):
        problem = BvpProblem(c0=c, c1=cj, params=params, **kwargs)
        result = solve_bvp(problem)
        return result.distance, result.path.initial_velocity()

    failed: list[int] = []
    dists: list[float] = [0.0] * len(dataset)
    vels: list[TangentVector | None] = [None] * len(dataset)
    if options.jobs > 1:
        with ThreadPoolExecutor(max_workers=options.jobs) as pool:
            futures = [pool.submit(one, cj) for cj in dataset]
            for j, fut in enumerate(futures):
                try:
                    dists[j], vels[j] = fut.result()
                except CurvematchError:
                    failed.append(j)
    else:
        for j, cj in enumerate(dataset):
            try:
                dists[j], vels[j] = one(cj)
            except CurvematchError:
                failed.append(j)
    return dists, vels, failed


def karcher_energy(
    params: MetricParams, c: Curve, dataset: list[Curve], options: MeanOptions | None = None
) -> float:
    """Mean squared geodesic distance from c to the dataset."""
    if not dataset:
        raise InvalidArgumentError("dataset must be nonempty")
    options = options or MeanOptions()
    dists, _, failed = _solve_logs(params, c, dataset, options)
    if failed:
        raise PartialResultError(
            f"geodesic solves failed for dataset indices {failed}", failed_indices=failed
        )
    return float(np.mean(np.square(dists)))


def karcher_descent_direction(
    params: MetricParams, c: Curve, dataset: list[Curve], options: MeanOptions | None = None
) -> TangentVector:
    """Average logarithm (1/n) sum_j Log_c(c_j); points toward the data."""
    if not dataset:
        raise InvalidArgumentError("dataset must be nonempty")
    options = options or MeanOptions()
    _, vels, failed = _solve_logs(params, c, dataset, options)
    if failed:
        raise PartialResultError(
            f"geodesic solves failed for dataset indices {failed}", failed_indices=failed
        )
    acc = np.zeros_like(c.controls)
    for v in vels:
        acc = acc + v.controls
    return TangentVector(acc / len(dataset), c.basis)


def _initial_guess(
    params: MetricParams, dataset: list[Curve], options: MeanOptions
) -> Curve:
    """Dataset element with the smallest Karcher energy among the elements."""
    n = len(dataset)
    if n == 1:
        return dataset[0]
    kwargs = options.bvp_kwargs()
    d2 = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            problem = BvpProblem(c0=dataset[i], c1=dataset[j], params=params, **kwargs)
            d2[i, j] = d2[j, i] = solve_bvp(problem).distance ** 2
    return dataset[int(np.argmin(d2.mean(axis=1)))]


def karcher_mean(
    params: MetricParams,
    dataset: list[Curve],
    options: MeanOptions | None = None,
) -> MeanResult:
    """Riemannian descent to the Karcher mean.

    Iterates c <- Exp_c(tau * direction) until the metric norm of the average
    logarithm falls below the tolerance; the objective never increases across
    accepted steps.
    """
    if not dataset:
        raise InvalidArgumentError("dataset must be nonempty")
    options = options or MeanOptions()
    mean = options.init if options.init is not None else _initial_guess(params, dataset, options)
    grid = curve_grid(mean)

    dists, vels, failed = _solve_logs(params, mean, dataset, options)
    if failed:
        raise PartialResultError(
            f"geodesic solves failed for dataset indices {failed}", failed_indices=failed
        )
    objective = float(np.mean(np.square(dists)))
    converged = False
    iterations = 0
    grad_norm = 0.0

    for _ in range(options.max_iters):
        direction = TangentVector(
            sum(v.controls for v in vels) / len(dataset), mean.basis
        )
        grad_norm = tangent_norm(params, mean, direction, grid)
        if grad_norm < options.tolerance:
            converged = True
            break

        tau = options.step
        if options.step_cap is not None and grad_norm > options.step_cap:
            tau = min(tau, options.step_cap / grad_norm)
        accepted = False
        for _ in range(6):
            candidate = exp_map(
                params, mean, tau * direction, steps=options.exp_steps
            ).last
            try:
                cand_dists, cand_vels, cand_failed = _solve_logs(
                    params, candidate, dataset, options
                )
            except CurvematchError:
                cand_failed = list(range(len(dataset)))
            if cand_failed:
                tau *= 0.5
                continue
            cand_obj = float(np.mean(np.square(cand_dists)))
            if options.method == FIXED_STEP or cand_obj <= objective - 1e-4 * tau * grad_norm**2:
                mean, objective = candidate, cand_obj
                dists, vels = cand_dists, cand_vels
                accepted = True
                break
            tau *= 0.5
        iterations += 1
        if not accepted:
            break  # no productive step found; report the best iterate

    per_curve = tuple((float(d), v) for d, v in zip(dists, vels))
    return MeanResult(
        mean=mean,
        objective=objective,
        grad_norm=float(grad_norm),
        iterations=iterations,
        converged=converged,
        per_curve=per_curve,
    )
