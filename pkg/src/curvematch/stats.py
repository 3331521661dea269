"""Shape statistics: tangent PCA, sampling, distance matrices, MDS, clustering.

PCA lives in the tangent space at a mean curve and uses the metric inner
product there; the kernel (Gram) trick keeps the eigenproblem n-dimensional.
Classical MDS double-centers the squared distance matrix; single linkage is
the plain agglomerative loop with a deterministic smallest-index tie-break.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bvp import BvpProblem, ModuloFlags, solve_bvp
from .errors import (
    CurvematchError,
    ExpStepError,
    InvalidArgumentError,
    PartialResultError,
)
from .ivp import exp_map
from .metric import (
    CONSTANT,
    MetricParams,
    PathGrids,
    _energy_core,
    curve_grid,
    metric_gram,
    sobolev_params,
)
from .splines import CLAMPED, Curve, TangentVector, make_knots, quadrature_grid

EIGENVALUE_REL_CUTOFF = 1e-12


@dataclass(frozen=True)
class PcaModel:
    """Tangent-space principal components at a mean curve.

    Eigenvalues are nonincreasing and strictly positive after truncation;
    directions are orthonormal for the metric at the mean; ``explained``
    holds cumulative fractions of the total variance (trace of the centered
    Gram matrix); scores are the per-datum coordinates.
    """

    mean: Curve
    eigenvalues: np.ndarray
    directions: tuple[TangentVector, ...]
    explained: np.ndarray
    scores: np.ndarray
    total_variance: float


def tangent_pca(
    params: MetricParams,
    mean: Curve,
    velocities: list[TangentVector],
    divisor: str = "n",
) -> PcaModel:
    """Metric PCA of log velocities via the centered Gram eigenproblem."""
    if not velocities:
        raise InvalidArgumentError("need at least one velocity")
    for v in velocities:
        if v.space_basis.count != mean.basis.count:
            raise InvalidArgumentError("velocities must share the mean's basis")
    if divisor not in ("n", "n-1"):
        raise InvalidArgumentError("divisor must be 'n' or 'n-1'")
    n = len(velocities)
    div = float(n if divisor == "n" else max(n - 1, 1))
    vbar = sum(v.controls for v in velocities) / n
    x = np.stack([(v.controls - vbar).reshape(-1) for v in velocities])  # (n, N*d)
    grid = curve_grid(mean)
    gram_metric = metric_gram(params, mean, grid)
    kmat = (x @ gram_metric @ x.T) / div
    kmat = 0.5 * (kmat + kmat.T)
    evals, evecs = np.linalg.eigh(kmat)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    total = float(np.trace(kmat))
    # floor relative to the leading eigenvalue, plus an absolute floor at the
    # square of roundoff in the uncentered velocity norms, which kills spectra
    # that are pure cancellation noise (e.g. all velocities equal)
    uncentered = np.stack([v.controls.reshape(-1) for v in velocities])
    msq = float(np.einsum("ij,jk,ik->", uncentered, gram_metric, uncentered)) / n
    cutoff = max(EIGENVALUE_REL_CUTOFF * max(float(evals[0]), 0.0), 1e-24 * msq)
    keep = [k for k, lam in enumerate(evals) if lam > cutoff]
    directions = []
    scores = np.zeros((n, len(keep)))
    kept_vals = []
    for out_k, k in enumerate(keep):
        lam = float(evals[k])
        kept_vals.append(lam)
        coeff = evecs[:, k] / math.sqrt(div * lam)
        u = (coeff[:, None] * x).sum(axis=0).reshape(mean.controls.shape)
        directions.append(TangentVector(u, mean.basis))
        scores[:, out_k] = math.sqrt(div * lam) * evecs[:, k]
    kept_vals = np.asarray(kept_vals)
    explained = np.cumsum(kept_vals) / total if total > 0 else np.ones(len(kept_vals))
    return PcaModel(
        mean=mean,
        eigenvalues=kept_vals,
        directions=tuple(directions),
        explained=explained,
        scores=scores,
        total_variance=total,
    )


def principal_geodesic(
    params: MetricParams,
    model: PcaModel,
    component: int,
    stddevs: list[float],
    exp_steps: int | None = None,
) -> list[Curve]:
    """Curves along the geodesic through the mean in one principal direction,
    at the requested multiples of the component's standard deviation."""
    if component >= len(model.eigenvalues):
        raise InvalidArgumentError(
            f"component {component} out of range ({len(model.eigenvalues)} available)"
        )
    sigma = math.sqrt(float(model.eigenvalues[component]))
    direction = model.directions[component]
    out: list[Curve] = []
    for i, s in enumerate(stddevs):
        if s == 0.0:
            out.append(model.mean)
            continue
        try:
            out.append(exp_map(params, model.mean, (s * sigma) * direction, steps=exp_steps).last)
        except ExpStepError as exc:
            err = PartialResultError(
                f"exponential failed at stddev {s} (index {i}): {exc}", failed_indices=[i]
            )
            err.partial = out
            raise err from exc
    return out


def sample_velocity_coefficients(
    model: PcaModel, count: int, seed: int
) -> np.ndarray:
    """Gaussian coefficients z_k ~ N(0, eigenvalue_k), shape (count, n_components)."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, len(model.eigenvalues)))
    return z * np.sqrt(model.eigenvalues)[None, :]


def sample_gaussian(
    params: MetricParams,
    model: PcaModel,
    count: int,
    seed: int = 0,
    exp_steps: int | None = None,
) -> list[Curve]:
    """Random shapes: normal coefficients in the principal basis mapped out
    through the exponential; deterministic for a fixed seed."""
    coeffs = sample_velocity_coefficients(model, count, seed)
    out: list[Curve] = []
    for i in range(count):
        vhat = np.zeros_like(model.mean.controls)
        for k, direction in enumerate(model.directions):
            vhat = vhat + coeffs[i, k] * direction.controls
        v = TangentVector(vhat, model.mean.basis)
        if not np.any(vhat):
            out.append(model.mean)
            continue
        try:
            out.append(exp_map(params, model.mean, v, steps=exp_steps).last)
        except ExpStepError as exc:
            err = PartialResultError(
                f"exponential failed for sample {i}: {exc}", failed_indices=[i]
            )
            err.partial = out
            raise err from exc
    return out


@dataclass(frozen=True)
class DistanceMatrixResult:
    matrix: np.ndarray
    labels: tuple[str, ...]
    n_solves: int
    failures: tuple[tuple[int, int, str], ...] = ()

    @property
    def ok(self) -> bool:
        return not self.failures


def distance_matrix(
    params: MetricParams,
    curves: list[Curve],
    labels: list[str] | None = None,
    jobs: int = 1,
    **bvp_options,
) -> DistanceMatrixResult:
    """All pairwise geodesic distances; one solve per unordered pair."""
    n = len(curves)
    if n < 2:
        raise InvalidArgumentError("need at least two curves")
    if labels is None:
        labels = [str(i) for i in range(n)]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    mat = np.zeros((n, n))
    failures: list[tuple[int, int, str]] = []

    def one(pair):
        i, j = pair
        problem = BvpProblem(c0=curves[i], c1=curves[j], params=params, **bvp_options)
        return solve_bvp(problem).distance

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda pr: _safe(one, pr), pairs))
    else:
        results = [_safe(one, pr) for pr in pairs]
    for (i, j), value in zip(pairs, results):
        if isinstance(value, str):
            failures.append((i, j, value))
            mat[i, j] = mat[j, i] = math.nan
        else:
            mat[i, j] = mat[j, i] = value
    return DistanceMatrixResult(
        matrix=mat, labels=tuple(labels), n_solves=len(pairs), failures=tuple(failures)
    )


def _safe(fn, arg):
    try:
        return fn(arg)
    except CurvematchError as exc:
        return f"{type(exc).__name__}: {exc}"


def count_triangle_violations(mat: np.ndarray, slack: float = 0.0) -> int:
    """Number of (i, j, k) triples violating d_ij <= d_ik + d_kj + slack."""
    n = mat.shape[0]
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            if np.any(mat[i, j] > mat[i, :] + mat[:, j] + slack):
                bad = np.nonzero(mat[i, j] > mat[i, :] + mat[:, j] + slack)[0]
                count += len([k for k in bad if k != i and k != j])
    return count


@dataclass(frozen=True)
class MdsResult:
    coordinates: np.ndarray  # (n, dim)
    eigenvalues: np.ndarray  # full spectrum, descending
    negative_mass: float  # |negative eigenvalues| / total absolute mass


def _check_distance_matrix(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise InvalidArgumentError("distance matrix must be square")
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise InvalidArgumentError("distance matrix must be symmetric")
    if np.any(np.diag(mat) != 0.0):
        raise InvalidArgumentError("distance matrix must have a zero diagonal")
    if np.any(mat < 0.0):
        raise InvalidArgumentError("distances must be nonnegative")
    return mat


def classical_mds(mat: np.ndarray, dim: int) -> MdsResult:
    """Torgerson MDS: eigendecomposition of the double-centered squared matrix."""
    mat = _check_distance_matrix(mat)
    n = mat.shape[0]
    if dim < 1:
        raise InvalidArgumentError("dim must be positive")
    j = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * j @ (mat**2) @ j
    b = 0.5 * (b + b.T)
    evals, evecs = np.linalg.eigh(b)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    positive = evals > max(evals[0], 0.0) * 1e-12
    n_pos = int(np.count_nonzero(positive))
    used = min(dim, n_pos)
    if used < dim:
        warnings.warn(
            f"only {n_pos} positive eigenvalues; returning a {used}-dimensional embedding",
            stacklevel=2,
        )
    coords = evecs[:, :used] * np.sqrt(evals[:used])[None, :]
    total_abs = float(np.sum(np.abs(evals)))
    neg_mass = float(np.sum(np.abs(evals[evals < 0.0])) / total_abs) if total_abs > 0 else 0.0
    return MdsResult(coordinates=coords, eigenvalues=evals, negative_mass=neg_mass)


@dataclass(frozen=True)
class Dendrogram:
    """Single-linkage merge tree: (id_a, id_b, height) rows, scipy id convention.

    Original points are 0..n-1; the cluster created by merge step s gets id
    n+s.  Heights are nondecreasing.
    """

    merges: tuple[tuple[int, int, float], ...]
    labels: tuple[str, ...]

    @property
    def heights(self) -> np.ndarray:
        return np.array([h for _, _, h in self.merges])


def single_linkage(mat: np.ndarray, labels: list[str] | None = None) -> Dendrogram:
    """Agglomerative single-linkage clustering of a distance matrix.

    Ties are broken by the lexicographically smallest pair of smallest
    original indices of the two clusters.
    """
    mat = _check_distance_matrix(mat)
    n = mat.shape[0]
    if labels is None:
        labels = [str(i) for i in range(n)]
    if len(labels) != n:
        raise InvalidArgumentError("one label per point is required")
    clusters: dict[int, set[int]] = {i: {i} for i in range(n)}
    merges: list[tuple[int, int, float]] = []
    next_id = n
    while len(clusters) > 1:
        best = None
        for ia in clusters:
            for ib in clusters:
                if ib <= ia:
                    continue
                members_a, members_b = clusters[ia], clusters[ib]
                d = min(mat[p, q] for p in members_a for q in members_b)
                ra, rb = min(members_a), min(members_b)
                key = (d, min(ra, rb), max(ra, rb))
                if best is None or key < best[0]:
                    best = (key, ia, ib)
        (d, _, _), ia, ib = best
        merges.append((min(ia, ib), max(ia, ib), float(d)))
        clusters[next_id] = clusters.pop(ia) | clusters.pop(ib)
        next_id += 1
    return Dendrogram(merges=tuple(merges), labels=tuple(labels))


def dendrogram_to_newick(dend: Dendrogram) -> str:
    """Newick serialization with branch lengths height_parent - height_child."""
    n = len(dend.labels)
    height = {i: 0.0 for i in range(n)}
    node: dict[int, str] = {}

    def leaf(i: int) -> str:
        return dend.labels[i].replace(" ", "_")

    for step, (a, b, h) in enumerate(dend.merges):
        sa = node.get(a, leaf(a) if a < n else None)
        sb = node.get(b, leaf(b) if b < n else None)
        la = h - height[a]
        lb = h - height[b]
        nid = n + step
        node[nid] = f"({sa}:{la:.10g},{sb}:{lb:.10g})"
        height[nid] = h
    return node[2 * n - 2] + ";" if n > 1 else leaf(0) + ";"


def cut_dendrogram(dend: Dendrogram, n_clusters: int) -> list[set[int]]:
    """Flat clusters obtained by undoing the last n_clusters-1 merges."""
    n = len(dend.labels)
    clusters: dict[int, set[int]] = {i: {i} for i in range(n)}
    next_id = n
    for a, b, _ in dend.merges[: n - n_clusters]:
        clusters[next_id] = clusters.pop(a) | clusters.pop(b)
        next_id += 1
    return sorted(clusters.values(), key=min)


@dataclass(frozen=True)
class CalibrationResult:
    params: MetricParams
    averages: tuple[float, float, float]  # mean L2/H1/H2 parts of linear paths
    rescale_factor: float | None = None


def linear_pair_energy_parts(c0: Curve, c1: Curve) -> tuple[float, float, float]:
    """Unweighted L2/H1/H2 parts of the straight-line path between two curves."""
    kvt = make_knots(2, 1, CLAMPED)
    ctrl = np.stack([c0.controls, c1.controls])
    grids = PathGrids(time=quadrature_grid(kvt, 3), space=quadrature_grid(c0.basis))
    raw = sobolev_params(1.0, 1.0, 1.0)
    breakdown, _, _ = _energy_core(raw, ctrl, grids, want_grad=False)
    return breakdown.e_l2, breakdown.e_h1, breakdown.e_h2


def calibrate_params(
    curves: list[Curve],
    ratios: tuple[float, float, float] = (3.0, 1.0, 6.0),
    total: float = 100.0,
    rescale: bool = False,
) -> CalibrationResult:
    """Choose metric coefficients from the average linear-path energy parts.

    The coefficients satisfy a0*E_l2 : a1*E_h1 : a2*E_h2 = ratios and the
    weighted sum equals ``total``.  With ``rescale`` the curves are first
    assumed scaled by the returned factor rho, the positive root equating the
    L2 and H2 averages (they scale as rho^3 and rho^-1).
    """
    if len(curves) < 2:
        raise InvalidArgumentError("calibration needs at least two curves")
    parts = np.zeros(3)
    count = 0
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            parts += linear_pair_energy_parts(curves[i], curves[j])
            count += 1
    avg = parts / count
    rho = None
    if rescale:
        if avg[0] <= 0 or avg[2] <= 0:
            raise InvalidArgumentError("degenerate dataset: zero L2 or H2 contribution")
        rho = float((avg[2] / avg[0]) ** 0.25)
        avg = np.array([avg[0] * rho**3, avg[1] * rho, avg[2] / rho])
    if np.any(avg <= 0.0):
        raise InvalidArgumentError("degenerate dataset: zero average energy contribution")
    rsum = float(sum(ratios))
    a = tuple(r * total / (rsum * e) for r, e in zip(ratios, avg))
    return CalibrationResult(
        params=sobolev_params(a[0], a[1], a[2], variant=CONSTANT),
        averages=(float(avg[0]), float(avg[1]), float(avg[2])),
        rescale_factor=rho,
    )
