"""Curve ingestion: images and point lists to closed spline curves.

Images are 8-bit grayscale PGM (binary P5 or ASCII P2).  The extraction
pipeline thresholds with Otsu's criterion, picks the 4-connected foreground
component with the longest traced boundary (largest area behind a flag),
walks its outer boundary with a Moore-neighborhood trace, and fits a
constant-speed periodic spline.  Point lists are CSV x,y rows, fitted or
interpolated at uniform parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
from scipy import ndimage

from .bvp import reparam_constant_speed
from .errors import (
    DegenerateHistogramError,
    EmptyForegroundError,
    InvalidArgumentError,
    SingularFitError,
)
from .splines import PERIODIC, Curve, collocation, fit_least_squares, make_knots


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image, pixels row-major with shape (height, width)."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width):
            raise InvalidArgumentError("pixel buffer does not match width*height")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class PointSequence:
    """Ordered planar points, optionally forming a closed loop."""

    points: np.ndarray  # (m, 2)
    closed: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidArgumentError("points must be an (m, 2) array")
        if self.closed and pts.shape[0] < 3:
            raise InvalidArgumentError("a closed sequence needs at least 3 points")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def read_pgm(path) -> GrayImage:
    """Read a binary (P5) or ASCII (P2) PGM file with maxval <= 255."""
    data = FsPath(path).read_bytes()

    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise InvalidArgumentError(f"{path}: truncated PGM header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    magic = tokens[0]
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: malformed PGM header") from exc
    if magic not in (b"P2", b"P5"):
        raise InvalidArgumentError(f"{path}: not a PGM file (magic {magic!r})")
    if maxval <= 0 or maxval > 255:
        raise InvalidArgumentError(f"{path}: unsupported maxval {maxval} (need <= 255)")
    if width <= 0 or height <= 0:
        raise InvalidArgumentError(f"{path}: empty image")
    if magic == b"P5":
        pos += 1  # exactly one whitespace byte after the header
        raw = data[pos : pos + width * height]
        if len(raw) < width * height:
            raise InvalidArgumentError(f"{path}: truncated P5 pixel data")
        px = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    else:
        values = data[pos:].split()
        if len(values) < width * height:
            raise InvalidArgumentError(f"{path}: truncated P2 pixel data")
        px = np.array([int(v) for v in values[: width * height]], dtype=np.uint8).reshape(
            height, width
        )
    return GrayImage(width=width, height=height, pixels=px)


def write_pgm(img: GrayImage, path) -> None:
    """Write a binary P5 PGM file."""
    header = f"P5\n{img.width} {img.height}\n255\n".encode()
    FsPath(path).write_bytes(header + img.pixels.tobytes())


def histogram(img: GrayImage) -> np.ndarray:
    return np.bincount(img.pixels.reshape(-1), minlength=256)


def otsu_from_histogram(hist) -> int:
    """Threshold maximizing the between-class variance of a 256-bin histogram.

    The comparison is exact: with integer counts the variance at threshold t
    is (S0*n1 - S1*n0)^2 / (n0*n1) up to a constant factor, so candidates are
    ranked by integer cross-multiplication.  Ties resolve to the smallest
    threshold; foreground is intensity > t.
    """
    hist = [int(v) for v in hist]
    if len(hist) != 256:
        raise InvalidArgumentError("histogram must have 256 bins")
    total = sum(hist)
    if total == 0:
        raise InvalidArgumentError("empty histogram")
    if sum(1 for v in hist if v > 0) < 2:
        raise DegenerateHistogramError(
            "constant image: between-class variance is zero for every threshold"
        )
    sum_all = sum(i * v for i, v in enumerate(hist))
    best_t = None
    best_num = 0  # (S0*n1 - S1*n0)^2
    best_den = 1  # n0*n1
    n0 = 0
    s0 = 0
    for t in range(256):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = sum_all - s0
        num = (s0 * n1 - s1 * n0) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return int(best_t)


def otsu_threshold(img: GrayImage) -> int:
    return otsu_from_histogram(histogram(img))


def binarize(img: GrayImage, threshold: int | None = None) -> np.ndarray:
    """Foreground mask: intensity strictly above the (Otsu by default) threshold."""
    if threshold is None:
        threshold = otsu_threshold(img)
    return img.pixels > threshold


_MOORE = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)]


def _trace_boundary(mask: np.ndarray, start: tuple[int, int]) -> list[tuple[int, int]]:
    """Moore-neighborhood boundary walk from the scan-order first pixel.

    ``start`` must be the first foreground pixel in row-major order, so its
    west neighbor is background.  The walk state is the pair (pixel,
    backtrack position); the trace is the first period of that orbit, a
    closed 8-connected pixel loop.
    """
    h, w = mask.shape

    def fg(rc):
        r, c = rc
        return 0 <= r < h and 0 <= c < w and mask[r, c]

    p = start
    b = (start[0], start[1] - 1)  # background by scan order
    seen: dict[tuple, int] = {}
    seq: list[tuple[int, int]] = []
    while (p, b) not in seen:
        seen[(p, b)] = len(seq)
        seq.append(p)
        idx = _MOORE.index((b[0] - p[0], b[1] - p[1]))
        for k in range(1, 9):
            d = (idx + k) % 8
            cand = (p[0] + _MOORE[d][0], p[1] + _MOORE[d][1])
            if fg(cand):
                prev = _MOORE[(idx + k - 1) % 8]
                b = (p[0] + prev[0], p[1] + prev[1])
                p = cand
                break
        else:
            return seq  # isolated single pixel
    return seq[seen[(p, b)] :]


def largest_component_boundary(mask: np.ndarray, by_area: bool = False) -> PointSequence:
    """Boundary of the 4-connected foreground component with the longest
    boundary (or, with ``by_area``, the most pixels), counterclockwise."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyForegroundError("no foreground pixels above the threshold")
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels, n_comp = ndimage.label(mask, structure=structure)
    best_pts: list[tuple[int, int]] | None = None
    best_score = -1
    for comp in range(1, n_comp + 1):
        comp_mask = labels == comp
        rows, cols = np.nonzero(comp_mask)
        start = (int(rows[0]), int(cols[0]))  # row-major first pixel
        pts = _trace_boundary(comp_mask, start)
        score = int(comp_mask.sum()) if by_area else len(pts)
        if score > best_score:
            best_score = score
            best_pts = pts
    xy = np.array([(c, r) for r, c in best_pts], dtype=float)
    if len(xy) >= 3:
        # enforce counterclockwise orientation (positive shoelace area)
        area = 0.5 * float(
            np.sum(xy[:, 0] * np.roll(xy[:, 1], -1) - np.roll(xy[:, 0], -1) * xy[:, 1])
        )
        if area < 0:
            xy = xy[::-1].copy()
    return PointSequence(points=xy, closed=len(xy) >= 3)


def boundary_to_curve(seq: PointSequence, n_controls: int = 12, degree: int = 4) -> Curve:
    """Least-squares periodic fit at chord-length parameters, then constant
    speed reparametrization (the extraction defaults are 12 quartic controls)."""
    if not seq.closed:
        raise InvalidArgumentError("boundary must be a closed sequence")
    if len(seq) < n_controls:
        raise InvalidArgumentError(
            f"need at least {n_controls} boundary points, got {len(seq)}"
        )
    pts = seq.points
    closed_pts = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed_pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])[:-1]
    if cum[-1] <= 0:
        raise InvalidArgumentError("degenerate boundary (zero length)")
    params = 2.0 * math.pi * cum / (cum[-1] + seg[-1])
    fit = fit_least_squares(params, pts, n_controls, degree)
    return reparam_constant_speed(fit)


def points_to_curve(seq: PointSequence, n_controls: int = 30, degree: int = 3) -> Curve:
    """Periodic spline through sample points at uniform parameters.

    Exact consecutive duplicates (including the wrap-around pair) are
    collapsed first.  With exactly n_controls samples this is square
    interpolation at the Greville abscissae; with more samples, least squares.
    """
    pts = np.asarray(seq.points, dtype=float)
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
        keep[-1] = False
    pts = pts[keep]
    m = len(pts)
    if m < n_controls:
        raise SingularFitError(
            f"only {m} distinct samples for {n_controls} controls; "
            "interpolation system is singular",
            rank=m,
            needed=n_controls,
        )
    kv = make_knots(n_controls, degree, PERIODIC)
    if m == n_controls:
        params = kv.greville()
        design = collocation(kv, params, max_order=0)[0]
        try:
            controls = np.linalg.solve(design, pts)
        except np.linalg.LinAlgError as exc:
            raise SingularFitError(f"singular interpolation system: {exc}") from exc
        return Curve(controls, kv)
    params = np.arange(m) * (2.0 * math.pi / m)
    return fit_least_squares(params, pts, n_controls, degree)


def project_simplex(points: np.ndarray) -> np.ndarray:
    """Map homogeneous triples onto the plane of unit coordinate sum and keep
    the first two coordinates."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise InvalidArgumentError("simplex projection expects (m, 3) input")
    sums = points.sum(axis=1)
    if np.any(sums == 0.0):
        raise InvalidArgumentError("cannot project points with zero coordinate sum")
    return (points / sums[:, None])[:, :2]


def read_points_csv(path, project: bool = False) -> PointSequence:
    """CSV point list: one x,y (or homogeneous x1,x2,x3 with project) per line."""
    rows = []
    for line in FsPath(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p for p in line.replace(";", ",").split(",") if p.strip()]
        rows.append([float(p) for p in parts])
    if not rows:
        raise InvalidArgumentError(f"{path}: no points found")
    arr = np.array(rows, dtype=float)
    if project:
        arr = project_simplex(arr)
    elif arr.shape[1] != 2:
        raise InvalidArgumentError(
            f"{path}: expected 2 columns (or 3 with simplex projection), got {arr.shape[1]}"
        )
    return PointSequence(points=arr, closed=len(arr) >= 3)


def extract_curve(
    img: GrayImage,
    n_controls: int = 12,
    degree: int = 4,
    by_area: bool = False,
) -> Curve:
    """Full image pipeline: Otsu threshold, longest-boundary component, spline."""
    mask = binarize(img)
    boundary = largest_component_boundary(mask, by_area=by_area)
    return boundary_to_curve(boundary, n_controls=n_controls, degree=degree)
