"""Viewpoint and resolution selection over the sampled grid.

The selector renders the cloud from every candidate viewpoint at every
candidate resolution, normalizes the per-resolution acquisition rates and
picks the viewpoint with the largest normalized sum; the resolution is then
the density argmax along that viewpoint's row.

Orthographic projection makes the acquisition rate blind to the sign of the
view axis: a cloud occupies exactly the same number of pixels seen from v
and from -v. When given the cloud, the selector therefore fixes the axis
first and then orients it with the depth-based test in `orient_axis`.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_RESOLUTIONS
from .errors import AllCollinear, TooFewPoints
from .geometry import as_points, dodecahedron_viewpoints, orthonormal_basis
from .render import density, foreground_count, quantity, render_point_cloud

ORIENTATION_RESOLUTION = 256
RING_STEP_DEG = 30.0


@dataclass
class ScoreGrid:
    """Acquisition rate and density over the viewpoint x resolution lattice."""

    viewpoints: np.ndarray      # (N_v, 3)
    resolutions: tuple          # (N_r,)
    quantity: np.ndarray        # (N_v, N_r)
    density: np.ndarray         # (N_v, N_r)


def _score_cell(points, n_points, viewpoint, resolution):
    img = render_point_cloud(points, viewpoint, resolution)
    q = quantity(img, n_points)
    d = density(img) if foreground_count(img) else 0.0
    return q, d


def score_grid(cloud, viewpoints=None, resolutions=None, threads: int = 1) -> ScoreGrid:
    """Evaluate quantity and density for every (viewpoint, resolution) cell."""
    pts = as_points(cloud)
    views = dodecahedron_viewpoints() if viewpoints is None else np.asarray(viewpoints, dtype=np.float64)
    res = tuple(DEFAULT_RESOLUTIONS if resolutions is None else resolutions)
    if len(views) == 0 or len(res) == 0:
        raise ValueError("viewpoint and resolution sets must be non-empty")
    n = len(pts)
    q = np.zeros((len(views), len(res)))
    d = np.zeros((len(views), len(res)))
    cells = [(i, j) for i in range(len(views)) for j in range(len(res))]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: _score_cell(pts, n, views[c[0]], res[c[1]]), cells))
    else:
        results = [_score_cell(pts, n, views[i], res[j]) for i, j in cells]
    for (i, j), (qv, dv) in zip(cells, results):
        q[i, j] = qv
        d[i, j] = dv
    return ScoreGrid(viewpoints=views, resolutions=res, quantity=q, density=d)


def normalize_quantity(grid: ScoreGrid) -> np.ndarray:
    """Scale each resolution column of Q into [0, 1]; constant columns map to 0.

    A constant column carries no viewpoint preference, and adding a constant
    to every row cannot change the argmax.
    """
    q = grid.quantity
    lo = q.min(axis=0)
    hi = q.max(axis=0)
    out = np.zeros_like(q)
    spread = hi - lo
    ok = spread > 0
    out[:, ok] = (q[:, ok] - lo[ok]) / spread[ok]
    return out


def _intensity_centrality_covariance(points, axis, resolution):
    img = render_point_cloud(points, axis, resolution)
    rows, cols = np.nonzero(img)
    if len(rows) < 2:
        return 0.0
    inten = img[rows, cols].astype(np.float64)
    dist = np.hypot(rows - rows.mean(), cols - cols.mean())
    peak = dist.max()
    if peak <= 0:
        return 0.0
    centrality = 1.0 - dist / peak
    return float(np.mean((inten - inten.mean()) * (centrality - centrality.mean())))


def _spacing_depth_correlation(points, axis, sample=1500, neighbor=16):
    # a range scanner samples near surfaces denser, so local point spacing
    # grows with depth only when viewed from the scanned side
    rng = np.random.default_rng(0)
    take = min(sample, len(points))
    sub = points[np.sort(rng.choice(len(points), size=take, replace=False))]
    k = min(neighbor, take - 1)
    if k < 1:
        return 0.0
    d2 = ((sub[:, None, :] - sub[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    spacing = np.sqrt(np.partition(d2, k - 1, axis=1)[:, k - 1])
    depth = sub @ (-np.asarray(axis))

    def rank_z(values):
        ranks = np.argsort(np.argsort(values)).astype(np.float64)
        std = ranks.std()
        return (ranks - ranks.mean()) / std if std > 0 else ranks * 0.0

    return float(np.mean(rank_z(spacing) * rank_z(depth)))


def orient_axis(cloud, axis, resolution: int = ORIENTATION_RESOLUTION) -> np.ndarray:
    """Return +axis or -axis, whichever faces the scanned side of the cloud.

    Two depth cues vote. Primary: local point spacing grows with distance
    from the scanner, so spacing must correlate positively with depth along
    the correct direction. When that correlation is too weak to trust, the
    fallback compares how centrally the bright (near) pixels sit in the
    silhouette: a surface bulging toward the camera is bright in the middle,
    bright on the rim when seen from behind. Ties keep +axis.
    """
    pts = as_points(cloud)
    a = np.asarray(axis, dtype=np.float64)
    score = _spacing_depth_correlation(pts, a)
    if abs(score) < 0.05:
        score = (_intensity_centrality_covariance(pts, a, resolution)
                 - _intensity_centrality_covariance(pts, -a, resolution))
    return a.copy() if score >= 0 else -a


def _antipode_index(viewpoints, idx):
    diff = np.abs(viewpoints + viewpoints[idx]).sum(axis=1)
    j = int(np.argmin(diff))
    return j if diff[j] < 1e-9 else -1


def select_viewpoint(grid: ScoreGrid, cloud=None) -> np.ndarray:
    """Viewpoint whose normalized acquisition rates sum highest.

    Ties break toward the lowest viewpoint index. When the cloud is supplied
    and the winner's antipode is in the search set, the winning axis is
    additionally sign-disambiguated with `orient_axis`; the acquisition rate
    itself cannot tell v from -v under orthographic projection.
    """
    sums = normalize_quantity(grid).sum(axis=1)
    best = int(np.argmax(sums))
    if cloud is not None:
        anti = _antipode_index(grid.viewpoints, best)
        if anti >= 0:
            oriented = orient_axis(cloud, grid.viewpoints[best])
            if oriented @ grid.viewpoints[best] < 0:
                best = anti
    return grid.viewpoints[best].copy()


def _viewpoint_row(grid: ScoreGrid, viewpoint) -> int:
    v = np.asarray(viewpoint, dtype=np.float64)
    diff = np.abs(grid.viewpoints - v).sum(axis=1)
    row = int(np.argmin(diff))
    if diff[row] > 1e-9:
        raise ValueError("viewpoint is not a member of the grid's search set")
    return row


def select_resolution(grid: ScoreGrid, best_viewpoint) -> int:
    """Resolution with maximum density along the chosen viewpoint's row.

    Ties break toward the largest resolution, which preserves the most
    geometry.
    """
    row = grid.density[_viewpoint_row(grid, best_viewpoint)]
    top = row.max()
    return max(r for r, d in zip(grid.resolutions, row) if d == top)


def best_resolution_for_viewpoint(cloud, viewpoint, resolutions=None) -> int:
    """Density-argmax resolution for an arbitrary (off-lattice) viewpoint."""
    pts = as_points(cloud)
    res = tuple(DEFAULT_RESOLUTIONS if resolutions is None else resolutions)
    dens = []
    for r in res:
        img = render_point_cloud(pts, viewpoint, r)
        dens.append(density(img) if foreground_count(img) else 0.0)
    top = max(dens)
    return max(r for r, d in zip(res, dens) if d == top)


def ransac_viewpoint(cloud, iterations: int = 1000, inlier_tolerance: float = 0.01, seed=0) -> np.ndarray:
    """Unit normal of the best RANSAC plane fit over the iterations.

    Each iteration fits a plane through three random points and counts the
    points within the inlier tolerance of it; the normal of the best plane
    wins. The sign keeps whichever of the two normal directions renders the
    higher acquisition rate; exact ties keep the normal as computed. Note
    that a plane normal carries no information about which side the scanner
    stood on, so the sign is effectively arbitrary. Deterministic for a
    fixed seed.
    """
    pts = as_points(cloud)
    n = len(pts)
    if n < 3:
        raise TooFewPoints("plane fitting needs at least 3 points")
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    if inlier_tolerance <= 0:
        raise ValueError("inlier tolerance must be positive")
    rng = np.random.default_rng(seed)
    best_count = -1
    best_normal = None
    for _ in range(iterations):
        i, j, k = rng.choice(n, size=3, replace=False)
        normal = np.cross(pts[j] - pts[i], pts[k] - pts[i])
        length = np.linalg.norm(normal)
        if length < 1e-12:
            continue
        normal /= length
        dist = np.abs((pts - pts[i]) @ normal)
        count = int((dist <= inlier_tolerance).sum())
        if count > best_count:
            best_count = count
            best_normal = normal
    if best_normal is None:
        raise AllCollinear("no valid plane found in any iteration")
    q_pos = quantity(render_point_cloud(pts, best_normal, ORIENTATION_RESOLUTION), n)
    q_neg = quantity(render_point_cloud(pts, -best_normal, ORIENTATION_RESOLUTION), n)
    return -best_normal if q_neg > q_pos else best_normal


def multiview_ring(center, delta_deg: float = 40.0) -> np.ndarray:
    """The center viewpoint plus 12 viewpoints on a cone of angle ``delta_deg``.

    Ring members are spaced every 30 degrees of azimuth around the center
    direction; all 13 results are unit vectors.
    """
    c = np.asarray(center, dtype=np.float64)
    if abs(np.linalg.norm(c) - 1.0) > 1e-9:
        raise ValueError("center must be a unit vector")
    e1, e2 = orthonormal_basis(c)
    delta = np.radians(delta_deg)
    views = [c.copy()]
    for i in range(12):
        azimuth = np.radians(RING_STEP_DEG * i)
        v = np.cos(delta) * c + np.sin(delta) * (np.cos(azimuth) * e1 + np.sin(azimuth) * e2)
        views.append(v / np.linalg.norm(v))
    return np.asarray(views)
