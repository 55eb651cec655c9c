"""Diagonal-covariance GMM estimation, Fisher-vector encoding and retrieval.

The mixture is fit once over the pooled database features and reused for
every image. An image's descriptor stacks, per component, the soft-assigned
mean and deviation gradients of its feature set; two images are compared by
the cosine distance of their descriptors.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .errors import (DegenerateComponent, DimensionMismatch, EmptyDb, EmptyFeatureSet,
                     TooFewFeatures, ZeroVector)
from .features import extract_features
from .geometry import TriangleMesh, dodecahedron_viewpoints, normalize_mesh, normalize_pose
from .render import render_mesh, render_point_cloud
from .select import score_grid, select_resolution, select_viewpoint

VARIANCE_FLOOR = 1e-6
MAX_EM_ITERATIONS = 25
EM_RELATIVE_TOL = 1e-5
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmParams:
    """Mixture weights, means and per-dimension standard deviations."""

    weights: np.ndarray          # (K,)
    means: np.ndarray            # (K, D)
    sigmas: np.ndarray           # (K, D)
    log_likelihoods: list = field(default_factory=list, repr=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _log_joint(x: np.ndarray, gmm: GmmParams) -> np.ndarray:
    """log(w_k * N(x | mu_k, diag sigma_k^2)) for every row of x, shape (n, K)."""
    n, d = x.shape
    out = np.empty((n, gmm.n_components))
    log_w = np.log(gmm.weights)
    for k in range(gmm.n_components):
        z = (x - gmm.means[k]) / gmm.sigmas[k]
        log_norm = -0.5 * d * _LOG_2PI - np.log(gmm.sigmas[k]).sum()
        out[:, k] = log_w[k] + log_norm - 0.5 * (z * z).sum(axis=1)
    return out


def _log_sum_exp(rows: np.ndarray) -> np.ndarray:
    m = rows.max(axis=1)
    return m + np.log(np.exp(rows - m[:, None]).sum(axis=1))


def gmm_posteriors(x, gmm: GmmParams) -> np.ndarray:
    """Soft assignments of one feature (or a batch) to every component.

    Computed in log space; each row sums to one.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    logj = _log_joint(arr, gmm)
    post = np.exp(logj - _log_sum_exp(logj)[:, None])
    return post[0] if single else post


def _kmeans_plus_plus(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[i] = x[idx]
        np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1), out=d2)
    return centers


def fit_gmm(features, n_components: int, seed=0,
            max_iterations: int = MAX_EM_ITERATIONS,
            tol: float = EM_RELATIVE_TOL) -> GmmParams:
    """Fit a diagonal-covariance mixture with EM from a k-means++ start.

    Stops after ``max_iterations`` or when the relative log-likelihood change
    drops below ``tol``. Variances are floored at 1e-6. The per-iteration
    log-likelihood trace is kept on the result for inspection. Deterministic
    for a fixed seed.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-D array")
    n, d = x.shape
    if n_components < 1:
        raise ValueError("n_components must be at least 1")
    if n < 10 * n_components:
        raise TooFewFeatures(f"need at least {10 * n_components} features for K={n_components}, got {n}")

    rng = np.random.default_rng(seed)
    means = _kmeans_plus_plus(x, n_components, rng)
    dist2 = np.stack([((x - means[k]) ** 2).sum(axis=1) for k in range(n_components)], axis=1)
    assign = dist2.argmin(axis=1)
    global_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    weights = np.empty(n_components)
    variances = np.empty((n_components, d))
    for k in range(n_components):
        members = x[assign == k]
        if len(members) == 0:
            weights[k] = 1.0
            variances[k] = global_var
        else:
            weights[k] = len(members)
            means[k] = members.mean(axis=0)
            variances[k] = np.maximum(members.var(axis=0), VARIANCE_FLOOR)
    weights /= weights.sum()
    sigmas = np.sqrt(variances)

    gmm = GmmParams(weights=weights, means=means, sigmas=sigmas)
    trace = gmm.log_likelihoods
    previous = None
    reinitialized = False
    for _ in range(max_iterations):
        logj = _log_joint(x, gmm)
        lse = _log_sum_exp(logj)
        ll = float(lse.sum())
        trace.append(ll)
        if previous is not None and abs(ll - previous) < tol * abs(previous):
            break
        previous = ll
        resp = np.exp(logj - lse[:, None])
        mass = resp.sum(axis=0)
        dead = mass < n * 1e-12
        if dead.any():
            if reinitialized:
                raise DegenerateComponent("component responsibility mass underflowed twice")
            reinitialized = True
            worst = int(np.argmin(lse))
            for k in np.nonzero(dead)[0]:
                gmm.means[k] = x[worst]
                gmm.sigmas[k] = np.sqrt(global_var)
                gmm.weights[k] = 1.0 / n
            gmm.weights /= gmm.weights.sum()
            continue
        gmm.weights = mass / n
        for k in range(n_components):
            q = resp[:, k:k + 1]
            mu = (q * x).sum(axis=0) / mass[k]
            var = (q * (x - mu) ** 2).sum(axis=0) / mass[k]
            gmm.means[k] = mu
            gmm.sigmas[k] = np.sqrt(np.maximum(var, VARIANCE_FLOOR))
    return gmm


def fisher_vector(features, gmm: GmmParams, normalize: bool = True) -> np.ndarray:
    """Encode a feature set into a 2*D*K descriptor [u_1, v_1, ..., u_K, v_K].

    ``u_k`` aggregates the soft-assigned standardized residuals against
    component k and ``v_k`` the corresponding deviation gradients, both
    averaged over the feature count. With ``normalize`` the descriptor gets
    the usual signed square root followed by L2 normalization; disable it to
    obtain the raw gradient values.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.size == 0:
        raise EmptyFeatureSet("cannot encode an empty feature set")
    if x.shape[1] != gmm.dim:
        raise DimensionMismatch(f"features have dim {x.shape[1]}, mixture expects {gmm.dim}")
    n = len(x)
    resp = gmm_posteriors(x, gmm)
    parts = []
    for k in range(gmm.n_components):
        z = (x - gmm.means[k]) / gmm.sigmas[k]
        q = resp[:, k:k + 1]
        u = (q * z).sum(axis=0) / (n * np.sqrt(gmm.weights[k]))
        v = (q * (z * z - 1.0)).sum(axis=0) / (n * np.sqrt(2.0 * gmm.weights[k]))
        parts.append(u)
        parts.append(v)
    descriptor = np.concatenate(parts)
    if normalize:
        descriptor = np.sign(descriptor) * np.sqrt(np.abs(descriptor))
        norm = np.linalg.norm(descriptor)
        if norm > 0:
            descriptor /= norm
    return descriptor


def cosine_distance(a, b) -> float:
    """1 - cos(a, b), in [0, 2]."""
    va = np.asarray(a, dtype=np.float64).ravel()
    vb = np.asarray(b, dtype=np.float64).ravel()
    if va.shape != vb.shape:
        raise DimensionMismatch(f"descriptor sizes differ: {va.shape} vs {vb.shape}")
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine distance is undefined for zero vectors")
    cos = np.clip(float(va @ vb) / (na * nb), -1.0, 1.0)
    return 1.0 - cos


@dataclass
class DbEntry:
    model_id: str
    class_id: int
    viewpoint_id: int
    descriptor: np.ndarray


@dataclass
class DescriptorDb:
    """All per-view descriptors of the database models, sharing one mixture."""

    entries: list
    gmm: GmmParams = None


def database_views(geometry, config: PipelineConfig) -> list:
    """Render the 20 database views of one model.

    Meshes render at the fixed database resolution; point clouds render at
    the resolution the selector proposes for them.
    """
    views = dodecahedron_viewpoints()
    if isinstance(geometry, TriangleMesh):
        mesh, _ = normalize_mesh(geometry)
        return [render_mesh(mesh, v, config.db_resolution) for v in views]
    pts, _ = normalize_pose(geometry)
    grid = score_grid(pts, views, config.resolutions, threads=config.threads)
    v_best = select_viewpoint(grid, pts)
    r_best = select_resolution(grid, v_best)
    return [render_point_cloud(pts, v, r_best) for v in views]


def pool_database_features(models, config: PipelineConfig) -> np.ndarray:
    """Features of every database view of every model, optionally subsampled.

    Uses the same per-image seeds as `build_db`, so the pooled features match
    the ones later encoded into descriptors.
    """
    chunks = []
    for m_idx, (_, _, geometry) in enumerate(models):
        for v_idx, img in enumerate(database_views(geometry, config)):
            chunks.append(np.asarray(
                extract_features(img, config.n_keypoints, config.keypoint_decay,
                                 seed=[config.seed, m_idx, v_idx]),
                dtype=np.float32))
    pooled = np.concatenate(chunks, axis=0)
    if len(pooled) > config.gmm_sample_cap:
        rng = np.random.default_rng([config.seed, 0x9001])
        keep = rng.choice(len(pooled), size=config.gmm_sample_cap, replace=False)
        pooled = pooled[np.sort(keep)]
    return pooled


def build_db(models, gmm: GmmParams, config: PipelineConfig) -> DescriptorDb:
    """Encode one descriptor per (model, viewpoint) for all database models."""
    ids = [m[0] for m in models]
    if len(ids) == 0:
        raise ValueError("need at least one model")
    if len(set(ids)) != len(ids):
        raise ValueError("model ids must be unique")
    entries = []
    for m_idx, (model_id, class_id, geometry) in enumerate(models):
        for v_idx, img in enumerate(database_views(geometry, config)):
            feats = extract_features(img, config.n_keypoints, config.keypoint_decay,
                                     seed=[config.seed, m_idx, v_idx])
            descriptor = fisher_vector(feats, gmm).astype(np.float32)
            entries.append(DbEntry(model_id, int(class_id), v_idx, descriptor))
    return DescriptorDb(entries=entries, gmm=gmm)


def query_db(db: DescriptorDb, query_descriptors, top_k: int = None) -> list:
    """Rank database models by their minimum view-pair distance to the query.

    Returns ``(model_id, distance)`` pairs sorted ascending; ties keep the
    database's model order. ``top_k`` truncates the ranking when given.
    """
    if not db.entries:
        raise EmptyDb("descriptor database is empty")
    queries = np.atleast_2d(np.asarray(query_descriptors, dtype=np.float64))
    dim = db.entries[0].descriptor.shape[0]
    if queries.shape[1] != dim:
        raise DimensionMismatch(f"query dim {queries.shape[1]} does not match database dim {dim}")
    qnorm = np.linalg.norm(queries, axis=1)
    if np.any(qnorm == 0):
        raise ZeroVector("query descriptor has zero norm")
    qn = queries / qnorm[:, None]

    order = []
    grouped = {}
    for entry in db.entries:
        if entry.model_id not in grouped:
            grouped[entry.model_id] = []
            order.append(entry.model_id)
        grouped[entry.model_id].append(entry.descriptor)

    ranking = []
    for model_id in order:
        mat = np.asarray(grouped[model_id], dtype=np.float64)
        norms = np.linalg.norm(mat, axis=1)
        if np.any(norms == 0):
            raise ZeroVector(f"database descriptor for {model_id} has zero norm")
        cos = np.clip(qn @ (mat / norms[:, None]).T, -1.0, 1.0)
        ranking.append((model_id, float((1.0 - cos).min())))
    ranking.sort(key=lambda pair: pair[1])
    return ranking if top_k is None else ranking[:top_k]
