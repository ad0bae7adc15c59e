"""Point-cloud types and geometry kernels: k-NN, FPS, local eigen-frames,
ray-origin sampling, patch construction and augmentation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation


class SizeError(ValueError):
    pass


class DegenerateRayError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray
    sensor: np.ndarray | None = None
    tag: str = ""

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.sensor is not None:
            self.sensor = np.asarray(self.sensor, dtype=np.float64).reshape(3)

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray


@dataclass
class Patch:
    points: np.ndarray          # (k, 3), relative to the ray origin, max norm 1
    scale: float                # world units per normalized unit
    origin_world: np.ndarray


@dataclass
class EigenFrame:
    mean: np.ndarray
    eigenvalues: np.ndarray     # ascending, non-negative
    eigenvectors: np.ndarray    # columns


@dataclass
class QueryBatch:
    """Stacked query samples, the unit consumed by training and inference."""

    patches: np.ndarray         # (Q, k, 3)
    directions: np.ndarray      # (Q, 3)
    scales: np.ndarray          # (Q,)
    origins: np.ndarray         # (Q, 3) world ray origins
    query_points: np.ndarray    # (Q, 3) world query points
    targets: np.ndarray | None = None   # (Q,) normalized depths
    skipped: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.directions)

    def subset(self, idx) -> "QueryBatch":
        return QueryBatch(self.patches[idx], self.directions[idx], self.scales[idx],
                          self.origins[idx], self.query_points[idx],
                          None if self.targets is None else self.targets[idx])


def as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.ascontiguousarray(cloud, dtype=np.float64).reshape(-1, 3)


def point_distances(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Euclidean distances with a fixed evaluation order, so every caller agrees bit-for-bit."""
    d = points - q
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


_BRUTE_BELOW = 64
_EXTRA = 8


class KNNIndex:
    """Exact k-nearest-neighbour search; ties are broken by lower index.

    A kd-tree proposes candidates; distances are recomputed with
    :func:`point_distances` and any row whose k-th neighbour is not clearly
    separated from the unexplored remainder is redone exhaustively.
    """

    def __init__(self, cloud):
        self.points = as_points(cloud)
        self.n = len(self.points)
        self.tree = cKDTree(self.points) if self.n >= _BRUTE_BELOW else None

    def _brute_row(self, q, k, exclude_self):
        d = point_distances(self.points, q)
        if exclude_self:
            d = np.where(d == 0.0, np.inf, d)
        order = np.lexsort((np.arange(self.n), d))[:k]
        if not np.all(np.isfinite(d[order])):
            raise SizeError(f"k={k} exceeds available neighbours")
        return order, d[order]

    def query(self, queries, k: int, exclude_self: bool = False) -> tuple[np.ndarray, np.ndarray]:
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        if k < 1 or k > self.n:
            raise SizeError(f"k={k} out of range for {self.n} points")
        idx_out = np.empty((len(q), k), dtype=np.int64)
        dist_out = np.empty((len(q), k))
        if self.tree is None:
            for r in range(len(q)):
                idx_out[r], dist_out[r] = self._brute_row(q[r], k, exclude_self)
            return idx_out, dist_out

        kq = min(self.n, k + _EXTRA + (4 if exclude_self else 0))
        _, cand = self.tree.query(q, k=kq)
        cand = cand.reshape(len(q), kq)
        d = point_distances(self.points[cand], q[:, None, :])
        if exclude_self:
            d = np.where(d == 0.0, np.inf, d)
        order = np.lexsort((cand, d), axis=-1)
        cand_s = np.take_along_axis(cand, order, axis=1)
        d_s = np.take_along_axis(d, order, axis=1)
        idx_out[:] = cand_s[:, :k]
        dist_out[:] = d_s[:, :k]
        if kq < self.n:
            # every unexplored point is at least as far as the farthest candidate
            bound = np.where(np.isfinite(d), d, -np.inf).max(axis=1)
            unsafe = ~(dist_out[:, -1] < bound * (1.0 - 1e-9))
        else:
            unsafe = np.zeros(len(q), dtype=bool)
        unsafe |= ~np.isfinite(dist_out[:, -1])
        for r in np.flatnonzero(unsafe):
            idx_out[r], dist_out[r] = self._brute_row(q[r], k, exclude_self)
        return idx_out, dist_out

    def nearest(self, queries) -> tuple[np.ndarray, np.ndarray]:
        idx, dist = self.query(queries, 1)
        return idx[:, 0], dist[:, 0]


def knn(cloud, query, k: int, exclude_self: bool = False) -> np.ndarray:
    """Indices of the ``k`` nearest points to ``query``, nearest first."""
    idx, _ = KNNIndex(cloud).query(np.asarray(query, dtype=np.float64).reshape(1, 3), k, exclude_self)
    return idx[0]


def farthest_point_sampling(cloud, n: int, seed_index: int = 0) -> np.ndarray:
    pts = as_points(cloud)
    if not 1 <= n <= len(pts):
        raise SizeError(f"cannot sample {n} of {len(pts)} points")
    selected = np.empty(n, dtype=np.int64)
    selected[0] = seed_index
    min_d = point_distances(pts, pts[seed_index])
    min_d[seed_index] = -1.0
    for i in range(1, n):
        nxt = int(np.argmax(min_d))
        selected[i] = nxt
        min_d = np.minimum(min_d, point_distances(pts, pts[nxt]))
        min_d[selected[: i + 1]] = -1.0
    return selected


def covariance_eigen(neighborhood) -> EigenFrame:
    pts = as_points(neighborhood)
    if len(pts) < 3:
        raise SizeError("need at least 3 points for a covariance frame")
    mu = pts.mean(axis=0)
    c = pts - mu
    cov = c.T @ c
    vals, vecs = np.linalg.eigh(cov)
    tol = 1e-12 * max(1.0, float(np.abs(vals).max()))
    vals = np.where(vals < tol, 0.0, vals)
    return EigenFrame(mu, vals, vecs)


_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def axis_eigenvalues(frame: EigenFrame) -> np.ndarray:
    """Eigenvalues re-indexed by world axis: each eigenvalue goes to the axis its
    eigenvector is most aligned with (best one-to-one matching)."""
    a = np.abs(frame.eigenvectors)
    best = max(_PERMS, key=lambda p: sum(a[p[j], j] for j in range(3)))
    out = np.empty(3)
    for j in range(3):
        out[best[j]] = frame.eigenvalues[j]
    return out


def sample_ray_origins(cloud, count: int, rng: np.random.Generator, k: int = 16,
                       mode: str = "literal") -> np.ndarray:
    """Ray origins offset from FPS-downsampled local neighbourhood means.

    ``mode="literal"`` adds the square-rooted eigenvalues coordinate-wise in
    world axes (see :func:`axis_eigenvalues`); ``mode="frame"`` adds them along
    the corresponding eigenvectors. One fair sign draw per origin.
    """
    pts = as_points(cloud)
    if len(pts) < k:
        raise SizeError(f"cloud of {len(pts)} points is smaller than k={k}")
    if mode not in ("literal", "frame"):
        raise ValueError(f"unknown origin mode {mode!r}")
    seed = int(rng.integers(len(pts)))
    centers = farthest_point_sampling(pts, count, seed)
    signs = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    nbr, _ = KNNIndex(pts).query(pts[centers], k)
    origins = np.empty((count, 3))
    for i, row in enumerate(nbr):
        frame = covariance_eigen(pts[row])
        if mode == "literal":
            offset = np.sqrt(axis_eigenvalues(frame))
        else:
            offset = frame.eigenvectors @ np.sqrt(frame.eigenvalues)
        origins[i] = frame.mean + signs[i] * offset
    return origins


def build_query_batch(cloud, query_points, origins, k: int = 16,
                      exclude_self: bool = False, index: KNNIndex | None = None,
                      strict: bool = True) -> QueryBatch:
    """Rays from the nearest origin to each query point with normalized k-NN patches.

    Queries coincident with their origin raise :class:`DegenerateRayError`
    when ``strict``; otherwise they are dropped and counted in ``skipped``.
    """
    pts = as_points(cloud)
    qp = np.ascontiguousarray(query_points, dtype=np.float64).reshape(-1, 3)
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    if len(origins) == 0:
        raise SizeError("no ray origins")
    index = index if index is not None else KNNIndex(pts)
    oi, depth = KNNIndex(origins).nearest(qp)
    o = origins[oi]
    good = depth > 0
    if strict and not good.all():
        raise DegenerateRayError(f"query point {int(np.flatnonzero(~good)[0])} coincides with its origin")
    qp, o, depth = qp[good], o[good], depth[good]
    direction = (qp - o) / depth[:, None]
    nbr, _ = index.query(qp, k, exclude_self=exclude_self)
    rel = pts[nbr] - o[:, None, :]
    scale = point_distances(rel, np.zeros(3)).max(axis=1)
    patches = rel / scale[:, None, None]
    return QueryBatch(patches, direction, scale, o, qp,
                      skipped={"coincident": int((~good).sum())})


def build_query_sample(cloud, query_point, origins, k: int = 16,
                       exclude_self: bool = False) -> tuple[Ray, Patch]:
    b = build_query_batch(cloud, query_point, origins, k, exclude_self)
    return (Ray(b.origins[0], b.directions[0]),
            Patch(b.patches[0], float(b.scales[0]), b.origins[0]))


def random_rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_rotation(patch: Patch, direction, rng: np.random.Generator,
                    matrix: np.ndarray | None = None) -> tuple[Patch, np.ndarray]:
    """Rotate patch points and ray direction jointly about the ray origin."""
    R = random_rotation_matrix(rng) if matrix is None else np.asarray(matrix, dtype=np.float64)
    return (Patch(patch.points @ R.T, patch.scale, patch.origin_world),
            np.asarray(direction, dtype=np.float64) @ R.T)


def rotate_batch(batch: QueryBatch, rng: np.random.Generator) -> QueryBatch:
    """Independent uniform rotation per sample (patch and direction jointly)."""
    R = Rotation.random(len(batch), random_state=rng).as_matrix()
    patches = np.einsum("qij,qkj->qki", R, batch.patches)
    dirs = np.einsum("qij,qj->qi", R, batch.directions)
    return QueryBatch(patches, dirs, batch.scales, batch.origins, batch.query_points,
                      batch.targets)


def normalize_unit_sphere(cloud) -> tuple[np.ndarray, np.ndarray, float]:
    """Center on the centroid and scale so the farthest point has norm 1."""
    pts = as_points(cloud)
    center = pts.mean(axis=0)
    rel = pts - center
    radius = float(point_distances(rel, np.zeros(3)).max())
    if radius == 0:
        return rel, center, 1.0
    return rel / radius, center, radius


def gaussian_perturb(cloud, gamma: float, rng: np.random.Generator) -> PointCloud:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    src = cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)
    if gamma == 0:
        return PointCloud(src.points.copy(), src.sensor, src.tag)
    noise = rng.standard_normal(src.points.shape)
    return PointCloud(src.points + gamma * noise, src.sensor, src.tag)
