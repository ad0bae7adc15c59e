"""Rule-based generation of novel query points for upsampling."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import KNNIndex, SizeError, as_points, farthest_point_sampling, point_distances

log = logging.getLogger(__name__)

MIN_ANGLE = math.pi / 6
CANDIDATE_POOL = 32


class ConfigurationError(ValueError):
    pass


@dataclass
class QueryPlan:
    query_points: np.ndarray
    mode: str
    rate: float
    # (source index, neighbour index, fraction along the segment) per query point
    provenance: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.query_points)


def target_count(n_points: int, rate: float) -> int:
    return int(round(n_points * (rate - 1.0)))


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def hexagonal_neighbors(pts: np.ndarray, pool: int = CANDIDATE_POOL,
                        limit: int | None = 6) -> list[list[int]]:
    """Per point, neighbours accepted nearest-first whose direction is at least
    ``MIN_ANGLE`` away from every previously accepted neighbour."""
    pool = min(pool, len(pts) - 1)
    nbr, _ = KNNIndex(pts).query(pts, pool, exclude_self=True)
    cos_max = math.cos(MIN_ANGLE)
    accepted: list[list[int]] = []
    for i, row in enumerate(nbr):
        dirs = _unit(pts[row] - pts[i])
        keep: list[int] = []
        kept_dirs: list[np.ndarray] = []
        for j, u in zip(row, dirs):
            # angle >= pi/6  <=>  cos <= cos(pi/6)
            if all(float(u @ w) <= cos_max for w in kept_dirs):
                keep.append(int(j))
                kept_dirs.append(u)
                if limit is not None and len(keep) == limit:
                    break
        accepted.append(keep)
    return accepted


def _select_fps(points: np.ndarray, n: int) -> np.ndarray:
    return np.sort(farthest_point_sampling(points, n, 0))


def gen_queries_synthetic(cloud, rate: float) -> QueryPlan:
    """Mid-points between each point and its angularly separated nearest neighbours.

    Midpoints shared by both endpoints are kept once. The result is trimmed by
    FPS, or topped up with midpoints to further accepted neighbours, so that
    exactly ``round(|S| * (rate - 1))`` points are returned.
    """
    pts = as_points(cloud)
    if len(pts) < 8:
        raise SizeError("need at least 8 points")
    if rate <= 1:
        raise ValueError("rate must exceed 1")
    target = target_count(len(pts), rate)

    ranked = hexagonal_neighbors(pts, limit=None)
    short = sum(1 for r in ranked if len(r) < 6)
    if short:
        log.info("%d points have fewer than 6 acceptable neighbours", short)

    seen: set[tuple[int, int]] = set()
    primary: list[tuple[int, int]] = []
    extra_by_rank: dict[int, list[tuple[int, int]]] = {}
    for i, row in enumerate(ranked):
        for rank, j in enumerate(row):
            key = (min(i, j), max(i, j))
            if key in seen:
                continue
            seen.add(key)
            if rank < 6:
                primary.append((i, j))
            else:
                extra_by_rank.setdefault(rank, []).append((i, j))
    pairs = primary
    if len(pairs) < target:
        for rank in sorted(extra_by_rank):
            pairs = pairs + extra_by_rank[rank][: target - len(pairs)]
            if len(pairs) >= target:
                break
    if len(pairs) < target:
        # last resort: any remaining candidate pair, nearest rank first
        nbr, _ = KNNIndex(pts).query(pts, min(CANDIDATE_POOL, len(pts) - 1), exclude_self=True)
        for rank in range(nbr.shape[1]):
            for i in range(len(pts)):
                j = int(nbr[i, rank])
                key = (min(i, j), max(i, j))
                if key not in seen:
                    seen.add(key)
                    pairs.append((i, j))
                    if len(pairs) == target:
                        break
            if len(pairs) >= target:
                break
    if len(pairs) < target:
        raise ValueError(f"rate {rate} needs {target} midpoints; only {len(pairs)} available")

    pair_arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    mids = (pts[pair_arr[:, 0]] + pts[pair_arr[:, 1]]) / 2.0
    if len(mids) > target:
        sel = _select_fps(mids, target) if target > 0 else np.zeros(0, dtype=np.int64)
        mids, pair_arr = mids[sel], pair_arr[sel]
    prov = np.column_stack([pair_arr.astype(np.float64), np.full(len(pair_arr), 0.5)])
    return QueryPlan(mids, "synthetic", rate, prov)


def angular_neighbors(pts: np.ndarray, sensor: np.ndarray, n: int = 8) -> np.ndarray:
    """The ``n`` points subtending the smallest angle with each point as seen from the sensor."""
    rays = _unit(pts - sensor)
    # chord length on the unit sphere is monotone in the subtended angle
    idx, _ = KNNIndex(rays).query(rays, n + 1)
    out = np.empty((len(pts), n), dtype=np.int64)
    for i, row in enumerate(idx):
        row = row[row != i][:n]
        out[i] = row
    return out


def gen_queries_realscan(cloud, sensor, rate: float) -> QueryPlan:
    """Interpolants along long gaps between angularly adjacent scan points."""
    pts = as_points(cloud)
    if sensor is None:
        raise ConfigurationError("real-scan query generation requires a sensor position")
    sensor = np.asarray(sensor, dtype=np.float64).reshape(3)
    if len(pts) < 16:
        raise SizeError("need at least 16 points")
    if rate <= 1:
        raise ValueError("rate must exceed 1")
    target = target_count(len(pts), rate)

    nbr = angular_neighbors(pts, sensor, 8)
    src_list, dst_list = [], []
    for i, row in enumerate(nbr):
        d = point_distances(pts[row], pts[i])
        ds = np.sort(d)
        d_near, d_far = ds[1], ds[-2]
        keep = (d > d_near) & (d < d_far)
        src_list.append(np.full(int(keep.sum()), i))
        dst_list.append(row[keep])
    src = np.concatenate(src_list) if src_list else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst_list) if dst_list else np.zeros(0, dtype=np.int64)
    vec = pts[dst] - pts[src]
    sq = (vec * vec).sum(axis=1)
    if len(sq) == 0:
        log.warning("no candidate gaps; empty query plan")
        return QueryPlan(np.zeros((0, 3)), "realscan", rate, np.zeros((0, 3)))
    long = sq > np.median(sq)
    src, dst = src[long], dst[long]
    if len(src) == 0:
        log.warning("all gaps are at or below the median length; empty query plan")
        return QueryPlan(np.zeros((0, 3)), "realscan", rate, np.zeros((0, 3)))

    # the same gap reached from both ends is one gap
    key = np.sort(np.column_stack([src, dst]), axis=1)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    src, dst = src[first], dst[first]

    n_interp = math.ceil(len(src) / (len(pts) * rate))
    if n_interp * len(src) < target:
        n_interp = math.ceil(target / len(src))
    frac = np.arange(1, n_interp + 1) / (n_interp + 1)
    s_rep = np.repeat(src, n_interp)
    d_rep = np.repeat(dst, n_interp)
    f_rep = np.tile(frac, len(src))
    queries = pts[s_rep] + f_rep[:, None] * (pts[d_rep] - pts[s_rep])
    prov = np.column_stack([s_rep, d_rep, f_rep]).astype(np.float64)
    if len(queries) > target:
        sel = _select_fps(queries, target) if target > 0 else np.zeros(0, dtype=np.int64)
        queries, prov = queries[sel], prov[sel]
    return QueryPlan(queries, "realscan", rate, prov)


def outlier_mask(upsampled, input_cloud, k: int = 16, tau: float = 1.5) -> np.ndarray:
    """True for points within ``tau`` times the mean k-NN spacing of their nearest input point."""
    up = as_points(upsampled)
    src = as_points(input_cloud)
    if len(up) == 0 or len(src) == 0:
        raise SizeError("both clouds must be non-empty")
    index = KNNIndex(src)
    kk = min(k, len(src) - 1)
    if kk < 1:
        return np.ones(len(up), dtype=bool)
    _, spacing_d = index.query(src, kk, exclude_self=True)
    spacing = spacing_d.mean(axis=1)
    near, dist = index.nearest(up)
    return dist <= tau * spacing[near]


def reject_outliers(upsampled, input_cloud, k: int = 16, tau: float = 1.5) -> np.ndarray:
    up = as_points(upsampled)
    return up[outlier_mask(up, input_cloud, k, tau)]
