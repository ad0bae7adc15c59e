"""End-to-end upsampling: query plan, rays, depth prediction, placement."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore
from .geometry import QueryBatch, as_points, build_query_batch, sample_ray_origins
from .network import NetConfig, predict_depth
from .querygen import QueryPlan, gen_queries_realscan, gen_queries_synthetic, outlier_mask

log = logging.getLogger(__name__)


@dataclass
class UpsampleResult:
    points: np.ndarray          # input followed by emitted points
    emitted: np.ndarray
    plan: QueryPlan
    rejected: int
    skipped: int


def inference_origin_count(n_points: int, k: int = 16) -> int:
    return max(1, n_points // k)


def place_points(batch: QueryBatch, depths: np.ndarray) -> np.ndarray:
    """World positions ``o + (t * scale) * d`` for normalized depths ``t``."""
    return batch.origins + (depths * batch.scales)[:, None] * batch.directions


def upsample(cloud, params: ParamStore, net: NetConfig, rate: float, mode: str = "synthetic",
             sensor=None, seed: int = 0, origin_mode: str = "literal",
             n_origins: int | None = None) -> UpsampleResult:
    pts = as_points(cloud)
    if rate <= 1:
        raise ValueError("rate must exceed 1")
    if mode == "synthetic":
        plan = gen_queries_synthetic(pts, rate)
    elif mode == "realscan":
        plan = gen_queries_realscan(pts, sensor, rate)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if len(plan) == 0:
        log.warning("empty query plan; returning the input unchanged")
        return UpsampleResult(pts.copy(), np.zeros((0, 3)), plan, 0, 0)

    rng = np.random.default_rng(seed)
    count = n_origins if n_origins is not None else inference_origin_count(len(pts), net.k)
    origins = sample_ray_origins(pts, count, rng, net.k, origin_mode)
    batch = build_query_batch(pts, plan.query_points, origins, net.k, strict=False)
    depth = predict_depth(params, batch.patches, batch.directions, net.march_steps, net.max_depth)
    emitted = place_points(batch, depth)
    rejected = 0
    if mode == "realscan":
        keep = outlier_mask(emitted, pts)
        rejected = int((~keep).sum())
        emitted = emitted[keep]
    return UpsampleResult(np.vstack([pts, emitted]), emitted, plan, rejected,
                          batch.skipped.get("coincident", 0))
