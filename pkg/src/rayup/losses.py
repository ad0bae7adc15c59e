"""Training objectives over a batch of march traces."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .network import MarchTrace


@dataclass(frozen=True)
class LossWeights:
    w_ms: float = 0.1
    w_tan: float = 0.1

    def __post_init__(self):
        for name in ("w_ms", "w_tan"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


SUPERVISED_WEIGHTS = LossWeights(0.1, 0.1)
SELFSUP_WEIGHTS = LossWeights(0.5, 0.5)


@dataclass
class LossBreakdown:
    l_mae: Tensor
    l_rmse: Tensor
    l_ms: Tensor
    l_tan: Tensor
    l_eps: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item()
                for k in ("l_mae", "l_rmse", "l_ms", "l_tan", "l_eps", "total")}


def projections(origin, normal, patch: np.ndarray) -> tuple[Tensor, Tensor]:
    """Signed distances of patch points to the plane through ``origin`` with unit ``normal``.

    Shapes: origin, normal (B, 3); patch (B, k, 3). Returns proj (B, k) and
    the absolute mean projection (B, 1).
    """
    origin, normal = ad.as_tensor(origin), ad.as_tensor(normal)
    B = patch.shape[0]
    rel = ad.as_tensor(patch) - origin.reshape(B, 1, 3)
    proj = ad.tsum(rel * normal.reshape(B, 1, 3), axis=-1)
    mu = ad.tabs(ad.mean(proj, axis=-1, keepdims=True))
    return proj, mu


def tangent_weights(origin, patch: np.ndarray) -> Tensor:
    """Gaussian falloff on squared distance, bandwidth tied to the mean squared distance."""
    origin = ad.as_tensor(origin)
    B = patch.shape[0]
    rel = ad.as_tensor(patch) - origin.reshape(B, 1, 3)
    d2 = ad.tsum(ad.square(rel), axis=-1)
    return ad.exp(-d2 / (2.0 * ad.mean(d2, axis=-1, keepdims=True)))


def _step_mask(trace: MarchTrace, m: int) -> np.ndarray:
    return trace.normal_valid[m].astype(np.float64)


def loss_tan(trace: MarchTrace) -> Tensor:
    """Per-sample weighted tangent-plane dispersion, averaged over steps; (B,)."""
    B = trace.patch.shape[0]
    M = trace.steps
    if M == 0:
        return Tensor(np.zeros(B))
    acc = None
    for m in range(M):
        proj, mu = projections(trace.origins[m], trace.normals[m], trace.patch)
        w = tangent_weights(trace.origins[m], trace.patch)
        num = ad.tsum(ad.square((proj - mu) * w), axis=-1)
        step = ad.sqrt(num / ad.tsum(w, axis=-1)) * _step_mask(trace, m)
        acc = step if acc is None else acc + step
    return acc * (1.0 / M)


def nearest_patch_index(origin: np.ndarray, patch: np.ndarray) -> np.ndarray:
    """Index of the patch point closest to each origin; ties go to the lower index."""
    rel = patch - origin[:, None, :]
    d = np.sqrt(rel[..., 0] ** 2 + rel[..., 1] ** 2 + rel[..., 2] ** 2)
    return np.argmin(d, axis=-1)


def loss_ms(trace: MarchTrace) -> Tensor:
    """Per-sample mean |t_m - proj at the nearest patch point|; (B,)."""
    B = trace.patch.shape[0]
    M = trace.steps
    if M == 0:
        return Tensor(np.zeros(B))
    acc = None
    for m in range(M):
        proj, _ = projections(trace.origins[m], trace.normals[m], trace.patch)
        idx = nearest_patch_index(trace.origins[m].data, trace.patch)
        near = ad.gather(proj, idx[:, None], axis=1)
        step = ad.tabs(trace.dists[m] - near).reshape(B) * _step_mask(trace, m)
        acc = step if acc is None else acc + step
    return acc * (1.0 / M)


def loss_eps(eps) -> Tensor:
    """Penalty on negative offsets: max(0, -eps)."""
    return ad.maximum0(-ad.as_tensor(eps))


def loss_total(trace: MarchTrace, targets, weights: LossWeights) -> LossBreakdown:
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    B = len(targets)
    if B == 0:
        raise ValueError("empty batch")
    err = trace.depth.reshape(B) - targets
    l_mae = ad.mean(ad.tabs(err))
    l_rmse = ad.sqrt(ad.mean(ad.square(err)))
    l_ms = ad.mean(loss_ms(trace))
    l_tan = ad.mean(loss_tan(trace))
    l_eps = ad.mean(loss_eps(trace.eps.reshape(B)))
    total = l_mae + l_rmse + weights.w_ms * l_ms + weights.w_tan * l_tan + l_eps
    return LossBreakdown(l_mae, l_rmse, l_ms, l_tan, l_eps, total)
