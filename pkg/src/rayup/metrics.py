from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import KNNIndex, as_points


@dataclass
class EvalReport:
    """Metric values in units of 1e-3 (i.e. raw distance * 1000)."""

    cd: float
    hd: float
    p2f: float | None
    n_pred: int
    n_gt: int
    runtime: float = 0.0


def _directed(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, d = KNNIndex(b).nearest(a)
    return d


def _check(a, b):
    a, b = as_points(a), as_points(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("point sets must be non-empty")
    return a, b


def chamfer(a, b) -> float:
    """Symmetric mean nearest-neighbour distance (unsquared), halved."""
    a, b = _check(a, b)
    return 0.5 * (float(_directed(a, b).mean()) + float(_directed(b, a).mean()))


def hausdorff(a, b) -> float:
    a, b = _check(a, b)
    return max(float(_directed(a, b).max()), float(_directed(b, a).max()))


def closest_point_on_triangles(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Closest points on triangles ``tri`` (F, 3, 3) to points ``p`` (N, 3); returns (N, F, 3).

    Region-based case analysis over the vertex, edge and face Voronoi regions.
    """
    a = tri[None, :, 0, :]
    b = tri[None, :, 1, :]
    c = tri[None, :, 2, :]
    P = p[:, None, :]
    ab, ac, ap = b - a, c - a, P - a
    dot = lambda u, v: (u * v).sum(-1)
    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp = P - b
    d3, d4 = dot(ab, bp), dot(ac, bp)
    cp = P - c
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    shape = np.broadcast_shapes(d1.shape)
    out = np.empty(shape + (3,))
    done = np.zeros(shape, dtype=bool)

    def assign(mask, val):
        m = mask & ~done
        out[m] = np.broadcast_to(val, shape + (3,))[m]
        done[:] |= m

    assign((d1 <= 0) & (d2 <= 0), a)
    assign((d3 >= 0) & (d4 <= d3), b)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[..., None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[..., None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[..., None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(shape, dtype=bool), a + v[..., None] * ab + w[..., None] * ac)
    return out


def point_to_mesh_distances(points, vertices, faces, chunk: int = 2_000_000) -> np.ndarray:
    pts = as_points(points)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        raise ValueError("empty mesh")
    tri = np.asarray(vertices, dtype=np.float64)[faces]
    out = np.full(len(pts), np.inf)
    fstep = max(1, min(len(tri), chunk // max(1, min(len(pts), 1024))))
    for s in range(0, len(pts), 1024):
        sub = pts[s:s + 1024]
        best = np.full(len(sub), np.inf)
        for f in range(0, len(tri), fstep):
            cp = closest_point_on_triangles(sub, tri[f:f + fstep])
            d = np.sqrt(((cp - sub[:, None, :]) ** 2).sum(-1))
            best = np.minimum(best, d.min(axis=1))
        out[s:s + 1024] = best
    return out


def p2f(points, vertices, faces) -> float:
    """Mean point-to-surface distance against a triangle mesh."""
    return float(point_to_mesh_distances(points, vertices, faces).mean())


def evaluate(pred, gt, mesh: tuple[np.ndarray, np.ndarray] | None = None) -> EvalReport:
    import time

    t0 = time.perf_counter()
    cd = chamfer(pred, gt)
    hd = hausdorff(pred, gt)
    pf = p2f(pred, *mesh) if mesh is not None else None
    return EvalReport(cd * 1e3, hd * 1e3, None if pf is None else pf * 1e3,
                      len(as_points(pred)), len(as_points(gt)), time.perf_counter() - t0)
