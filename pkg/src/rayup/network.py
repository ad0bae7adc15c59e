"""Depth predictor: patch encoder, cross-attention at the marching origin,
nearest-point head, offset head and the sphere-tracing loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


@dataclass(frozen=True)
class NetConfig:
    k: int = 16
    c: int = 32
    march_steps: int = 6
    hidden: int = 32
    hidden_layers: int = 3
    max_depth: float = 2.0

    def __post_init__(self):
        if self.k < 4:
            raise ValueError("k must be >= 4")
        if self.c < 8:
            raise ValueError("c must be >= 8")
        if self.march_steps < 0:
            raise ValueError("march_steps must be >= 0")
        if self.hidden < 1 or self.hidden_layers < 1:
            raise ValueError("hidden sizes must be positive")


def layer_shapes(config: NetConfig) -> list[tuple[str, int, int]]:
    """(prefix, fan_in, fan_out) for every linear layer, in parameter order."""
    c, h = config.c, config.hidden
    shapes = [
        ("mlp_f.layer1", 3, c),
        ("mlp_f.layer2", c, c),
        ("self_attn.query", c, c),
        ("self_attn.key", c, c),
        ("self_attn.value", c, c),
        ("self_attn.pos.layer1", 3, c),
        ("self_attn.pos.layer2", c, c),
        ("self_attn.gamma.layer1", c, c),
        ("self_attn.gamma.layer2", c, c),
        ("cross_attn.key", c, c),
        ("cross_attn.value", c, c),
        ("cross_attn.pos", 3, c),
        ("cross_attn.gamma", c, c),
    ]
    for head, fan_in, out in (("mlp_i", c, 3), ("mlp_eps", c + 3, 1)):
        prev = fan_in
        for i in range(config.hidden_layers):
            shapes.append((f"{head}.layer{i + 1}", prev, h))
            prev = h
        shapes.append((f"{head}.out", prev, out))
    return shapes


def parameter_count(config: NetConfig) -> int:
    return sum(i * o + o for _, i, o in layer_shapes(config))


def init_params(config: NetConfig, seed: int = 0) -> ParamStore:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for prefix, fan_in, fan_out in layer_shapes(config):
        bound = np.sqrt(1.0 / fan_in)
        store[f"{prefix}.weight"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        store[f"{prefix}.bias"] = rng.uniform(-bound, bound, size=(fan_out,))
    return store


def linear(params: ParamStore, prefix: str, x) -> Tensor:
    return ad.matmul(x, params[f"{prefix}.weight"]) + params[f"{prefix}.bias"]


def mlp_f(params: ParamStore, xyz) -> Tensor:
    """Shared per-point lift from 3D coordinates to c features."""
    return linear(params, "mlp_f.layer2", ad.relu(linear(params, "mlp_f.layer1", xyz)))


def _head(params: ParamStore, name: str, x) -> Tensor:
    i = 1
    while f"{name}.layer{i}.weight" in params:
        x = ad.relu(linear(params, f"{name}.layer{i}", x))
        i += 1
    return linear(params, f"{name}.out", x)


def encode_patch(params: ParamStore, patch: np.ndarray) -> tuple[Tensor, np.ndarray]:
    """Vector self-attention over all k patch points, with a residual connection.

    ``patch`` is (B, k, 3). Returns features (B, k, c) and the attention
    weights (B, k, k, c), which sum to 1 over the attended axis.
    """
    P = np.asarray(patch, dtype=np.float64)
    B, k, _ = P.shape
    feats = mlp_f(params, P)
    q = linear(params, "self_attn.query", feats)
    key = linear(params, "self_attn.key", feats)
    val = linear(params, "self_attn.value", feats)
    rel = P[:, :, None, :] - P[:, None, :, :]
    pos = linear(params, "self_attn.pos.layer2",
                 ad.relu(linear(params, "self_attn.pos.layer1", rel)))
    c = feats.shape[-1]
    logits_in = q.reshape(B, k, 1, c) - key.reshape(B, 1, k, c) + pos
    logits = linear(params, "self_attn.gamma.layer2",
                    ad.relu(linear(params, "self_attn.gamma.layer1", logits_in)))
    w = ad.softmax(logits, axis=2)
    out = ad.tsum(w * (val.reshape(B, 1, k, c) + pos), axis=2)
    return feats + out, w.data


def cross_kv(params: ParamStore, feats: Tensor) -> tuple[Tensor, Tensor]:
    return linear(params, "cross_attn.key", feats), linear(params, "cross_attn.value", feats)


def cross_attend(params: ParamStore, feats: Tensor, patch: np.ndarray, origin,
                 kv: tuple[Tensor, Tensor] | None = None,
                 query_feat: Tensor | None = None) -> tuple[Tensor, np.ndarray]:
    """Attend from a marching origin (B, 3) to the encoded patch; returns (B, c)."""
    P = np.asarray(patch, dtype=np.float64)
    B, k, _ = P.shape
    origin = ad.as_tensor(origin)
    key, val = kv if kv is not None else cross_kv(params, feats)
    if query_feat is None:
        query_feat = mlp_f(params, origin)
    c = key.shape[-1]
    pos = linear(params, "cross_attn.pos", ad.as_tensor(P) - origin.reshape(B, 1, 3))
    logits = linear(params, "cross_attn.gamma", query_feat.reshape(B, 1, c) - key + pos)
    w = ad.softmax(logits, axis=1)
    return ad.tsum(w * (val + pos), axis=1), w.data


def udf_nearest(params: ParamStore, feat: Tensor) -> Tensor:
    """Implicit nearest surface point relative to the current origin, (B, 3)."""
    return _head(params, "mlp_i", feat)


def offset_head(params: ParamStore, feat: Tensor, direction) -> Tensor:
    """Final depth correction, (B, 1); no output activation."""
    return _head(params, "mlp_eps", ad.concat([feat, ad.as_tensor(direction)], axis=-1))


def canonical_order(patch: np.ndarray) -> np.ndarray:
    """Sort each patch lexicographically by (x, y, z) so point order cannot matter."""
    P = np.asarray(patch, dtype=np.float64)
    order = np.lexsort((P[..., 2], P[..., 1], P[..., 0]), axis=-1)
    return np.take_along_axis(P, order[..., None], axis=-2)


_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class MarchTrace:
    patch: np.ndarray                   # (B, k, 3) canonical order
    direction: np.ndarray               # (B, 3)
    origins: list[Tensor] = field(default_factory=list)      # o_m, (B, 3)
    nearest: list[Tensor] = field(default_factory=list)      # (x_m, y_m, z_m), (B, 3)
    dists: list[Tensor] = field(default_factory=list)        # t_m, (B, 1)
    normals: list[Tensor] = field(default_factory=list)      # n_m, (B, 3)
    normal_valid: list[np.ndarray] = field(default_factory=list)
    cum_depths: list[np.ndarray] = field(default_factory=list)
    cum_depth: Tensor | None = None     # (B, 1)
    eps: Tensor | None = None           # (B, 1)
    depth: Tensor | None = None         # (B, 1)
    truncated: np.ndarray | None = None

    @property
    def steps(self) -> int:
        return len(self.dists)


def march(params: ParamStore, patch, direction, steps: int,
          max_depth: float = 2.0, udf=None, canonical: bool = True) -> MarchTrace:
    """Sphere-trace ``steps`` times along ``direction`` from the patch origin.

    ``udf`` optionally replaces the learned nearest-point head with a callable
    ``udf(origins ndarray (B,3)) -> nearest offsets (B,3)``; used for oracle
    checks. A sample whose cumulative depth would exceed ``max_depth`` stops
    advancing and is flagged in ``truncated``.
    """
    P = np.asarray(patch, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    if P.ndim == 2:
        P, d = P[None], d.reshape(1, 3)
    if canonical:
        P = canonical_order(P)
    B = P.shape[0]
    trace = MarchTrace(P, d)

    feats = None
    kv = None
    if params is not None:
        feats, _ = encode_patch(params, P)
        kv = cross_kv(params, feats)

    origin = Tensor(np.zeros((B, 3)))
    cum = Tensor(np.zeros((B, 1)))
    active = np.ones(B, dtype=bool)
    for _ in range(steps):
        if udf is None:
            feat, _ = cross_attend(params, feats, P, origin, kv)
            xyz = udf_nearest(params, feat)
        else:
            xyz = Tensor(udf(origin.data))
        t = ad.norm2(xyz, keepdims=True)
        valid = t.data[:, 0] > 0
        safe_t = ad.where(valid[:, None], t, 1.0)
        n = ad.where(valid[:, None], xyz / safe_t, _UP)
        ok = active & (cum.data[:, 0] + t.data[:, 0] <= max_depth)
        ad.record_branch(ok)
        trace.origins.append(origin)
        trace.nearest.append(xyz)
        trace.dists.append(t)
        trace.normals.append(n)
        trace.normal_valid.append(valid)
        cum = cum + t * ok[:, None].astype(np.float64)
        trace.cum_depths.append(cum.data[:, 0].copy())
        active = ok
        origin = cum * d

    trace.cum_depth = cum
    trace.truncated = ~active
    if params is not None:
        feat, _ = cross_attend(params, feats, P, origin, kv)
        trace.eps = offset_head(params, feat, d)
    else:
        trace.eps = Tensor(np.zeros((B, 1)))
    trace.depth = cum + trace.eps
    return trace


def predict_depth(params: ParamStore, patches: np.ndarray, directions: np.ndarray,
                  steps: int, max_depth: float = 2.0, batch_size: int = 512) -> np.ndarray:
    """Forward-only normalized depths for a stack of samples."""
    out = np.empty(len(directions))
    with ad.no_grad():
        for s in range(0, len(directions), batch_size):
            tr = march(params, patches[s:s + batch_size], directions[s:s + batch_size],
                       steps, max_depth)
            out[s:s + batch_size] = tr.depth.data[:, 0]
    return out
