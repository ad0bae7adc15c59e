"""Training-sample construction and the training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Adam, ParamStore
from .geometry import (
    QueryBatch,
    as_points,
    build_query_batch,
    rotate_batch,
    sample_ray_origins,
)
from .losses import LossWeights, loss_total
from .network import NetConfig, init_params, march, predict_depth

log = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "lr", "l_mae", "l_rmse", "l_ms", "l_tan", "l_eps", "total",
               "val_mae", "val_rmse"]


@dataclass
class TrainConfig:
    mode: str = "selfsup"
    epochs: int = 30
    lr: float = 0.005
    decay: float = 0.99
    w_ms: float = 0.5
    w_tan: float = 0.5
    n_origins: int = 128
    k: int = 16
    c: int = 32
    march_steps: int = 6
    max_depth: float = 2.0
    seed: int = 0
    val_fraction: float = 0.1
    batch_divisor: int = 64
    origin_mode: str = "literal"
    include_self: bool = False
    augment: bool = True

    def __post_init__(self):
        if self.mode not in ("supervised", "selfsup"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0 or not 0 < self.decay <= 1:
            raise ValueError("lr must be > 0 and decay in (0, 1]")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")
        if self.batch_divisor < 1 or self.n_origins < 1:
            raise ValueError("batch_divisor and n_origins must be >= 1")
        self.weights  # validates ranges
        self.net

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_ms, self.w_tan)

    @property
    def net(self) -> NetConfig:
        return NetConfig(k=self.k, c=self.c, march_steps=self.march_steps,
                         max_depth=self.max_depth)

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        presets = {
            "supervised": dict(mode="supervised", epochs=100, w_ms=0.1, w_tan=0.1),
            "selfsup": dict(mode="selfsup", epochs=30, w_ms=0.5, w_tan=0.5),
            "selfsup_dataset": dict(mode="selfsup", epochs=15, w_ms=0.5, w_tan=0.5),
        }
        return cls(**{**presets[name], **overrides})


def _finish(batch: QueryBatch, depth_world: np.ndarray) -> QueryBatch:
    targets = depth_world / batch.scales
    keep = targets <= 1.0
    out = batch.subset(keep)
    out.targets = targets[keep]
    out.skipped = {**batch.skipped, "out_of_range": int((~keep).sum())}
    return out


def make_queries_supervised(sparse, dense, origins, k: int = 16) -> QueryBatch:
    """Dense ground-truth points as queries; patches come from the sparse cloud."""
    b = build_query_batch(sparse, dense, origins, k, strict=False)
    depth = np.linalg.norm(b.query_points - b.origins, axis=1)
    return _finish(b, depth)


def make_queries_selfsup(sparse, origins, k: int = 16, include_self: bool = False) -> QueryBatch:
    """The sparse points themselves as queries, excluded from their own patch by default."""
    pts = as_points(sparse)
    if len(pts) < k + 1:
        raise ValueError(f"need at least k+1={k + 1} points")
    b = build_query_batch(pts, pts, origins, k, exclude_self=not include_self, strict=False)
    depth = np.linalg.norm(b.query_points - b.origins, axis=1)
    return _finish(b, depth)


def concat_batches(batches: list[QueryBatch]) -> QueryBatch:
    cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
    out = QueryBatch(cat("patches"), cat("directions"), cat("scales"), cat("origins"),
                     cat("query_points"), cat("targets"))
    skipped: dict[str, int] = {}
    for b in batches:
        for key, v in b.skipped.items():
            skipped[key] = skipped.get(key, 0) + v
    out.skipped = skipped
    return out


def prepare_samples(config: TrainConfig, clouds: list, dense: list | None = None,
                    rng: np.random.Generator | None = None) -> QueryBatch:
    """Origins and training queries for each input cloud (and dense ground truth if supervised)."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    out = []
    for i, cloud in enumerate(clouds):
        origins = sample_ray_origins(cloud, config.n_origins, rng, config.k, config.origin_mode)
        if config.mode == "supervised":
            if dense is None:
                raise ValueError("supervised mode needs dense ground truth")
            out.append(make_queries_supervised(cloud, dense[i], origins, config.k))
        else:
            out.append(make_queries_selfsup(cloud, origins, config.k, config.include_self))
    return concat_batches(out)


def depth_errors(params: ParamStore, batch: QueryBatch, steps: int,
                 max_depth: float = 2.0) -> tuple[float, float]:
    pred = predict_depth(params, batch.patches, batch.directions, steps, max_depth)
    err = pred - batch.targets
    return float(np.abs(err).mean()), float(np.sqrt((err * err).mean()))


@dataclass
class TrainResult:
    params: ParamStore
    optimizer: Adam
    history: list[dict] = field(default_factory=list)
    diverged: bool = False

    @property
    def final_val_mae(self) -> float:
        return self.history[-1]["val_mae"]


def split_samples(samples: QueryBatch, fraction: float, seed: int) -> tuple[QueryBatch, QueryBatch]:
    perm = np.random.default_rng(seed).permutation(len(samples))
    n_val = int(round(fraction * len(samples))) if fraction > 0 else 0
    if fraction > 0:
        n_val = max(1, n_val)
    return samples.subset(np.sort(perm[n_val:])), samples.subset(np.sort(perm[:n_val]))


def _run_epoch(params, opt, batch, config, rng, train: bool) -> dict[str, float]:
    n = len(batch)
    size = max(1, n // config.batch_divisor)
    order = rng.permutation(n) if train else np.arange(n)
    sums: dict[str, float] = {}
    for s in range(0, n, size):
        idx = order[s:s + size]
        tr = march(params, batch.patches[idx], batch.directions[idx], config.march_steps,
                   config.max_depth)
        lb = loss_total(tr, batch.targets[idx], config.weights)
        vals = lb.values()
        if not math.isfinite(vals["total"]):
            raise FloatingPointError("non-finite loss")
        if train:
            params.zero_grad()
            lb.total.backward()
            opt.step()
        for key, v in vals.items():
            sums[key] = sums.get(key, 0.0) + v * len(idx)
    return {key: v / n for key, v in sums.items()}


def train(config: TrainConfig, samples: QueryBatch, params: ParamStore | None = None,
          log_path: str | Path | None = None, checkpoint_dir: str | Path | None = None,
          validation: QueryBatch | None = None) -> TrainResult:
    """Adam over shuffled mini-batches of size ``len(train) // batch_divisor``.

    Unless ``validation`` is given, a fixed-seed ``val_fraction`` of ``samples``
    is held out. History row 0 holds the untrained model's losses.
    """
    from .checkpoint import save_checkpoint

    if len(samples) == 0:
        raise ValueError("no training samples")
    if validation is None:
        train_set, val_set = split_samples(samples, config.val_fraction, config.seed)
    else:
        train_set, val_set = samples, validation
    params = params if params is not None else init_params(config.net, config.seed)
    opt = Adam(params, lr=config.lr, decay=config.decay)
    rng = np.random.default_rng(config.seed + 1)
    result = TrainResult(params, opt)

    def val_metrics():
        if len(val_set) == 0:
            return float("nan"), float("nan")
        return depth_errors(params, val_set, config.march_steps, config.max_depth)

    from .autodiff import no_grad

    with no_grad():
        row0 = _run_epoch(params, opt, train_set, config, rng, train=False)
    result.history.append({"epoch": 0, "lr": opt.lr, **row0,
                           **dict(zip(("val_mae", "val_rmse"), val_metrics()))})
    good = params.state_dict()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        data = rotate_batch(train_set, rng) if config.augment else train_set
        lr_used = opt.lr
        try:
            row = _run_epoch(params, opt, data, config, rng, train=True)
        except FloatingPointError:
            log.error("loss diverged in epoch %d; restoring epoch %d weights", epoch, epoch - 1)
            params.load_state_dict(good)
            result.diverged = True
            break
        opt.epoch_decay()
        mae, rmse = val_metrics()
        result.history.append({"epoch": epoch, "lr": lr_used, **row,
                               "val_mae": mae, "val_rmse": rmse})
        log.info("epoch %d  total %.5f  val_mae %.5f", epoch, row["total"], mae)
        good = params.state_dict()
        if ckpt_dir is not None:
            save_checkpoint(ckpt_dir / f"epoch_{epoch:03d}.ckpt", params, config.net,
                            optimizer=opt, seed=config.seed, epoch=epoch)

    if log_path is not None:
        write_log(log_path, result.history)
    return result


def write_log(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])


def with_steps(config: TrainConfig, steps: int) -> TrainConfig:
    return replace(config, march_steps=steps)
