"""Versioned binary checkpoint container.

Layout: 8-byte magic, u32 format version, u64 header length, a UTF-8 JSON
header, then every array as contiguous little-endian float64 in header order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import Adam, ParamStore
from .network import NetConfig

MAGIC = b"RAYUPCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ParamStore
    net: NetConfig
    seed: int
    epoch: int
    optimizer: dict | None = None


def save_checkpoint(path, params: ParamStore, net: NetConfig, optimizer: Adam | None = None,
                    seed: int = 0, epoch: int = 0) -> None:
    arrays: list[tuple[str, np.ndarray]] = [(f"param/{k}", t.data) for k, t in params.items()]
    opt_meta = None
    if optimizer is not None:
        st = optimizer.state_dict()
        opt_meta = {"lr": st["lr"], "decay": st["decay"], "step_count": st["step_count"]}
        arrays += [(f"adam.m/{k}", v) for k, v in st["m"].items()]
        arrays += [(f"adam.v/{k}", v) for k, v in st["v"].items()]
    entries, offset = [], 0
    for name, arr in arrays:
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header = json.dumps({"net_config": asdict(net), "seed": seed, "epoch": epoch,
                         "optimizer": opt_meta, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 20
    if len(raw) < start + hlen or (len(raw) - start - hlen) % 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    try:
        header = json.loads(raw[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: corrupt header") from None
    body = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + n > body.size:
            raise CheckpointError(f"{path}: truncated data for {e['name']}")
        arrays[e["name"]] = body[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)

    params = ParamStore()
    for name, arr in arrays.items():
        if name.startswith("param/"):
            params[name[len("param/"):]] = arr
    opt = None
    if header["optimizer"] is not None:
        opt = dict(header["optimizer"])
        opt["m"] = {n[len("adam.m/"):]: a for n, a in arrays.items() if n.startswith("adam.m/")}
        opt["v"] = {n[len("adam.v/"):]: a for n, a in arrays.items() if n.startswith("adam.v/")}
    return Checkpoint(params, NetConfig(**header["net_config"]), int(header["seed"]),
                      int(header["epoch"]), opt)
