"""Command-line entry point: train, upsample, eval, querygen, march-debug."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("rayup")


def _vec3(text: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return np.array(vals)


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .config import load_run_config
    from .fileio import read_cloud
    from .training import prepare_samples, train

    cfg, paths = load_run_config(args.config)
    input_path = args.input or paths.get("input")
    gt_path = args.gt or paths.get("gt")
    out = Path(args.out or paths.get("out") or "")
    if not input_path or not str(out):
        raise ValueError("input and output paths are required")
    cloud = read_cloud(input_path)
    dense = None
    if cfg.mode == "supervised":
        if not gt_path:
            raise ValueError("supervised mode requires --gt")
        dense = [read_cloud(gt_path).points]
    samples = prepare_samples(cfg, [cloud.points], dense)
    log.info("%d training samples (skipped: %s)", len(samples), samples.skipped)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, samples, log_path=out / "train_log.csv", checkpoint_dir=out)
    save_checkpoint(out / "final.ckpt", result.params, cfg.net, optimizer=result.optimizer,
                    seed=cfg.seed, epoch=result.history[-1]["epoch"])
    if result.diverged:
        log.error("training diverged; final.ckpt holds the last finite weights")
        return 1
    return 0


def cmd_upsample(args) -> int:
    from .checkpoint import load_checkpoint
    from .fileio import read_cloud, write_cloud
    from .pipeline import upsample

    ck = load_checkpoint(args.ckpt)
    cloud = read_cloud(args.input)
    sensor = args.sensor if args.sensor is not None else cloud.sensor
    res = upsample(cloud.points, ck.params, ck.net, args.rate, args.mode, sensor, seed=args.seed)
    write_cloud(args.out, res.points)
    log.info("wrote %d points (%d emitted, %d rejected)", len(res.points), len(res.emitted),
             res.rejected)
    return 0


def cmd_eval(args) -> int:
    from .fileio import read_cloud, read_off
    from .metrics import evaluate

    pred = read_cloud(args.pred).points
    gt = read_cloud(args.gt).points
    mesh = read_off(args.mesh) if args.mesh else None
    rep = evaluate(pred, gt, mesh)
    with open(args.report, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cd_1e-3", "hd_1e-3", "p2f_1e-3", "n_pred", "n_gt"])
        w.writerow([repr(rep.cd), repr(rep.hd), "" if rep.p2f is None else repr(rep.p2f),
                    rep.n_pred, rep.n_gt])
    print(f"CD {rep.cd:.4f}  HD {rep.hd:.4f}" + ("" if rep.p2f is None else f"  P2F {rep.p2f:.4f}")
          + "  (x1e-3)")
    return 0


def cmd_querygen(args) -> int:
    from .fileio import read_cloud, write_cloud
    from .querygen import gen_queries_realscan, gen_queries_synthetic

    cloud = read_cloud(args.input)
    if args.mode == "synthetic":
        plan = gen_queries_synthetic(cloud.points, args.rate)
    else:
        sensor = args.sensor if args.sensor is not None else cloud.sensor
        plan = gen_queries_realscan(cloud.points, sensor, args.rate)
    write_cloud(args.out, plan.query_points)
    log.info("wrote %d query points", len(plan))
    return 0


TRACE_COLUMNS = ["step", "origin_x", "origin_y", "origin_z", "nearest_x", "nearest_y",
                 "nearest_z", "t_m", "cum_depth", "eps", "depth", "world_x", "world_y", "world_z"]


def march_debug_rows(params, net, cloud_points, query, seed: int = 0) -> list[list]:
    """One row per marching step plus a final offset row, in world coordinates."""
    from .autodiff import no_grad
    from .geometry import build_query_batch, sample_ray_origins
    from .network import march
    from .pipeline import inference_origin_count

    rng = np.random.default_rng(seed)
    origins = sample_ray_origins(cloud_points, inference_origin_count(len(cloud_points), net.k),
                                 rng, net.k)
    b = build_query_batch(cloud_points, query, origins, net.k)
    with no_grad():
        tr = march(params, b.patches, b.directions, net.march_steps, net.max_depth)
    s, o_w, d = float(b.scales[0]), b.origins[0], b.directions[0]
    rows = []
    for m in range(tr.steps):
        o = tr.origins[m].data[0]
        xyz = tr.nearest[m].data[0]
        w = o_w + s * (o + xyz)
        rows.append([m + 1, *(o_w + s * o), *xyz, tr.dists[m].data[0, 0], tr.cum_depths[m][0],
                     "", "", *w])
    final_o = tr.cum_depth.data[0, 0] * d
    depth = tr.depth.data[0, 0]
    rows.append(["offset", *(o_w + s * final_o), "", "", "", "", tr.cum_depth.data[0, 0],
                 tr.eps.data[0, 0], depth, *(o_w + s * depth * d)])
    return rows


def cmd_march_debug(args) -> int:
    from .checkpoint import load_checkpoint
    from .fileio import read_cloud

    ck = load_checkpoint(args.ckpt)
    cloud = read_cloud(args.input)
    rows = march_debug_rows(ck.params, ck.net, cloud.points, args.query, args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        w.writerows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rayup", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a depth predictor")
    t.add_argument("--config", required=True)
    t.add_argument("--input")
    t.add_argument("--gt")
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.set_defaults(func=cmd_train)

    u = sub.add_parser("upsample", help="upsample a point cloud")
    u.add_argument("--ckpt", required=True)
    u.add_argument("--input", required=True)
    u.add_argument("--rate", type=float, required=True)
    u.add_argument("--mode", choices=("synthetic", "realscan"), default="synthetic")
    u.add_argument("--sensor", type=_vec3)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", required=True)
    u.set_defaults(func=cmd_upsample)

    e = sub.add_parser("eval", help="CD / HD / P2F against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mesh")
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    q = sub.add_parser("querygen", help="write the raw query plan")
    q.add_argument("--input", required=True)
    q.add_argument("--rate", type=float, required=True)
    q.add_argument("--mode", choices=("synthetic", "realscan"), default="synthetic")
    q.add_argument("--sensor", type=_vec3)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_querygen)

    m = sub.add_parser("march-debug", help="dump the per-step march trace of one query")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--input", required=True)
    m.add_argument("--query", type=_vec3, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_march_debug)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # runtime failure -> exit code 1
        print(f"rayup {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
