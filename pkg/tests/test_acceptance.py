"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line; ``conftest.py`` prints them at the end
of the session. ``python3 tests/test_acceptance.py`` runs them standalone.
"""
import csv
import math
import time

import numpy as np
import pytest

from rayup.autodiff import Tensor, grad_check
from rayup.cli import main
from rayup.fileio import write_xyz
from rayup.geometry import build_query_batch
from rayup.losses import (
    SELFSUP_WEIGHTS,
    SUPERVISED_WEIGHTS,
    loss_eps,
    loss_ms,
    loss_tan,
    loss_total,
    nearest_patch_index,
    projections,
)
from rayup.metrics import chamfer, hausdorff, p2f
from rayup.network import MarchTrace, NetConfig, init_params, march, predict_depth
from rayup.querygen import (
    MIN_ANGLE,
    gen_queries_realscan,
    gen_queries_synthetic,
    hexagonal_neighbors,
)
from rayup.shapes import sample_sphere, sample_torus, uv_sphere_mesh
from rayup.training import TrainConfig, prepare_samples, train

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    RESULTS[n] = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    print(RESULTS[n])
    return ok


def unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_patch(rng, b, k=16):
    P = rng.normal(size=(b, k, 3))
    return P / np.linalg.norm(P, axis=2).max(axis=1)[:, None, None]


# 1 gradient integrity

def test_1_gradient_integrity():
    t0 = time.time()
    worst, checked, skipped, instances = 0.0, 0, 0, 0
    for i in range(51):
        steps = (0, 2, 6)[i % 3]
        rng = np.random.default_rng(100 + i)
        net = NetConfig(march_steps=steps)
        params = init_params(net, seed=i)
        P = random_patch(rng, 2)
        d = unit(rng.normal(size=(2, 3)))
        targets = rng.uniform(0.2, 1.0, 2)
        weights = SELFSUP_WEIGHTS if i % 2 else SUPERVISED_WEIGHTS

        def fn():
            return loss_total(march(params, P, d, steps), targets, weights).total

        rep = grad_check(fn, params, h=1e-5, coords_per_param=2, rng=rng)
        worst = max(worst, rep.worst)
        checked += rep.checked
        skipped += rep.skipped
        instances += 1
    dt = time.time() - t0
    ok = worst < 1e-4 and instances >= 50 and dt < 120
    assert record(1, ok, f"{instances} instances, M in {{0,2,6}}, {checked} coords "
                         f"({skipped} kink-skipped), max rel err {worst:.2e}, {dt:.0f}s")


# 2 sphere-tracing oracle on planes

def plane_cases(rng, betas, depths):
    """Random plane orientations; ray from the origin at incidence beta hitting at t."""
    b, t = np.meshgrid(np.radians(betas), depths, indexing="ij")
    b, t = b.ravel(), t.ravel()
    n = unit(rng.normal(size=(len(b), 3)))
    tang = unit(np.cross(n, rng.normal(size=(len(b), 3))))
    d = np.sin(b)[:, None] * n + np.cos(b)[:, None] * tang
    return b, t, n, d, t * np.sin(b)


def oracle_march(n, d, offset, steps=6):
    def udf(o):
        return (offset - (o * n).sum(axis=1))[:, None] * n
    return march(None, np.zeros((len(d), 16, 3)), d, steps, udf=udf)


def test_2_sphere_tracing_oracle():
    t0 = time.time()
    rng = np.random.default_rng(2)
    betas = np.arange(30, 91, 1.0)
    depths = np.linspace(0.05, 1.0, 20)
    b, t, n, d, off = plane_cases(rng, betas, depths)
    tr = oracle_march(n, d, off)
    err = np.abs(tr.cum_depth.data[:, 0] - t)
    over = max(float((c - t).max()) for c in tr.cum_depths)
    no_overshoot = over <= 1e-12 * t.max()   # rounding only
    fails = err >= 1e-3
    detail = (f"{len(t)} rays, beta 30-90 deg, t 0.05-1: max |t_M - t| = {err.max():.2e} "
              f"at beta {np.degrees(b[err.argmax()]):.0f} deg, t {t[err.argmax()]:.2f}; "
              f"{fails.mean():.1%} of rays miss 1e-3")
    if fails.any():
        detail += (f" (all at beta <= {np.degrees(b[fails].max()):.0f} deg; residual "
                   f"t(1 - sin beta)^6 needs beta > 43.2 deg at t = 1)")
    detail += f"; max overshoot {over:.1e}; {time.time() - t0:.2f}s"
    assert record(2, bool(not fails.any() and no_overshoot), detail)


# 3 metric oracles

def brute_directed(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min(axis=1)


def test_3_metric_oracles():
    t0 = time.time()
    rng = np.random.default_rng(3)
    exact = 0
    for _ in range(100):
        a = rng.normal(size=(int(rng.integers(1, 513)), 3))
        b = rng.normal(size=(int(rng.integers(1, 513)), 3))
        ab, ba = brute_directed(a, b), brute_directed(b, a)
        exact += chamfer(a, b) == 0.5 * (ab.mean() + ba.mean()) and hausdorff(a, b) == max(ab.max(), ba.max())
    verts, faces = uv_sphere_mesh(1.0, 12, 24)
    vz = p2f(verts, verts, faces)
    dt = time.time() - t0
    assert record(3, exact == 100 and vz == 0.0 and dt < 60,
                  f"{exact}/100 kd-tree pairs equal brute force exactly; P2F on vertices {vz}; {dt:.1f}s")


# 4 loss zero cases

def hand_trace(patch, origins, normals, dists, eps):
    B = patch.shape[0]
    tr = MarchTrace(patch, np.tile([0.0, 0.0, 1.0], (B, 1)))
    cum = np.zeros(B)
    for o, n, t in zip(origins, normals, dists):
        tr.origins.append(Tensor(o))
        tr.nearest.append(Tensor(n * t[:, None]))
        tr.dists.append(Tensor(t[:, None]))
        tr.normals.append(Tensor(n))
        tr.normal_valid.append(np.ones(B, dtype=bool))
        cum = cum + t
        tr.cum_depths.append(cum.copy())
    tr.cum_depth = Tensor(cum[:, None])
    tr.eps = Tensor(np.asarray(eps, dtype=float).reshape(B, 1))
    tr.depth = tr.cum_depth + tr.eps
    return tr


def test_4_loss_zero_cases():
    rng = np.random.default_rng(4)
    worst_tan, worst_ms, worst_eps, cases = 0.0, 0.0, 0.0, 0
    for _ in range(500):
        B, M, k = 4, int(rng.integers(1, 7)), 16
        # coplanar: patch and march origins in a random plane, normal = plane normal
        nrm = unit(rng.normal(size=(B, 3)))
        u = unit(np.cross(nrm, rng.normal(size=(B, 3))))
        v = np.cross(nrm, u)
        c = rng.normal(size=(B, 2, k))
        patch = c[:, :1].transpose(0, 2, 1) * u[:, None] + c[:, 1:].transpose(0, 2, 1) * v[:, None]
        origins = [rng.normal(size=(B, 1)) * u + rng.normal(size=(B, 1)) * v for _ in range(M)]
        sign = np.where(rng.random((B, 1)) < 0.5, -1.0, 1.0)
        tr = hand_trace(patch, origins, [nrm * sign] * M, [np.abs(rng.normal(size=B))] * M,
                        np.zeros(B))
        worst_tan = max(worst_tan, float(loss_tan(tr).data.max()))

        # exact per-step projections: t_m is the projection at the nearest patch point
        patch = rng.normal(size=(B, k, 3))
        origins = [rng.normal(size=(B, 3)) for _ in range(M)]
        normals, dists = [], []
        for o in origins:
            n = unit(rng.normal(size=(B, 3)))
            proj, _ = projections(o, n, patch)
            near = proj.data[np.arange(B), nearest_patch_index(o, patch)]
            n = n * np.where(near < 0, -1.0, 1.0)[:, None]
            proj, _ = projections(o, n, patch)
            normals.append(n)
            dists.append(proj.data[np.arange(B), nearest_patch_index(o, patch)])
        tr = hand_trace(patch, origins, normals, dists, np.zeros(B))
        worst_ms = max(worst_ms, float(loss_ms(tr).data.max()))

        eps = np.abs(rng.normal(size=B)) * rng.choice([0.0, 1e-300, 1.0, 1e6], size=B)
        worst_eps = max(worst_eps, float(loss_eps(eps).data.max()))
        cases += 1
    ok = worst_tan < 1e-12 and worst_ms == 0.0 and worst_eps == 0.0
    assert record(4, ok, f"{cases} batches: coplanar L_tan max {worst_tan:.1e}, "
                         f"exact projections L_ms max {worst_ms}, eps >= 0 L_eps max {worst_eps}")


# 5 query generation contracts

def staggered_rings(n_az=180, gap=1.2, radius=10.0):
    step = 2 * np.pi / n_az
    pts = []
    for r in range(2):
        az = (np.arange(n_az) + 0.5 * r) * step
        el = (r - 0.5) * gap * step
        pts.append(np.c_[radius * np.cos(el) * np.cos(az), radius * np.cos(el) * np.sin(az),
                         np.full(n_az, radius * np.sin(el))])
    return np.vstack(pts)


def min_pair_angle(pts, acc):
    worst = math.pi
    for i, row in enumerate(acc):
        dirs = unit(pts[row] - pts[i])
        g = np.clip(dirs @ dirs.T, -1, 1)
        iu = np.triu_indices(len(row), 1)
        if len(iu[0]):
            worst = min(worst, float(np.arccos(g[iu]).min()))
    return worst


def test_5_querygen_contracts():
    angle_ok, count_ok, real_ok, det_ok = True, True, True, True
    worst = math.pi
    for seed, f in enumerate((sample_sphere, sample_torus)):
        pts = f(2048, np.random.default_rng(seed))
        worst = min(worst, min_pair_angle(pts, hexagonal_neighbors(pts)))
        for rate in (1.5, 2.0, 2.37, 4.0):
            plan = gen_queries_synthetic(pts, rate)
            count_ok &= len(plan) == round(2048 * (rate - 1))
            again = gen_queries_synthetic(pts, rate)
            det_ok &= plan.query_points.tobytes() == again.query_points.tobytes()
    angle_ok = worst >= MIN_ANGLE - 1e-12

    rng = np.random.default_rng(5)
    clean = staggered_rings()
    noisy = staggered_rings(n_az=120) * (1 + 0.01 * rng.standard_normal((240, 1)))
    n_real = 0
    for pts in (clean, noisy):
        for rate in (1.5, 2.0, 4.0):
            plan = gen_queries_realscan(pts, np.zeros(3), rate)
            again = gen_queries_realscan(pts, np.zeros(3), rate)
            det_ok &= plan.query_points.tobytes() == again.query_points.tobytes()
            s, t, fr = plan.provenance[:, 0].astype(int), plan.provenance[:, 1].astype(int), plan.provenance[:, 2]
            interp = pts[s] + fr[:, None] * (pts[t] - pts[s])
            real_ok &= bool(np.all((fr > 0) & (fr < 1)) and np.abs(interp - plan.query_points).max() < 1e-12)
            real_ok &= len(plan) > 0
            n_real += len(plan)
    ok = angle_ok and count_ok and real_ok and det_ok
    assert record(5, ok, f"min pairwise angle {math.degrees(worst):.2f} deg (>= 30); exact counts {count_ok}; "
                         f"{n_real} realscan queries strictly interior {real_ok}; deterministic {det_ok}")


# 6 desk-scale learning

@pytest.mark.slow
def test_6_desk_scale_learning():
    t0 = time.time()
    S = sample_sphere(2048, np.random.default_rng(0))
    runs = {}
    for steps in (0, 6):
        cfg = TrainConfig.preset("selfsup", march_steps=steps, seed=0)
        res = train(cfg, prepare_samples(cfg, [S]))
        runs[steps] = (res.history[0]["val_mae"], res.final_val_mae)
    ratios = {m: fin / init for m, (init, fin) in runs.items()}
    ok = max(ratios.values()) <= 0.6 and runs[6][1] <= runs[0][1]
    assert record(6, ok, f"sphere 2048, seed 0, 30 epochs: val MAE M=0 {runs[0][0]:.4f} -> {runs[0][1]:.4f}, "
                         f"M=6 {runs[6][0]:.4f} -> {runs[6][1]:.4f}; final/initial "
                         f"{ratios[0]:.3f}, {ratios[6]:.3f}; {time.time() - t0:.0f}s")


# 7 ablation direction at 16384 supervised queries

ABLATION_EPOCHS = 30


@pytest.mark.slow
def test_7_ablation_direction():
    t0 = time.time()
    final = {0: [], 6: []}
    for seed in (0, 1):
        rng = np.random.default_rng(seed)
        S = sample_sphere(2048, rng)
        G = sample_sphere(16384, rng)
        for steps in (0, 6):
            cfg = TrainConfig.preset("supervised", march_steps=steps, epochs=ABLATION_EPOCHS, seed=seed)
            final[steps].append(train(cfg, prepare_samples(cfg, [S], [G])).final_val_mae)
    m0, m6 = np.mean(final[0]), np.mean(final[6])
    assert record(7, bool(m6 < m0),
                  f"16384 queries, {ABLATION_EPOCHS} epochs, seeds 0,1: mean val MAE M=6 {m6:.4f} "
                  f"({', '.join(f'{v:.4f}' for v in final[6])}) vs M=0 {m0:.4f} "
                  f"({', '.join(f'{v:.4f}' for v in final[0])}); {time.time() - t0:.0f}s")


# 8 invariances

def dyadic(rng, shape, lo=-512, hi=512):
    return rng.integers(lo, hi, size=shape) / 256.0


def test_8_invariances():
    rng = np.random.default_rng(8)
    net = NetConfig()
    params = init_params(net, 0)
    pts = dyadic(rng, (300, 3))
    qs = dyadic(rng, (64, 3)) + 1 / 512
    origins = dyadic(rng, (8, 3)) + 1 / 1024

    def depths(p, q, o):
        b = build_query_batch(p, q, o)
        t = predict_depth(params, b.patches, b.directions, net.march_steps)
        return t, t * b.scales

    base, base_world = depths(pts, qs, origins)
    trans_ok = all(depths(pts + s, qs + s, origins + s)[0].tobytes() == base.tobytes()
                   for s in ([8.0, -4.0, 2.0], [0.5, 0.25, -16.0], [-3.125, 7.75, 0.375]))

    scale_ok = True
    for s in (0.25, 2.0, 4.0):
        t, world = depths(pts * s, qs * s, origins * s)
        scale_ok &= t.tobytes() == base.tobytes() and np.array_equal(world, s * base_world)
    _, world = depths(pts * 3.7, qs * 3.7, origins * 3.7)
    rel = float(np.abs(world / (3.7 * base_world) - 1).max())
    scale_ok &= rel < 1e-12

    perm = rng.permutation(len(pts))
    perm_ok = depths(pts[perm], qs, origins)[0].tobytes() == base.tobytes()
    b = build_query_batch(pts, qs, origins)
    kperm = rng.permutation(16)
    perm_ok &= (march(params, b.patches[:, kperm], b.directions, 6).depth.data.tobytes()
                == march(params, b.patches, b.directions, 6).depth.data.tobytes())
    assert record(8, trans_ok and scale_ok and perm_ok,
                  f"translation bit-identical {trans_ok}; scaling exact for powers of two and "
                  f"rel err {rel:.1e} at 3.7 {scale_ok}; cloud and patch permutation bit-identical {perm_ok}")


# 9 reproducibility

def run_once(root, cloud):
    root.mkdir()
    write_xyz(root / "in.xyz", cloud)
    (root / "run.cfg").write_text("mode = selfsup\nepochs = 2\nn_origins = 32\nseed = 9\n")
    assert main(["train", "--config", str(root / "run.cfg"), "--input", str(root / "in.xyz"),
                 "--out", str(root / "ck")]) == 0
    assert main(["upsample", "--ckpt", str(root / "ck" / "final.ckpt"), "--input",
                 str(root / "in.xyz"), "--rate", "4", "--out", str(root / "up.xyz")]) == 0
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.suffix != ".cfg"}


def test_9_reproducibility(tmp_path):
    cloud = sample_sphere(512, np.random.default_rng(9))
    a = run_once(tmp_path / "a", cloud)
    b = run_once(tmp_path / "b", cloud)
    kinds = {"ckpt": 0, "csv": 0, "xyz": 0}
    for name in a:
        kinds[name.rsplit(".", 1)[-1]] = kinds.get(name.rsplit(".", 1)[-1], 0) + 1
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    with open(tmp_path / "a" / "ck" / "train_log.csv") as fh:
        rows = len(list(csv.reader(fh))) - 1
    assert record(9, same and kinds["ckpt"] >= 3 and kinds["csv"] == 1,
                  f"{len(a)} files bit-identical across two runs {same} "
                  f"({kinds['ckpt']} checkpoints, log with {rows} rows, upsampled cloud)")


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                if name == "test_9_reproducibility":
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                pass
