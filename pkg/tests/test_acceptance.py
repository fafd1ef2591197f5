"""Acceptance criteria 1-10.

Each test records a one-line PASS/FAIL verdict (printed in the terminal
summary) before asserting.  Criteria 5-7 share one set of trained desk-scale
networks, built once per session.
"""

import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from gradcheck import check_layer, check_network
from oracles import adadelta_first_step, boundary_distance_lower_bound
from voxdfm import dataset as ds
from voxdfm.gradcam import CamClass, grad_cam, gradcam_map, localization, trilinear_resample
from voxdfm.nn3d import (
    NORMAL_KERNELS,
    OCCUPANCY_KERNELS,
    AdadeltaState,
    BatchNorm3d,
    Conv3d,
    Dense,
    MaxPool3d,
    TrainConfig,
    adadelta_step,
    build_network,
    evaluate,
    train,
)
from voxdfm.solids import Block, Cylinder, Face, HoleSpec, LBlock, PartModel, Violation, dfm_classify, geometry_problems, tessellate
from voxdfm.voxelize import EncodingKind, GridSpec, grid_for_part, voxelize_analytic, voxelize_parity, voxelize_part_encodings

pytestmark = pytest.mark.slow

V = Violation
Z, X, Y = Face.ZPOS, Face.XNEG, Face.YPOS
CUBE = Block(5.0, 5.0, 5.0)
LB = LBlock((5.0, 5.0, 5.0), (2.5, 5.0, 2.5))
CYL = Cylinder(2.5, 5.0)


# ---------------------------------------------------------------------------
# 1. voxelizer oracle equivalence


def stratified_sample(n=50, seed=0):
    """Round-robin over corpus strata (training base / thin / representative / each
    non-representative family, split by label) with a seeded order inside each."""
    corpora = [ds.enumerate_training(), ds.enumerate_representative(), ds.enumerate_nonrepresentative()]
    strata: dict[tuple, list] = {}
    for corpus in corpora:
        for r in corpus.records:
            strata.setdefault((r.id[:5], r.label.manufacturable), []).append(r)
    rng = np.random.default_rng(seed)
    queues = [list(rng.permutation(len(v))) for v in strata.values()]
    groups = list(strata.values())
    picked = []
    while len(picked) < n:
        for group, q in zip(groups, queues):
            if q and len(picked) < n:
                picked.append(group[q.pop()])
    return picked


def test_criterion_1_voxelizer_oracle(record_criterion):
    sample = stratified_sample()
    worst, far_mismatch, elapsed = 1.0, 0, 0.0
    for r in sample:
        spec = grid_for_part(r.part, 64)
        t0 = time.perf_counter()
        par = voxelize_parity(tessellate(r.part), spec).data[0]
        ana = voxelize_analytic(r.part, spec).data[0]
        elapsed += time.perf_counter() - t0
        worst = min(worst, float((par == ana).mean()))
        far = boundary_distance_lower_bound(r.part, spec.center_points()) > spec.diagonal
        far_mismatch += int((par[far] != ana[far]).sum())
    kinds = {type(r.part.base).__name__ for r in sample}
    ok = worst >= 0.999 and far_mismatch == 0 and elapsed < 120 and len(sample) == 50
    record_criterion(1, ok, f"50 parts {sorted(kinds)}, worst agreement {worst:.5f}, "
                            f"far-voxel mismatches {far_mismatch}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. volume accuracy and single-part runtime


def test_criterion_2_volume_accuracy(record_criterion):
    part = PartModel("c2", CUBE, (HoleSpec(Face.ZPOS, 0.0, 0.0, 1.0, 2.5),))
    expected = (125.0 - math.pi * 0.25 * 2.5) / 125.0
    t0 = time.perf_counter()
    mesh = tessellate(part)
    exact_grid = voxelize_parity(mesh, GridSpec((0.0, 0.0, 0.0), 5.0 / 64, (64, 64, 64))).data
    elapsed = time.perf_counter() - t0
    padded = grid_for_part(part, 64)
    occ = voxelize_parity(mesh, padded).data
    frac_exact = float(exact_grid.mean())
    frac_padded = float(occ.sum()) * padded.spacing**3 / 125.0
    # the gate uses the grid whose cells tile the block exactly; the padded
    # training grid samples centers 1.5 cells in, losing about one layer per axis
    err = abs(frac_exact - expected) / expected
    ok = err <= 0.01 and elapsed < 5.0
    record_criterion(2, ok, f"fraction {frac_exact:.5f} vs {expected:.5f} (padded training grid "
                            f"{frac_padded:.5f}, not gated), "
                            f"rel err {err:.2e}, 64^3 in {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------------------
# 3. gradient correctness


def test_criterion_3_gradients(record_criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    results = {}
    for k, method in [(1, "direct"), (2, "direct"), (3, "direct"), (3, "fft"), (6, "fft"), (8, "fft")]:
        for relu in (False, True):
            layer = Conv3d(2, 3, k, relu=relu, method=method)
            layer.init(rng, np.float64)
            layer.params["bias"] = rng.standard_normal(3) * 0.1
            dims = tuple(rng.integers(8, 13, size=3))
            # a small step keeps most probes clear of rectifier switches over the large output
            results[f"conv k={k} {method} relu={relu}"] = check_layer(
                layer, rng.standard_normal((2, 2, *dims)), seed=k, step=1e-5 if relu else 1e-3)
    bn = BatchNorm3d(3)
    bn.init(rng, np.float64)
    bn.params["gamma"] = rng.uniform(0.5, 2.0, 3)
    bn.params["beta"] = rng.standard_normal(3)
    x = rng.standard_normal((3, 3, 8, 9, 10)) * 2 + 1
    results["batchnorm train"] = check_layer(bn, x, train=True, seed=11)
    results["batchnorm infer"] = check_layer(bn, x, train=False, seed=12)
    results["maxpool"] = check_layer(MaxPool3d(), rng.standard_normal((2, 3, 9, 10, 11)), seed=13)
    for relu in (True, False):
        dense = Dense(12, 5, relu=relu)
        dense.init(rng, np.float64)
        results[f"dense relu={relu}"] = check_layer(dense, rng.standard_normal((4, 12)), seed=14)
    layer_worst = max(r.worst for r in results.values())
    layers_ok = all(r.worst <= 1e-6 and r.skipped <= 0.1 * (r.checked + r.skipped) for r in results.values())

    net = build_network((3, 12, 12, 12), kernels=NORMAL_KERNELS, filters=(4, 6, 8), dense=16, seed=3,
                        dtype=np.float64)
    xs = rng.standard_normal((4, 3, 12, 12, 12))
    net_report = check_network(net, xs, np.array([1.0, 0.0, 1.0, 0.0]), samples=30)
    elapsed = time.perf_counter() - t0
    net_ok = net_report.worst <= 1e-5 and net_report.skipped <= 0.1 * (net_report.checked + net_report.skipped)
    ok = layers_ok and net_ok and elapsed < 300
    record_criterion(3, ok, f"worst layer rel err {layer_worst:.2e}, network {net_report.worst:.2e} "
                            f"({net_report.checked} checked, {net_report.skipped} skipped), {elapsed:.0f}s")
    assert ok, {**results, "network": net_report}


# ---------------------------------------------------------------------------
# 4. overfit sanity


def voxelize_records(records, kinds=tuple(EncodingKind), n=32):
    out = {k: [] for k in kinds}
    for r in records:
        grids = voxelize_part_encodings(r.part, grid_for_part(r.part, n), kinds)
        for k in kinds:
            out[k].append(grids[k].data)
    return {k: np.stack(v) for k, v in out.items()}


def labels(records):
    return np.array([r.label.manufacturable for r in records], dtype=np.float32)


def test_criterion_4_overfit(record_criterion):
    t0 = time.perf_counter()
    subset = ds.balanced_subset(ds.enumerate_training().records, 200, seed=4)
    x = voxelize_records(subset, (EncodingKind.COUPLED,))[EncodingKind.COUPLED]
    y = labels(subset)
    net = build_network(x.shape[1:], NORMAL_KERNELS, seed=0)
    # fitting the training set is the goal, so it doubles as the validation set
    cfg = TrainConfig(batch_size=16, max_epochs=50, patience=50, seed=0)
    result = train(net, (x, y), (x, y), cfg, lambda s: s.train_accuracy >= 0.99)
    elapsed = time.perf_counter() - t0
    best = max(s.train_accuracy for s in result.history)
    ok = best >= 0.99 and elapsed < 1800
    record_criterion(4, ok, f"train accuracy {best:.3f} by epoch {len(result.history)}, {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 5-7. desk-scale training shared by the generalization and explanation checks

DESK_TRAIN_SIZE = 1336  # balanced; 1002 train + 334 validation
DESK_SEEDS = (0, 1, 2)
DESK_MAX_EPOCHS = 30
DESK_PATIENCE = 10  # early-stopping patience of the original setup
ENCODINGS = (EncodingKind.OCCUPANCY, EncodingKind.FOUR_CHANNEL, EncodingKind.COUPLED)
CHUNK = 300


def _chunks(seq, n):
    for i in range(0, len(seq), n):
        yield seq[i:i + n]


@pytest.fixture(scope="session")
def desk_models():
    t0 = time.perf_counter()
    subset = ds.balanced_subset(ds.enumerate_training().records, DESK_TRAIN_SIZE, seed=0)
    tensors = voxelize_records(subset, ENCODINGS)
    y = labels(subset)
    nets, epochs = {}, {}
    for enc in ENCODINGS:
        kernels = OCCUPANCY_KERNELS if enc is EncodingKind.OCCUPANCY else NORMAL_KERNELS
        for seed in DESK_SEEDS:
            order = np.random.default_rng(seed).permutation(len(subset))
            tr, va = order[:1002], order[1002:]
            x = tensors[enc]
            net = build_network(x.shape[1:], kernels, seed=seed)
            cfg = TrainConfig(batch_size=16, max_epochs=DESK_MAX_EPOCHS, patience=DESK_PATIENCE, seed=seed,
                              track_train_accuracy=False)
            result = train(net, (x[tr], y[tr]), (x[va], y[va]), cfg)
            nets[enc, seed] = net
            epochs[enc, seed] = result.best_epoch
    del tensors

    # the representative corpus is voxelized in chunks to bound memory
    rep = ds.enumerate_representative().records
    correct = {key: 0 for key in nets}
    for chunk in _chunks(rep, CHUNK):
        xs = voxelize_records(chunk, ENCODINGS)
        yc = labels(chunk)
        for (enc, seed), net in nets.items():
            correct[enc, seed] += int(((net.predict(xs[enc]) >= 0.5) == (yc >= 0.5)).sum())
    accuracy = {key: c / len(rep) for key, c in correct.items()}
    return {
        "subset": subset,
        "nets": nets,
        "epochs": epochs,
        "accuracy": accuracy,
        "majority": max(labels(rep).mean(), 1 - labels(rep).mean()),
        "seconds": time.perf_counter() - t0,
    }


def test_criterion_5_generalization(desk_models, record_criterion):
    acc = desk_models["accuracy"]
    mean = {enc: float(np.mean([acc[enc, s] for s in DESK_SEEDS])) for enc in ENCODINGS}
    best_normal = max(mean[EncodingKind.FOUR_CHANNEL], mean[EncodingKind.COUPLED])
    ok = best_normal >= 0.70 and best_normal >= mean[EncodingKind.OCCUPANCY] - 0.02
    per_seed = {enc.value: [round(acc[enc, s], 4) for s in DESK_SEEDS] for enc in ENCODINGS}
    record_criterion(5, ok, "representative accuracy (mean of 3 seeds): "
                            + ", ".join(f"{enc.value} {mean[enc]:.4f}" for enc in ENCODINGS)
                            + f"; per seed {per_seed}; majority-class {desk_models['majority']:.4f}; "
                            f"best epochs {[desk_models['epochs'][k] for k in sorted(desk_models['epochs'], key=str)]}; "
                            f"{desk_models['seconds']:.0f}s")
    assert ok


def test_criterion_6_gradcam(desk_models, record_criterion):
    failures = []
    # unit fixtures
    a = np.arange(8.0).reshape(1, 2, 2, 2)
    w, cam = gradcam_map(a, np.ones_like(a))
    if not (w[0] == 1.0 and np.array_equal(cam, a[0])):
        failures.append("unit gradient")
    w, cam = gradcam_map(a, -np.ones_like(a))
    if not np.array_equal(cam, np.zeros_like(a[0])):
        failures.append("rectification")
    acts = np.array([[1.0, 0.0, 3.0, 1.0], [2.0, 1.0, -1.0, 1.0]]).reshape(2, 1, 1, 4)
    grads = np.array([[2.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0]]).reshape(2, 1, 1, 4)
    w, cam = gradcam_map(acts, grads)
    if not (np.array_equal(w, [0.5, -0.25]) and np.array_equal(cam.ravel(), [0.0, 0.0, 1.75, 0.25])):
        failures.append("two-map case")

    # non-negativity over the corpus inputs with a trained network, both classes
    net = desk_models["nets"][EncodingKind.COUPLED, 0]
    corpus = [*desk_models["subset"], *ds.enumerate_nonrepresentative().records,
              *ds.enumerate_representative().records]
    checked, minimum = 0, math.inf
    for chunk in _chunks(corpus, CHUNK):
        xs = voxelize_records(chunk, (EncodingKind.COUPLED,))[EncodingKind.COUPLED]
        for x in xs:
            for cls in CamClass:
                minimum = min(minimum, float(grad_cam(net, x, cls).values.min()))
                checked += 1
    if minimum < 0:
        failures.append(f"negative activation {minimum}")

    # ramps
    rng = np.random.default_rng(6)
    ramp_err = 0.0
    for _ in range(20):
        src = tuple(rng.integers(2, 9, size=3))
        dst = tuple(rng.integers(2, 40, size=3))
        coef = rng.standard_normal(4)
        axes = [np.linspace(0.0, 1.0, n) for n in src]
        out_axes = [np.linspace(0.0, 1.0, n) for n in dst]

        def ramp(ax):
            z, y, x = np.meshgrid(*ax, indexing="ij")
            return coef[0] + coef[1] * z + coef[2] * y + coef[3] * x

        ramp_err = max(ramp_err, float(np.abs(trilinear_resample(ramp(axes), dst) - ramp(out_axes)).max()))
    if ramp_err > 1e-6:
        failures.append(f"ramp error {ramp_err}")
    ok = not failures
    record_criterion(6, ok, f"fixtures exact, {checked} maps min {minimum:.3g}, ramp max err {ramp_err:.1e}"
                            + (f"; failures {failures}" if failures else ""))
    assert ok


LOCALIZATION_PARTS = 24


def _localization_scores(net, records):
    mass, volume = [], []
    for r in records:
        spec = grid_for_part(r.part, 32)
        x = voxelize_part_encodings(r.part, spec, (EncodingKind.COUPLED,))[EncodingKind.COUPLED].data
        cam = grad_cam(net, x, CamClass.NON_MANUFACTURABLE, target_dims=spec.shape)
        m, v = localization(r.part, spec, cam.values)
        mass.append(m)
        volume.append(v)
    return float(np.mean(mass)), float(np.mean(volume))


def _pick(records, n, seed):
    rng = np.random.default_rng(seed)
    return [records[i] for i in sorted(rng.choice(len(records), n, replace=False))]


def test_criterion_7_localization(desk_models, record_criterion):
    net = desk_models["nets"][EncodingKind.COUPLED, 0]
    used = {r.id for r in desk_models["subset"]}
    # held-out single-hole cube parts from the training distribution; with
    # d <= 1 the 2d neighborhood is a minority of the grid, so a ratio of 2 is reachable
    held_out = [r for r in ds.enumerate_training().records
                if r.id not in used and r.id.startswith("tr-") and not r.label.manufacturable]
    mean_mass, mean_vol = _localization_scores(net, _pick(held_out, LOCALIZATION_PARTS, 7))
    # representative parts (d >= 1.1) reported for reference only: their
    # neighborhoods cover over half the grid, which caps the ratio below 2
    rep = [r for r in ds.enumerate_representative().records if not r.label.manufacturable]
    rep_mass, rep_vol = _localization_scores(net, _pick(rep, LOCALIZATION_PARTS, 7))
    ok = mean_mass >= 2 * mean_vol
    record_criterion(7, ok, f"{LOCALIZATION_PARTS} held-out parts, mean mass fraction {mean_mass:.4f} vs "
                            f"volume fraction {mean_vol:.4f} (ratio {mean_mass / mean_vol:.2f}); "
                            f"representative parts {rep_mass:.4f} vs {rep_vol:.4f} "
                            f"(ratio {rep_mass / rep_vol:.2f}, not gated)")
    assert ok


# ---------------------------------------------------------------------------
# 8. optimizer fixture


def test_criterion_8_adadelta_first_step(record_criterion):
    p = np.array([0.0])
    state = AdadeltaState.for_params([p], 0.95, 1e-6)
    adadelta_step([p], [np.array([1.0])], state)
    expected = adadelta_first_step(1.0, 0.95, 1e-6)
    ok = abs(p[0] - (-4.4721e-3)) <= 1e-7 and abs(p[0] - expected) <= 1e-15
    record_criterion(8, ok, f"step {p[0]:.10f}, closed form {expected:.10f}")
    assert ok


# ---------------------------------------------------------------------------
# 9. determinism through the command line


DETERMINISM_CONFIG = {
    "grid": 8,
    "dataset": {"diameters": [0.5, 1.0], "depths": [1.0, 3.0, 5.0], "positions": [[0.0, 0.0], [1.5, 1.5]],
                "faces": ["+z", "-x"], "thin_section_webs": [0.25],
                "representative_diameters": [1.2], "representative_positions": [[0.0, 0.0]]},
    "network": {"filters": [2, 2, 2], "dense": 4},
    "train": {"max_epochs": 2, "patience": 2},
}


def _run_cli(workspace, *args, workers=1):
    env = dict(os.environ, OPENBLAS_NUM_THREADS="1", OMP_NUM_THREADS="1", MKL_NUM_THREADS="1")
    cfg = workspace.parent / "det.json"
    cmd = [sys.executable, "-m", "voxdfm.cli", *args, "--config", str(cfg), "--workspace", str(workspace),
           "--seed", "5", "--workers", str(workers)]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(tmp_path, record_criterion):
    (tmp_path / "det.json").write_text(json.dumps(DETERMINISM_CONFIG))
    runs = {}
    for name, workers in (("a", 1), ("b", 8)):
        ws = tmp_path / name
        snaps = {}
        _run_cli(ws, "generate")
        snaps["generate"] = _tree(ws)
        _run_cli(ws, "voxelize", "--split", "train", "--split", "val", "--split", "test_representative",
                 workers=workers)
        snaps["voxelize"] = _tree(ws)
        _run_cli(ws, "train")
        snaps["train"] = _tree(ws)
        rid = next(r.id for r in ds.read_manifest(ws / "manifest.txt")
                   if r.split is ds.Split.TEST_REPRESENTATIVE)
        _run_cli(ws, "explain", "--id", rid)
        snaps["explain"] = _tree(ws)
        runs[name] = snaps
    same = {stage: runs["a"][stage] == runs["b"][stage] for stage in runs["a"]}
    ok = all(same.values()) and len(runs["a"]["explain"]) > len(runs["a"]["train"])
    record_criterion(9, ok, "byte-identical across runs (voxelize with 1 vs 8 workers): "
                            + ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in same.items()))
    assert ok


# ---------------------------------------------------------------------------
# 10. rule table; every label below is worked out by hand from the rule limits


def _h(face, d, depth, u=0.0, v=0.0):
    return HoleSpec(face, u, v, d, depth)


OK = frozenset()
RB, RT, EP, TS, HS = (frozenset({v}) for v in (V.RATIO_BLIND, V.RATIO_THROUGH, V.EDGE_PROXIMITY,
                                                V.THIN_SECTION, V.HOLE_SPACING))

RULE_TABLE = [
    # blind depth-to-diameter ratio, limit 5 inclusive
    ("blind ratio 4", CUBE, [_h(Z, 0.5, 2.0)], OK),
    ("blind ratio 4.99", CUBE, [_h(Z, 0.5, 2.495)], OK),
    ("blind ratio exactly 5", CUBE, [_h(Z, 0.5, 2.5)], RB),
    ("blind ratio 5.01", CUBE, [_h(Z, 0.5, 2.505)], RB),
    ("blind ratio 5 small", CUBE, [_h(Z, 0.2, 1.0)], RB),
    ("blind ratio 5 mid", CUBE, [_h(Z, 0.3, 1.5)], RB),
    ("blind ratio 5 tiny", CUBE, [_h(Z, 0.1, 0.5)], RB),
    ("blind ratio 4.75", CUBE, [_h(Z, 0.4, 1.9)], OK),
    # through ratio, limit 10 inclusive
    ("through ratio exactly 10", CUBE, [_h(Z, 0.5, 5.0)], RT),
    ("through ratio 11.1", CUBE, [_h(Z, 0.45, 5.0)], RT),
    ("through ratio 9.09", CUBE, [_h(Z, 0.55, 5.0)], OK),
    ("through ratio 5", CUBE, [_h(Z, 1.0, 5.0)], OK),
    ("through plate ratio exactly 10", Block(5, 5, 2), [_h(Z, 0.2, 2.0)], RT),
    ("through plate ratio 8", Block(5, 5, 2), [_h(Z, 0.25, 2.0)], OK),
    ("overlong hole clipped to through", CUBE, [_h(Z, 0.5, 6.0)], RT),
    # wall clearance, limit d/2 exclusive
    ("wall exactly d/2", CUBE, [_h(Z, 0.5, 1.0, u=2.0)], OK),
    ("wall just under d/2", CUBE, [_h(Z, 0.5, 1.0, u=2.01)], EP),
    ("wall just over d/2", CUBE, [_h(Z, 0.5, 1.0, u=1.99)], OK),
    ("wall 0.05", CUBE, [_h(Z, 0.5, 1.0, u=2.2)], EP),
    ("wall exactly d/2 along v", CUBE, [_h(Z, 0.5, 1.0, v=-2.0)], OK),
    ("corner exactly d/2", CUBE, [_h(Z, 0.5, 1.0, u=2.0, v=2.0)], OK),
    ("large hole wall exactly d/2", CUBE, [_h(Z, 1.0, 1.0, u=1.5)], OK),
    ("large hole wall 0.4", CUBE, [_h(Z, 1.0, 1.0, u=1.6)], EP),
    ("side face wall 0.24", CUBE, [_h(X, 0.5, 1.0, u=-2.01)], EP),
    # web beyond a blind bottom, limit d/2 exclusive
    ("web exactly d/2", CUBE, [_h(Z, 1.0, 4.5)], OK),
    ("web 0.4", CUBE, [_h(Z, 1.0, 4.6)], TS),
    ("web 0.6", CUBE, [_h(Z, 1.0, 4.4)], OK),
    ("web 0.2 with ratio 9.6", CUBE, [_h(Z, 0.5, 4.8)], RB | TS),
    ("plate web exactly d/2", Block(5, 5, 1.5), [_h(Z, 1.0, 1.0)], OK),
    ("plate web 0.4", Block(5, 5, 1.5), [_h(Z, 1.0, 1.1)], TS),
    ("side plate web exactly d/2", Block(5, 2, 5), [_h(Y, 0.8, 1.6)], OK),
    ("side plate web 0.39", Block(5, 2, 5), [_h(Y, 0.8, 1.61)], TS),
    # hole-to-hole gap, limit max(d)/2 exclusive
    ("gap exactly d/2", CUBE, [_h(Z, 1.0, 1.0, u=-0.75), _h(Z, 1.0, 1.0, u=0.75)], OK),
    ("gap just under d/2", CUBE, [_h(Z, 1.0, 1.0, u=-0.745), _h(Z, 1.0, 1.0, u=0.745)], HS),
    ("gap just over d/2", CUBE, [_h(Z, 1.0, 1.0, u=-0.755), _h(Z, 1.0, 1.0, u=0.755)], OK),
    ("gap 0.1", CUBE, [_h(Z, 1.0, 1.0, u=-0.55), _h(Z, 1.0, 1.0, u=0.55)], HS),
    ("mixed gap exactly larger d/2", CUBE, [_h(Z, 1.0, 1.0, u=-0.5), _h(Z, 0.5, 1.0, u=0.75)], OK),
    ("mixed gap just under", CUBE, [_h(Z, 1.0, 1.0, u=-0.5), _h(Z, 0.5, 1.0, u=0.74)], HS),
    ("coaxial opposite faces gap 3", CUBE, [_h(Z, 1.0, 1.0), _h(Face.ZNEG, 1.0, 1.0)], OK),
    ("coaxial opposite faces gap 0.4", CUBE, [_h(Z, 1.0, 2.3), _h(Face.ZNEG, 1.0, 2.3)], HS),
    # stepped stock: the lower step's top sits at half height
    ("step top shallow hole", LB, [_h(Z, 0.5, 1.0, u=1.25)], OK),
    ("step top through ratio 5", LB, [_h(Z, 0.5, 2.5, u=1.25)], OK),
    ("tall side blind ratio 6", LB, [_h(Z, 0.5, 3.0, u=-1.25)], RB),
    ("step top wall 1", LB, [_h(Z, 1.0, 1.0, u=1.0)], OK),
    # round stock
    ("round stock centered", CYL, [_h(Z, 1.0, 2.0)], OK),
    ("round stock wall 0.25", CYL, [_h(Z, 1.0, 1.0, u=1.75)], EP),
    ("round stock wall exactly d/2", CYL, [_h(Z, 1.0, 1.0, u=1.5)], OK),
    ("round stock through ratio exactly 10", CYL, [_h(Z, 0.5, 5.0)], RT),
]


def test_criterion_10_rule_table(record_criterion):
    mismatches = []
    for name, base, holes, expected in RULE_TABLE:
        label = dfm_classify(PartModel(name, base, tuple(holes)))
        if label.violations != expected or label.manufacturable != (not expected):
            mismatches.append(f"{name}: got {sorted(v.value for v in label.violations)}")
    ok = len(RULE_TABLE) >= 40 and not mismatches
    record_criterion(10, ok, f"{len(RULE_TABLE) - len(mismatches)}/{len(RULE_TABLE)} parts match"
                             + (f"; {mismatches}" if mismatches else ""))
    assert ok, mismatches


@pytest.mark.parametrize("name, base, holes, expected", RULE_TABLE, ids=[row[0] for row in RULE_TABLE])
def test_rule_table_parts_are_buildable(name, base, holes, expected):
    part = PartModel(name, base, tuple(holes))
    assert geometry_problems(part) == []
    assert len(tessellate(part).triangles) > 0
