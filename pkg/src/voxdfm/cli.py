"""Command-line front end: generate, voxelize, train, eval, explain, featmaps.

Exit codes: 0 success, 1 usage error, 2 data or model error.  Progress goes
to stderr; machine-readable results go to stdout.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .gradcam import CamClass, CompositeVolume, RenderConfig, composite, grad_cam, raymarch_render, write_ppm
from .nn3d import (
    NORMAL_KERNELS,
    OCCUPANCY_KERNELS,
    ConfusionMatrix,
    TrainConfig,
    build_network,
    evaluate,
    first_layer_feature_maps,
    load_network,
    save_network,
    train,
)
from .solids import tessellate
from .voxelize import (
    EncodingKind,
    VoxelGrid,
    grid_for_part,
    read_vox,
    voxelize_analytic,
    voxelize_parity,
    write_vox,
)

AGREEMENT_THRESHOLD = 0.999
TABLE_COLUMNS = ("True Positive", "True Negative", "False Positive", "False Negative", "Accuracy")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# Configuration

DESK = {"grid": 32, "batch_size": 16}
FULL_SCALE = {"grid": 64, "batch_size": 64}


def default_config() -> dict:
    return {
        "seed": 0,
        "grid": DESK["grid"],
        "encoding": EncodingKind.COUPLED.value,
        "engine": "parity",
        "workers": os.cpu_count() or 1,
        "dataset": ds.DatasetSpec().to_json(),
        "network": {"filters": [8, 16, 32], "dense": 128, "kernels": None},
        "train": asdict(TrainConfig(batch_size=DESK["batch_size"])),
        "train_subset": None,
        "meshes": True,
    }


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "dataset":
            out[k] = _merge(out[k], v)
        elif k == "dataset" and isinstance(v, dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def resolve_config(args) -> dict:
    cfg = default_config()
    if args.config:
        try:
            cfg = _merge(cfg, json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
    if args.paper_config and args.desk_config:
        raise UsageError("--paper-config and --desk-config are mutually exclusive")
    preset = FULL_SCALE if args.paper_config else DESK if args.desk_config else None
    if preset:
        cfg["grid"] = preset["grid"]
        cfg["train"]["batch_size"] = preset["batch_size"]
        if args.paper_config:
            cfg["train"]["patience"] = 10
    if args.seed is not None:
        cfg["seed"] = args.seed
        cfg["train"]["seed"] = args.seed
        cfg["dataset"]["seed"] = args.seed
    if args.grid is not None:
        cfg["grid"] = args.grid
    if args.encoding is not None:
        cfg["encoding"] = args.encoding
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.workspace:
        cfg["workspace"] = args.workspace
    cfg["workspace"] = cfg.get("workspace") or os.environ.get("VOXDFM_WORKSPACE") or "workspace"
    cfg["dataset"]["grid_resolution"] = cfg["grid"]
    cfg["dataset"]["encoding"] = cfg["encoding"]
    try:
        EncodingKind(cfg["encoding"])
        ds.DatasetSpec.from_json(cfg["dataset"])
        TrainConfig(**cfg["train"])
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    if int(cfg["workers"]) < 1:
        raise UsageError("--workers must be at least 1")
    return cfg


def write_snapshot(cfg: dict, command: str) -> None:
    root = Path(cfg["workspace"])
    root.mkdir(parents=True, exist_ok=True)
    # worker count and output location do not affect results
    snap = {k: v for k, v in cfg.items() if k not in ("workers", "workspace")}
    (root / f"{command}.config.json").write_text(json.dumps(snap, indent=2, sort_keys=True) + "\n")


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _manifest_path(cfg) -> Path:
    return Path(cfg["workspace"]) / "manifest.txt"


def _load_manifest(cfg) -> tuple[dict, list[ds.SampleRecord]]:
    path = _manifest_path(cfg)
    if not path.exists():
        raise DataError(f"no manifest at {path}; run `generate` first")
    try:
        return ds.read_manifest_header(path), ds.read_manifest(path)
    except ds.SchemaError as exc:
        raise DataError(str(exc)) from exc


def _kernels(cfg) -> tuple[int, ...]:
    if cfg["network"].get("kernels"):
        return tuple(cfg["network"]["kernels"])
    return OCCUPANCY_KERNELS if cfg["encoding"] == EncodingKind.OCCUPANCY.value else NORMAL_KERNELS


def _tensors(cfg, records):
    root = Path(cfg["workspace"])
    for r in records:
        if r.voxel_path is None or not (root / r.voxel_path).exists():
            raise DataError(f"record {r.id}: voxel file missing; run `voxelize` first")
    try:
        return ds.load_tensors(records, root)
    except ValueError as exc:
        raise DataError(f"voxel data unreadable: {exc}") from exc


def _check_voxel_settings(cfg, header) -> None:
    vox = header.get("voxels")
    if not vox:
        raise DataError("manifest has no voxel data; run `voxelize` first")
    if vox["grid"] != cfg["grid"] or vox["encoding"] != cfg["encoding"]:
        raise DataError(
            f"voxels were built at grid {vox['grid']} / {vox['encoding']}, "
            f"config asks for grid {cfg['grid']} / {cfg['encoding']}"
        )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(cfg, args) -> int:
    spec = ds.DatasetSpec.from_json(cfg["dataset"])
    root = Path(cfg["workspace"])
    root.mkdir(parents=True, exist_ok=True)
    training = ds.enumerate_training(spec)
    train_recs, val_recs = ds.split_train_val(training.records, 1.0 - cfg["train"]["val_fraction"], cfg["seed"])
    rep = ds.enumerate_representative(spec)
    non = ds.enumerate_nonrepresentative(spec)
    records = sorted(train_recs + val_recs + rep.records + non.records, key=lambda r: r.id)
    skipped = {"training": training.skipped, "representative": rep.skipped, "nonrepresentative": non.skipped}
    ds.write_manifest(records, _manifest_path(cfg), spec, skipped)
    if cfg.get("meshes", True) and not args.no_meshes:
        mdir = root / "meshes"
        mdir.mkdir(exist_ok=True)
        for k, r in enumerate(records):
            ds.write_stl(tessellate(r.part), mdir / f"{r.id}.stl", r.id)
            if (k + 1) % 500 == 0:
                _progress(f"meshes {k + 1}/{len(records)}")
    write_snapshot(cfg, "generate")
    summary = {"records": len(records), "skipped": skipped, "balance": ds.class_balance(records)}
    print(json.dumps(summary, sort_keys=True))
    return 0


def _select(records, args):
    if args.split:
        records = [r for r in records if r.split.value in args.split]
    if args.limit is not None:
        records = records[: args.limit]
    return records


def cmd_voxelize(cfg, args) -> int:
    header, records = _load_manifest(cfg)
    chosen = {r.id for r in _select(records, args)}
    todo = [r for r in records if r.id in chosen]
    root = Path(cfg["workspace"])
    kind = EncodingKind(cfg["encoding"])

    def progress(k, n, rid):
        if k % 250 == 0 or k == n:
            _progress(f"voxelized {k}/{n}")

    try:
        done = ds.write_voxels(todo, root, cfg["grid"], kind, cfg["engine"], int(cfg["workers"]), progress)
    except Exception as exc:  # report which record failed
        raise DataError(f"voxelization failed: {exc}") from exc
    by_id = {r.id: r for r in done}
    records = [by_id.get(r.id, r) for r in records]
    spec = ds.DatasetSpec.from_json(header["spec"]) if header.get("spec") else None
    extra = {"voxels": {"grid": cfg["grid"], "encoding": kind.value, "engine": cfg["engine"]}}
    ds.write_manifest(records, _manifest_path(cfg), spec, header.get("skipped", 0), extra)
    result = {"voxelized": len(done), "grid": cfg["grid"], "encoding": kind.value}
    if args.verify:
        worst, total_agree, total = 1.0, 0, 0
        bad = []
        for r in todo:
            grid = grid_for_part(r.part, cfg["grid"])
            par = voxelize_parity(tessellate(r.part), grid).data
            ana = voxelize_analytic(r.part, grid).data
            agree = int((par == ana).sum())
            frac = agree / par.size
            total_agree += agree
            total += par.size
            worst = min(worst, frac)
            if frac < AGREEMENT_THRESHOLD:
                bad.append(r.id)
        result["agreement"] = total_agree / total if total else 1.0
        result["worst_agreement"] = worst
        if bad:
            print(json.dumps(result, sort_keys=True))
            raise DataError(f"parity/analytic agreement below {AGREEMENT_THRESHOLD:.1%} for records: {', '.join(bad)}")
    write_snapshot(cfg, "voxelize")
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_train(cfg, args) -> int:
    header, records = _load_manifest(cfg)
    _check_voxel_settings(cfg, header)
    tr = [r for r in records if r.split is ds.Split.TRAIN]
    va = [r for r in records if r.split is ds.Split.VAL]
    if cfg.get("train_subset"):
        tr = ds.balanced_subset(tr, int(cfg["train_subset"]), cfg["seed"])
        va = ds.balanced_subset(va, max(2, int(cfg["train_subset"]) // 3), cfg["seed"])
    if not tr or not va:
        raise DataError("training and validation splits must both be non-empty")
    xt, yt = _tensors(cfg, tr)
    xv, yv = _tensors(cfg, va)
    tcfg = TrainConfig(**cfg["train"])
    net = build_network(
        xt.shape[1:], _kernels(cfg), cfg["network"]["filters"], cfg["network"]["dense"], seed=cfg["seed"]
    )
    root = Path(cfg["workspace"])
    hist_lines = []

    def on_epoch(s):
        hist_lines.append(json.dumps(asdict(s), sort_keys=True))
        _progress(f"epoch {s.epoch}: train {s.train_loss:.4f} val {s.val_loss:.4f} acc {s.val_accuracy:.4f}")

    result = train(net, (xt, yt), (xv, yv), tcfg, on_epoch)
    save_network(net, root / "model.net")
    (root / "history.txt").write_text("\n".join(hist_lines) + "\n")
    write_snapshot(cfg, "train")
    best = result.best
    print(json.dumps({"best_epoch": result.best_epoch, "val_loss": best.val_loss, "val_accuracy": best.val_accuracy,
                      "epochs": len(result.history)}, sort_keys=True))
    return 0


def _load_model(cfg, args):
    path = Path(args.model) if getattr(args, "model", None) else Path(cfg["workspace"]) / "model.net"
    try:
        return load_network(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load model {path}: {exc}") from exc


def format_table(rows: dict[str, ConfusionMatrix]) -> str:
    width = max([5] + [len(k) for k in rows])
    head = "Split".ljust(width) + "  " + "  ".join(TABLE_COLUMNS)
    lines = [head]
    for name, cm in rows.items():
        cells = [str(cm.tp), str(cm.tn), str(cm.fp), str(cm.fn), f"{cm.accuracy:.4f}"]
        lines.append(name.ljust(width) + "  " + "  ".join(c.rjust(len(h)) for c, h in zip(cells, TABLE_COLUMNS)))
    return "\n".join(lines)


def cmd_eval(cfg, args) -> int:
    header, records = _load_manifest(cfg)
    _check_voxel_settings(cfg, header)
    net = _load_model(cfg, args)
    if args.split:
        splits = args.split
    else:  # every evaluation split that has been voxelized
        splits = [
            s.value for s in ds.Split
            if s is not ds.Split.TRAIN and any(r.split is s and r.voxel_path for r in records)
        ]
    rows = {}
    for split in splits:
        recs = [r for r in records if r.split.value == split]
        if not recs:
            continue
        x, y = _tensors(cfg, recs)
        rows[split] = evaluate(net, x, y, batch_size=cfg["train"]["batch_size"])
    if not rows:
        raise DataError("no records in the requested splits")
    print(format_table(rows))
    out = {k: v.row() for k, v in rows.items()}
    (Path(cfg["workspace"]) / "eval.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    write_snapshot(cfg, "eval")
    return 0


def _find_record(records, rid):
    for r in records:
        if r.id == rid:
            return r
    raise DataError(f"record {rid} not found in manifest")


def cmd_explain(cfg, args) -> int:
    header, records = _load_manifest(cfg)
    _check_voxel_settings(cfg, header)
    rec = _find_record(records, args.id)
    net = _load_model(cfg, args)
    x, _ = _tensors(cfg, [rec])
    if args.cls:
        cls = CamClass(args.cls)
    else:
        p = float(net.predict(x)[0])
        cls = CamClass.MANUFACTURABLE if p >= 0.5 else CamClass.NON_MANUFACTURABLE
    grid = grid_for_part(rec.part, cfg["grid"])
    occ = voxelize_parity(tessellate(rec.part), grid)
    cam = grad_cam(net, x[0], cls, target_dims=grid.shape)
    comp = composite(occ, cam)
    out = Path(cfg["workspace"]) / "explain" / rec.id
    out.mkdir(parents=True, exist_ok=True)
    write_vox(cam.to_grid(grid), out / "cam.vox")
    write_vox(comp.to_grid(), out / "composite.vox")
    for axis in ("-x", "-y", "-z"):
        img = raymarch_render(comp, RenderConfig(view_axis=axis))
        write_ppm(img, out / f"render_{axis[1]}.ppm")
    write_snapshot(cfg, "explain")
    print(json.dumps({"id": rec.id, "class": cls.value, "feature_dims": list(cam.feature_dims),
                      "output": str(out)}, sort_keys=True))
    return 0


def cmd_featmaps(cfg, args) -> int:
    header, records = _load_manifest(cfg)
    _check_voxel_settings(cfg, header)
    rec = _find_record(records, args.id)
    net = _load_model(cfg, args)
    x, _ = _tensors(cfg, [rec])
    maps = first_layer_feature_maps(net, x[0])
    grid = grid_for_part(rec.part, cfg["grid"])
    out = Path(cfg["workspace"]) / "featmaps" / rec.id
    out.mkdir(parents=True, exist_ok=True)
    write_vox(VoxelGrid(grid, maps.astype(np.float32)), out / "featmaps.vox")
    occ = VoxelGrid(grid, np.zeros((1, *grid.shape), np.float32))
    for k, m in enumerate(maps):
        vol = CompositeVolume(grid, occ.data[0], m.astype(np.float64))
        write_ppm(raymarch_render(vol, RenderConfig(view_axis="-z")), out / f"filter_{k:02d}.ppm")
    write_snapshot(cfg, "featmaps")
    print(json.dumps({"id": rec.id, "filters": len(maps), "output": str(out)}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--grid", type=int)
    common.add_argument("--encoding", choices=[k.value for k in EncodingKind])
    common.add_argument("--workers", type=int)
    common.add_argument("--workspace", help="output root (default: $VOXDFM_WORKSPACE or ./workspace)")
    common.add_argument("--paper-config", action="store_true", help="64^3 grid, batch 64")
    common.add_argument("--desk-config", action="store_true", help="32^3 grid, batch 16")

    p = _Parser(prog="voxdfm", description="Drilled-hole DFM classification with a voxel 3D CNN.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    g = sub.add_parser("generate", parents=[common], help="enumerate and label parts, write manifest and meshes")
    g.add_argument("--no-meshes", action="store_true")
    v = sub.add_parser("voxelize", parents=[common], help="write voxel grids for manifest records")
    v.add_argument("--engine", choices=["parity", "analytic"])
    v.add_argument("--verify", action="store_true", help="cross-check parity against analytic occupancy")
    v.add_argument("--split", action="append", choices=[s.value for s in ds.Split])
    v.add_argument("--limit", type=int)
    sub.add_parser("train", parents=[common], help="train a network on the train/val splits")
    e = sub.add_parser("eval", parents=[common], help="confusion matrices per split")
    e.add_argument("--model")
    e.add_argument("--split", action="append", choices=[s.value for s in ds.Split])
    x = sub.add_parser("explain", parents=[common], help="class activation map and renders for one record")
    x.add_argument("--model")
    x.add_argument("--id", required=True)
    x.add_argument("--class", dest="cls", choices=[c.value for c in CamClass])
    f = sub.add_parser("featmaps", parents=[common], help="first-layer feature maps for one record")
    f.add_argument("--model")
    f.add_argument("--id", required=True)
    return p


COMMANDS = {
    "generate": cmd_generate,
    "voxelize": cmd_voxelize,
    "train": cmd_train,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "featmaps": cmd_featmaps,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        cfg = resolve_config(args)
        if getattr(args, "engine", None):
            cfg["engine"] = args.engine
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(parser.format_help(), file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
