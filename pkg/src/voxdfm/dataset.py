"""Corpus enumeration, labeling, splitting, manifests and voxel persistence."""

from __future__ import annotations

import enum
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .solids import (
    Block,
    Cylinder,
    DfmLabel,
    Face,
    HoleSpec,
    LBlock,
    PartModel,
    TriMesh,
    Violation,
    dfm_classify,
    is_feasible,
)
from .voxelize import EncodingKind, GridSpec, VoxelGrid, grid_for_part, read_vox, voxelize_part, write_vox

MANIFEST_VERSION = "voxdfm-manifest/1"
EDGE = 5.0


class SchemaError(ValueError):
    pass


class Split(enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST_REPRESENTATIVE = "test_representative"
    TEST_NONREPRESENTATIVE = "test_nonrepresentative"


def _steps(start: float, stop: float, step: float) -> tuple[float, ...]:
    n = int(round((stop - start) / step))
    return tuple(round(start + k * step, 10) for k in range(n + 1))


def _diagonal(values: Iterable[float]) -> tuple[tuple[float, float], ...]:
    return tuple((v, v) for v in values)


def _radial(values: Iterable[float]) -> tuple[tuple[float, float], ...]:
    values = sorted(set(values) - {0.0})
    return ((0.0, 0.0), *((v, 0.0) for v in values), *((0.0, v) for v in values))


@dataclass(frozen=True)
class DatasetSpec:
    diameters: tuple[float, ...] = _steps(0.1, 1.0, 0.1)
    depths: tuple[float, ...] = _steps(0.5, 5.0, 0.5)
    positions: tuple[tuple[float, float], ...] = _diagonal(_steps(-2.0, 2.0, 0.5))
    faces: tuple[Face, ...] = tuple(Face)
    thin_section_webs: tuple[float, ...] = (0.25, 0.5, 1.0)
    grid_resolution: int = 32
    encoding: EncodingKind = EncodingKind.COUPLED
    seed: int = 0
    representative_diameters: tuple[float, ...] = _steps(1.1, 1.5, 0.1)
    representative_positions: tuple[tuple[float, float], ...] = _radial(_steps(-2.0, 2.0, 0.5))

    def __post_init__(self):
        def norm(seq, conv=float):
            return tuple(conv(x) for x in seq)

        object.__setattr__(self, "diameters", norm(self.diameters))
        object.__setattr__(self, "depths", norm(self.depths))
        object.__setattr__(self, "positions", norm(self.positions, lambda p: (float(p[0]), float(p[1]))))
        object.__setattr__(self, "faces", norm(self.faces, Face))
        object.__setattr__(self, "thin_section_webs", norm(self.thin_section_webs))
        object.__setattr__(self, "encoding", EncodingKind(self.encoding))
        object.__setattr__(self, "representative_diameters", norm(self.representative_diameters))
        object.__setattr__(
            self, "representative_positions",
            norm(self.representative_positions, lambda p: (float(p[0]), float(p[1]))),
        )
        lengths = (*self.diameters, *self.depths, *self.thin_section_webs, *self.representative_diameters)
        if any(not x > 0 for x in lengths):
            raise ValueError("all lengths must be positive")
        if self.grid_resolution < 8:
            raise ValueError("grid resolution must be at least 8")

    def to_json(self) -> dict:
        d = asdict(self)
        d["faces"] = [f.value for f in self.faces]
        d["encoding"] = self.encoding.value
        d["positions"] = [list(p) for p in self.positions]
        d["representative_positions"] = [list(p) for p in self.representative_positions]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DatasetSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown dataset fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    part: PartModel
    label: DfmLabel
    split: Split
    voxel_path: str | None = None

    @classmethod
    def labeled(cls, part: PartModel, split: Split) -> "SampleRecord":
        return cls(part.id, part, dfm_classify(part), split)


@dataclass
class Corpus:
    """Records from one enumeration plus the number of skipped infeasible parts."""

    records: list[SampleRecord]
    skipped: int = 0
    skipped_ids: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# Enumeration


def _fmt(x: float) -> str:
    return f"{x:+.2f}" if x else "0.00"


def _hole_tag(face: Face, d: float, depth: float, u: float, v: float) -> str:
    return f"{face.name.lower()}-d{d:.2f}-h{depth:.2f}-u{_fmt(u)}-v{_fmt(v)}"


def _parts_or_skip(candidates):
    """Yield parts; constructions that fail validation become unbuildable markers."""
    for pid, base, holes in candidates:
        try:
            yield PartModel(pid, base, tuple(holes))
        except ValueError:
            yield _Unbuildable(pid)


@dataclass(frozen=True)
class _Unbuildable:
    id: str


def _collect_candidates(candidates, split: Split) -> Corpus:
    out = Corpus([])
    seen = set()
    for item in _parts_or_skip(candidates):
        if item.id in seen:
            raise ValueError(f"duplicate record id {item.id}")
        seen.add(item.id)
        if isinstance(item, _Unbuildable) or not is_feasible(item):
            out.skipped += 1
            out.skipped_ids.append(item.id)
            continue
        out.records.append(SampleRecord.labeled(item, split))
    out.records.sort(key=lambda r: r.id)
    return out


def _slab(face: Face, thickness: float) -> Block:
    dims = [EDGE, EDGE, EDGE]
    dims[face.axis] = thickness
    return Block(*dims)


def training_candidates(spec: DatasetSpec):
    cube = Block(EDGE, EDGE, EDGE)
    for face in spec.faces:
        for d in spec.diameters:
            for depth in spec.depths:
                for u, v in spec.positions:
                    pid = "tr-" + _hole_tag(face, d, depth, u, v)
                    yield pid, cube, [HoleSpec(face, u, v, d, depth)]
    # thin-section variants: centered blind hole in a slab whose web is a
    # multiple of the diameter
    for face in spec.faces:
        for d in spec.diameters:
            for depth in spec.depths:
                for w in spec.thin_section_webs:
                    thickness = depth + w * d
                    if thickness >= EDGE - 1e-9:  # a full cube repeats a base record
                        continue
                    pid = f"ts-{_hole_tag(face, d, depth, 0.0, 0.0)}-w{w:.2f}"
                    yield pid, _slab(face, thickness), [HoleSpec(face, 0.0, 0.0, d, depth)]


def enumerate_training(spec: DatasetSpec = DatasetSpec()) -> Corpus:
    return _collect_candidates(training_candidates(spec), Split.TRAIN)


def representative_candidates(spec: DatasetSpec):
    cube = Block(EDGE, EDGE, EDGE)
    for face in spec.faces:
        for d in spec.representative_diameters:
            for depth in spec.depths:
                for u, v in spec.representative_positions:
                    pid = "rp-" + _hole_tag(face, d, depth, u, v)
                    yield pid, cube, [HoleSpec(face, u, v, d, depth)]


def enumerate_representative(spec: DatasetSpec = DatasetSpec()) -> Corpus:
    return _collect_candidates(representative_candidates(spec), Split.TEST_REPRESENTATIVE)


def nonrepresentative_candidates(spec: DatasetSpec):
    cube = Block(EDGE, EDGE, EDGE)
    # (a) two holes on one face, separated along u by diameter + gap
    for face in spec.faces:
        for d in (0.5, 1.0):
            for depth in (1.5, 3.0):
                for gap in (0.1, 0.25, 0.5, 1.0, 2.0):
                    c = 0.5 * (d + gap)
                    pid = f"nr-2s-{face.name.lower()}-d{d:.2f}-h{depth:.2f}-g{gap:.2f}"
                    yield pid, cube, [HoleSpec(face, -c, 0.0, d, depth), HoleSpec(face, c, 0.0, d, depth)]
    # (a) two holes from different faces: a +z hole and a +x hole whose axes
    # pass at a controlled distance
    for d in (0.5, 1.0):
        for gap in (0.1, 0.25, 0.5, 1.0, 2.0):
            # +z hole at x=2.5 (u offset 0), reaching down to z=2.5;
            # +x hole at height z = 2.5 - d - gap below its bottom
            zc = 2.5 - d - gap
            for y_off in (0.0, 1.0):
                pid = f"nr-2d-zpos-xpos-d{d:.2f}-g{gap:.2f}-y{_fmt(y_off)}"
                yield pid, cube, [
                    HoleSpec(Face.ZPOS, 0.0, 0.0, d, 2.5),
                    HoleSpec(Face.XPOS, y_off, zc - 2.5, d, 3.5),
                ]
    # (b) L-blocks: outer 5^3, cut 2.5 x 5 x 2.5; holes in the top (z=5) face,
    # the step (z=2.5) face and the +x faces, some close to the inner corner
    lb = LBlock((EDGE, EDGE, EDGE), (2.5, EDGE, 2.5))
    for d in (0.5, 1.0):
        for depth in (1.0, 2.0, 3.0):
            for x in (0.75, 1.25, 2.1, 2.9, 3.75):
                pid = f"nr-lb-zpos-d{d:.2f}-h{depth:.2f}-x{x:.2f}"
                yield pid, lb, [HoleSpec(Face.ZPOS, x - 2.5, 0.0, d, depth)]
            for z in (0.75, 1.25, 2.1, 2.9, 3.75):
                pid = f"nr-lb-xpos-d{d:.2f}-h{depth:.2f}-z{z:.2f}"
                yield pid, lb, [HoleSpec(Face.XPOS, 0.0, z - 2.5, d, depth)]
    # (c) cylinders with axial holes, centered to edge-proximal
    cyl = Cylinder(2.5, EDGE)
    for d in (0.5, 1.0):
        for depth in (1.0, 2.5, 4.0, 5.0):
            for r in (0.0, 0.75, 1.5, 1.9, 2.1):
                for face in (Face.ZPOS, Face.ZNEG):
                    pid = f"nr-cy-{face.name.lower()}-d{d:.2f}-h{depth:.2f}-r{r:.2f}"
                    yield pid, cyl, [HoleSpec(face, r, 0.0, d, depth)]


def enumerate_nonrepresentative(spec: DatasetSpec = DatasetSpec()) -> Corpus:
    return _collect_candidates(nonrepresentative_candidates(spec), Split.TEST_NONREPRESENTATIVE)


def parameter_tuple(part: PartModel) -> tuple:
    """Hashable description of a single-hole cube part (face, diameter, depth, u, v)."""
    return tuple(
        (h.face.value, round(h.diameter, 9), round(h.depth, 9), round(h.pos_u, 9), round(h.pos_v, 9))
        for h in part.holes
    ) + (type(part.base).__name__, tuple(np.round(part.base.extents, 9)))


def split_train_val(records: Sequence[SampleRecord], fraction: float = 0.75, seed: int = 0):
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(fraction * n + 0.5))
    train = [replace(records[i], split=Split.TRAIN) for i in order[:k]]
    val = [replace(records[i], split=Split.VAL) for i in order[k:]]
    return train, val


def class_balance(records: Iterable[SampleRecord]) -> dict[str, dict[str, int]]:
    out: dict[str, dict[str, int]] = {}
    for r in records:
        row = out.setdefault(r.split.value, {"manufacturable": 0, "non_manufacturable": 0})
        row["manufacturable" if r.label.manufacturable else "non_manufacturable"] += 1
    return out


def balanced_subset(records: Sequence[SampleRecord], n: int, seed: int = 0) -> list[SampleRecord]:
    """Seeded sample of ``n`` records, half from each class (as far as available)."""
    rng = np.random.default_rng(seed)
    pos = [r for r in records if r.label.manufacturable]
    neg = [r for r in records if not r.label.manufacturable]
    k_pos = min(len(pos), max(n - len(neg), n // 2))
    k_neg = min(len(neg), n - k_pos)
    pick = [pos[i] for i in rng.choice(len(pos), k_pos, replace=False)]
    pick += [neg[i] for i in rng.choice(len(neg), k_neg, replace=False)]
    return sorted(pick, key=lambda r: r.id)


# ---------------------------------------------------------------------------
# Serialization


def base_to_json(base) -> dict:
    if isinstance(base, Block):
        return {"kind": "block", "width": base.width, "height": base.height, "depth": base.depth}
    if isinstance(base, LBlock):
        return {"kind": "lblock", "outer": list(base.outer), "cut": list(base.cut)}
    if isinstance(base, Cylinder):
        return {"kind": "cylinder", "radius": base.radius, "height": base.height}
    raise TypeError(f"unknown base shape {base!r}")


def base_from_json(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    try:
        if kind == "block":
            return Block(**d)
        if kind == "lblock":
            return LBlock(tuple(d["outer"]), tuple(d["cut"]))
        if kind == "cylinder":
            return Cylinder(**d)
    except (TypeError, KeyError) as exc:
        raise SchemaError(f"bad {kind} parameters: {exc}") from exc
    raise SchemaError(f"unknown base kind {kind!r}")


def part_to_json(part: PartModel) -> dict:
    return {
        "base": base_to_json(part.base),
        "holes": [
            {"face": h.face.value, "pos_u": h.pos_u, "pos_v": h.pos_v, "diameter": h.diameter, "depth": h.depth}
            for h in part.holes
        ],
    }


def part_from_json(pid: str, d: dict) -> PartModel:
    try:
        holes = tuple(
            HoleSpec(Face(h["face"]), h["pos_u"], h["pos_v"], h["diameter"], h["depth"]) for h in d["holes"]
        )
        return PartModel(pid, base_from_json(d["base"]), holes)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"record {pid}: malformed part: {exc}") from exc


def record_to_json(r: SampleRecord) -> dict:
    return {
        "id": r.id,
        "split": r.split.value,
        "part": part_to_json(r.part),
        "manufacturable": r.label.manufacturable,
        "violations": sorted(v.value for v in r.label.violations),
        "voxel_path": r.voxel_path,
    }


def record_from_json(d: dict) -> SampleRecord:
    try:
        pid = d["id"]
        label = DfmLabel(bool(d["manufacturable"]), frozenset(Violation(v) for v in d["violations"]))
        return SampleRecord(pid, part_from_json(pid, d["part"]), label, Split(d["split"]), d.get("voxel_path"))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed record: {exc}") from exc


def write_manifest(
    records: Sequence[SampleRecord],
    path,
    spec: DatasetSpec | None = None,
    skipped: int | dict = 0,
    extra: dict | None = None,
) -> None:
    """Write records (in the given order) as JSON lines after a header line."""
    header = {
        "format": MANIFEST_VERSION,
        "spec": spec.to_json() if spec is not None else None,
        "count": len(records),
        "skipped": skipped,
        "balance": class_balance(records),
        **(extra or {}),
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(record_to_json(r), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest_header(path) -> dict:
    with open(path, encoding="utf-8") as f:
        first = f.readline()
    return _parse_header(first, path)


def _parse_header(line: str, path) -> dict:
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: header is not valid JSON") from exc
    if not isinstance(header, dict) or header.get("format") != MANIFEST_VERSION:
        found = header.get("format") if isinstance(header, dict) else None
        raise SchemaError(f"{path}: expected format {MANIFEST_VERSION!r}, found {found!r}")
    return header


def read_manifest(path) -> list[SampleRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty manifest")
    header = _parse_header(lines[0], path)
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(record_from_json(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON") from exc
    if header.get("count") is not None and header["count"] != len(records):
        raise SchemaError(f"{path}: header announces {header['count']} records, found {len(records)}")
    return records


def write_stl(mesh: TriMesh, path, name: str = "part") -> None:
    """Binary STL: 80-byte header, triangle count, then normal and corners per facet."""
    corners = mesh.corners.astype("<f4")
    rec = np.zeros(len(corners), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = mesh.normals
    rec["v"] = corners
    head = name.encode()[:80].ljust(80, b" ")
    Path(path).write_bytes(head + struct.pack("<I", len(corners)) + rec.tobytes())


def verify_labels(records: Iterable[SampleRecord]) -> list[str]:
    """Ids of records whose stored label differs from a fresh rule evaluation."""
    return [r.id for r in records if dfm_classify(r.part) != r.label]


# ---------------------------------------------------------------------------
# Voxel tensors


def record_grid(record: SampleRecord, n: int) -> GridSpec:
    return grid_for_part(record.part, n)


def voxelize_record(record: SampleRecord, n: int, encoding: EncodingKind, engine: str = "parity") -> VoxelGrid:
    return voxelize_part(record.part, record_grid(record, n), encoding, engine)


def _voxel_job(args):
    record, n, encoding, engine, out = args
    grid = voxelize_record(record, n, encoding, engine)
    write_vox(grid, out)
    return record.id


def write_voxels(
    records: Sequence[SampleRecord],
    root,
    n: int,
    encoding: EncodingKind,
    engine: str = "parity",
    workers: int = 1,
    progress=None,
) -> list[SampleRecord]:
    """Voxelize every record into ``root/voxels/<id>.vox``; returns records with paths set.

    Each file depends only on its own record, so results are identical for
    any worker count.
    """
    vdir = Path(root) / "voxels"
    vdir.mkdir(parents=True, exist_ok=True)
    jobs = [(r, n, EncodingKind(encoding), engine, vdir / f"{r.id}.vox") for r in records]
    if workers > 1 and len(jobs) > 1:
        from multiprocessing import get_context

        with get_context("fork" if os.name == "posix" else "spawn").Pool(workers) as pool:
            for k, rid in enumerate(pool.imap(_voxel_job, jobs, chunksize=4)):
                if progress:
                    progress(k + 1, len(jobs), rid)
    else:
        for k, job in enumerate(jobs):
            _voxel_job(job)
            if progress:
                progress(k + 1, len(jobs), job[0].id)
    return [replace(r, voxel_path=f"voxels/{r.id}.vox") for r in records]


def load_tensors(records: Sequence[SampleRecord], root) -> tuple[np.ndarray, np.ndarray]:
    """Stack the stored voxel grids of ``records`` into (N, C, nz, ny, nx) and labels (N,)."""
    grids = []
    for r in records:
        if r.voxel_path is None:
            raise FileNotFoundError(f"record {r.id} has no voxel file")
        grids.append(read_vox(Path(root) / r.voxel_path).data)
    x = np.stack(grids) if grids else np.zeros((0, 1, 1, 1, 1), np.float32)
    y = np.array([1.0 if r.label.manufacturable else 0.0 for r in records], dtype=np.float32)
    return x, y
