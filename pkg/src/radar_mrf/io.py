"""File formats: scan binaries, schema sidecars, label/detection JSONL,
and the encoded-artifact exports (density, pillars, voxels, heatmaps).

Binary payloads are little-endian float32, row-major.  Every writer goes
through a temp-file rename so partially written artifacts never appear
under their final name.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .cloud import FeatureSchema, PointCloud
from .errors import InputFormatError
from .evaluation import Detection, GroundTruth
from .geometry import Box3D

_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: invalid JSON ({exc})") from exc


# ---------------------------------------------------------------------------
# Point-cloud scans: <stem>.bin + <stem>.schema.json


def write_schema(path, schema: FeatureSchema) -> None:
    write_json(path, {"fields": [{"name": n, "unit": u}
                                 for n, u in schema.entries]})


def read_schema(path) -> FeatureSchema:
    doc = read_json(path)
    try:
        entries = tuple((f["name"], f.get("unit", "")) for f in doc["fields"])
    except (KeyError, TypeError) as exc:
        raise InputFormatError(f"{path}: schema file needs a 'fields' list "
                               "of {name, unit} objects") from exc
    return FeatureSchema(entries)


def load_pointcloud(path, schema: FeatureSchema) -> PointCloud:
    """Read a float32 record file laid out as N rows of ``len(schema)``."""
    raw = Path(path).read_bytes()
    width = len(schema)
    record = 4 * width
    if len(raw) % record != 0:
        raise InputFormatError(
            f"{path}: {len(raw)} bytes is not a whole number of "
            f"{width}-field float32 records")
    values = np.frombuffer(raw, dtype=_F32).reshape(-1, width)
    values = values.astype(np.float64)
    if values.size and not np.isfinite(values).all():
        bad = int(np.argwhere(~np.isfinite(values))[0][0])
        raise InputFormatError(f"{path}: non-finite value in record {bad}")
    return PointCloud(schema, values)


def save_pointcloud(stem, pc: PointCloud) -> tuple[Path, Path]:
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    schema_path = stem.with_suffix(".schema.json")
    atomic_write_bytes(bin_path, pc.values.astype(_F32).tobytes())
    write_schema(schema_path, pc.schema)
    return bin_path, schema_path


# ---------------------------------------------------------------------------
# Labels and detections: JSON lines

_BOX_KEYS = ("x", "y", "z", "w", "l", "h", "theta")


def _box_from_record(rec: dict, where: str) -> Box3D:
    try:
        vals = {k: float(rec[k]) for k in _BOX_KEYS}
    except KeyError as exc:
        raise InputFormatError(f"{where}: missing box field {exc}") from exc
    z_ref = rec.get("z_ref", "center")
    if z_ref not in ("bottom", "center"):
        raise InputFormatError(f"{where}: z_ref must be 'bottom' or 'center', "
                               f"got {z_ref!r}")
    cz = vals["z"] + 0.5 * vals["h"] if z_ref == "bottom" else vals["z"]
    try:
        return Box3D(vals["x"], vals["y"], cz, vals["w"], vals["l"],
                     vals["h"], vals["theta"])
    except ValueError as exc:
        raise InputFormatError(f"{where}: {exc}") from exc


def _iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputFormatError(
                    f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            yield lineno, rec


def read_labels(path) -> list[GroundTruth]:
    """Read ground-truth boxes from a JSON-lines label file."""
    out = []
    for lineno, rec in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        if "frame" not in rec or "class" not in rec:
            raise InputFormatError(f"{where}: needs 'frame' and 'class'")
        out.append(GroundTruth(frame=str(rec["frame"]),
                               class_name=str(rec["class"]),
                               box=_box_from_record(rec, where)))
    return out


def write_labels(path, ground_truths) -> None:
    lines = []
    for gt in ground_truths:
        box = gt.box
        lines.append(json.dumps({
            "frame": gt.frame, "class": gt.class_name,
            "x": box.cx, "y": box.cy, "z": box.cz,
            "w": box.w, "l": box.l, "h": box.h,
            "theta": box.theta, "z_ref": "center",
        }))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_detections(path) -> list[Detection]:
    """Read scored detections from a JSON-lines file."""
    out = []
    for lineno, rec in _iter_jsonl(path):
        where = f"{path}:{lineno}"
        for key in ("frame", "class", "score"):
            if key not in rec:
                raise InputFormatError(f"{where}: needs '{key}'")
        try:
            score = float(rec["score"])
        except (TypeError, ValueError) as exc:
            raise InputFormatError(f"{where}: score is not a number "
                                   f"({rec['score']!r})") from exc
        if not np.isfinite(score):
            raise InputFormatError(f"{where}: non-finite score")
        out.append(Detection(frame=str(rec["frame"]),
                             class_name=str(rec["class"]), score=score,
                             box=_box_from_record(rec, where)))
    return out


def write_detections(path, detections) -> None:
    lines = []
    for det in detections:
        box = det.box
        lines.append(json.dumps({
            "frame": det.frame, "class": det.class_name, "score": det.score,
            "x": box.cx, "y": box.cy, "z": box.cz,
            "w": box.w, "l": box.l, "h": box.h,
            "theta": box.theta, "z_ref": "center",
        }))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


# ---------------------------------------------------------------------------
# Encoded artifacts


def write_density(stem, normalized: np.ndarray, meta: dict) -> tuple[Path, Path]:
    """Write the N x B normalized density matrix plus its sidecar."""
    stem = Path(stem)
    bin_path = Path(str(stem) + ".density.bin")
    meta_path = Path(str(stem) + ".density.meta.json")
    arr = np.ascontiguousarray(normalized, dtype=np.float64)
    atomic_write_bytes(bin_path, arr.astype(_F32).tobytes())
    payload = {"n_points": int(arr.shape[0]), "n_bands": int(arr.shape[1])}
    payload.update(meta)
    write_json(meta_path, payload)
    return bin_path, meta_path


def read_density(stem) -> tuple[np.ndarray, dict]:
    meta = read_json(str(stem) + ".density.meta.json")
    raw = Path(str(stem) + ".density.bin").read_bytes()
    arr = np.frombuffer(raw, dtype=_F32).reshape(
        meta["n_points"], meta["n_bands"])
    return arr.astype(np.float64), meta


def write_pillars(stem, tensor, meta_extra: dict | None = None) -> tuple[Path, Path]:
    """Write a PillarTensor as raw float32 plus layout metadata."""
    stem = Path(stem)
    bin_path = Path(str(stem) + ".pillars.bin")
    meta_path = Path(str(stem) + ".pillars.meta.json")
    atomic_write_bytes(bin_path, tensor.values.astype(_F32).tobytes())
    d, p, n = tensor.values.shape
    meta = {
        "D": int(d), "P": int(p), "N": int(n),
        "coords": [[int(r), int(c)] for r, c in tensor.coords],
        "counts": [int(c) for c in tensor.counts],
    }
    meta.update(meta_extra or {})
    write_json(meta_path, meta)
    return bin_path, meta_path


def read_pillars(stem) -> tuple[np.ndarray, dict]:
    meta = read_json(str(stem) + ".pillars.meta.json")
    raw = Path(str(stem) + ".pillars.bin").read_bytes()
    values = np.frombuffer(raw, dtype=_F32).reshape(
        meta["D"], meta["P"], meta["N"])
    return values.astype(np.float64), meta


def write_voxels(stem, grid, meta_extra: dict | None = None) -> Path:
    """Write a SparseVoxelGrid as one file: JSON header + COO payload.

    Layout: uint32 header length, UTF-8 JSON header, int32 coords (K x 3),
    float32 values (K x C).
    """
    path = Path(str(stem) + ".voxels.bin")
    k, c = grid.values.shape
    header = {
        "dims": [int(x) for x in grid.dims],
        "count": int(k), "channels": int(c),
    }
    header.update(meta_extra or {})
    head = json.dumps(header).encode("utf-8")
    blob = (np.uint32(len(head)).tobytes("C") + head
            + grid.coords.astype(_I32).tobytes()
            + grid.values.astype(_F32).tobytes())
    atomic_write_bytes(path, blob)
    return path


def read_voxels(path) -> tuple[np.ndarray, np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise InputFormatError(f"{path}: truncated voxel file")
    hlen = int(np.frombuffer(raw[:4], dtype="<u4")[0])
    header = json.loads(raw[4:4 + hlen].decode("utf-8"))
    k, c = header["count"], header["channels"]
    body = raw[4 + hlen:]
    want = k * 3 * 4 + k * c * 4
    if len(body) != want:
        raise InputFormatError(f"{path}: payload is {len(body)} bytes, "
                               f"expected {want}")
    coords = np.frombuffer(body[:k * 12], dtype=_I32).reshape(k, 3)
    values = np.frombuffer(body[k * 12:], dtype=_F32).reshape(k, c)
    return coords.astype(np.int64), values.astype(np.float64), header


# ---------------------------------------------------------------------------
# Heatmap grids


def write_pgm(path, grid: np.ndarray) -> None:
    """Write a 2D grid as plain (ASCII, P2) PGM, min-max scaled to 0..255.

    A flat grid renders as uniform mid-gray 128.
    """
    grid = np.asarray(grid, dtype=np.float64)
    lo, hi = float(grid.min()), float(grid.max())
    if hi > lo:
        pix = np.rint(255.0 * (grid - lo) / (hi - lo)).astype(np.int64)
    else:
        pix = np.full(grid.shape, 128, dtype=np.int64)
    h, w = grid.shape
    lines = [f"P2", f"{w} {h}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in pix)
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_grid_csv(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid, dtype=np.float64)
    lines = [",".join(repr(float(v)) for v in row) for row in grid]
    atomic_write_text(path, "\n".join(lines) + "\n")
