"""File formats: feature files, descriptors, codebooks, models, CSV tables.

Binary formats are little-endian with a 4-byte magic and a u32 version. Byte
layouts are documented in the README; readers validate magic, version, and
length, and name the offending file and byte offset on corruption.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codebook import Codebook
from .descriptors import BlockDescriptor, TrajectoryFeature
from .encoders import Histogram, MultiChannelHistogram
from .errors import DataFormatError, DimensionMismatchError
from .kernel_svm import KernelParams, SvmModel
from .manifold import SpdMatrix, SymMatrix

FEATURE_MAGIC = b"LBTF"
DESCRIPTOR_MAGIC = b"LBBD"
CODEBOOK_MAGIC = b"LBCB"
MODEL_MAGIC = b"LBSV"
FORMAT_VERSION = 1

_METRIC_CODES = {"chi2": 0, "sqeuclidean": 1}
_METRIC_NAMES = {v: k for k, v in _METRIC_CODES.items()}


def _read_exact(fh, count: int, path, what: str) -> bytes:
    offset = fh.tell()
    data = fh.read(count)
    if len(data) != count:
        raise DataFormatError(
            f"{path}: truncated while reading {what} at byte offset {offset}"
        )
    return data


def _check_magic(fh, magic: bytes, path) -> None:
    got = _read_exact(fh, 4, path, "magic")
    if got != magic:
        raise DataFormatError(
            f"{path}: bad magic {got!r} at byte offset 0, expected {magic!r}"
        )
    (version,) = struct.unpack("<I", _read_exact(fh, 4, path, "version"))
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format version {version}")


# -- trajectory feature files -------------------------------------------------

def _feature_dtype(d: int) -> np.dtype:
    return np.dtype([("x", "<f4"), ("y", "<f4"), ("t", "<u4"), ("f", "<f4", (d,))])


def write_features(path, features, d: int) -> None:
    """Write the binary trajectory feature format (magic LBTF)."""
    records = np.empty(len(features), dtype=_feature_dtype(d))
    for i, f in enumerate(features):
        if f.feature.shape[0] != d:
            raise DimensionMismatchError(
                f"feature {i} has length {f.feature.shape[0]}, expected {d}"
            )
        records[i] = (f.x, f.y, f.t, f.feature.astype(np.float32))
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, d, len(features)))
    with open(path, "ab") as fh:
        records.tofile(fh)


def read_features(path) -> tuple[list[TrajectoryFeature], int]:
    """Read the binary trajectory feature format; returns (features, d)."""
    with open(path, "rb") as fh:
        _check_magic(fh, FEATURE_MAGIC, path)
        d, count = struct.unpack("<IQ", _read_exact(fh, 12, path, "header"))
        dtype = _feature_dtype(d)
        payload = _read_exact(fh, dtype.itemsize * count, path, f"{count} records")
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(
                f"{path}: {len(trailing)}+ unexpected trailing bytes at offset {fh.tell() - 1}"
            )
    records = np.frombuffer(payload, dtype=dtype)
    features = [
        TrajectoryFeature(
            x=float(r["x"]), y=float(r["y"]), t=int(r["t"]),
            feature=np.asarray(r["f"], dtype=np.float64),
        )
        for r in records
    ]
    return features, int(d)


def write_features_csv(path, features, d: int) -> None:
    """CSV interchange form with header x,y,t,f0,...,f{d-1}."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "t"] + [f"f{i}" for i in range(d)])
        for f in features:
            writer.writerow(
                [f"{f.x:.9g}", f"{f.y:.9g}", f.t] + [f"{v:.9g}" for v in f.feature]
            )


def read_features_any(path) -> tuple[list[TrajectoryFeature], int]:
    """Dispatch on extension: ``.csv`` reads the interchange form, anything
    else the canonical binary format."""
    if str(path).endswith(".csv"):
        return read_features_csv(path)
    return read_features(path)


def read_features_csv(path) -> tuple[list[TrajectoryFeature], int]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty feature CSV") from None
        d = len(header) - 3
        if d < 2 or header[:3] != ["x", "y", "t"] or header[3:] != [f"f{i}" for i in range(d)]:
            raise DataFormatError(f"{path}: malformed feature CSV header {header}")
        features = []
        for row in reader:
            if len(row) != 3 + d:
                raise DataFormatError(f"{path}: row {reader.line_num} has {len(row)} fields")
            features.append(
                TrajectoryFeature(
                    x=float(row[0]), y=float(row[1]), t=int(row[2]),
                    feature=np.array([float(v) for v in row[3:]]),
                )
            )
    return features, d


# -- block descriptor files ---------------------------------------------------

def write_block_descriptors(path, descriptors, d: int) -> None:
    """Per-video descriptor file (magic LBBD): count, then per descriptor
    (cx, cy, ct as f64, count u32, row-major d*d covariance f64)."""
    with open(path, "wb") as fh:
        fh.write(DESCRIPTOR_MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, d, len(descriptors)))
        for desc in descriptors:
            fh.write(struct.pack("<dddI", desc.cx, desc.cy, desc.ct, desc.count))
            fh.write(desc.cov.array.astype("<f8").tobytes())


def read_block_descriptors(path) -> tuple[list[BlockDescriptor], int]:
    with open(path, "rb") as fh:
        _check_magic(fh, DESCRIPTOR_MAGIC, path)
        d, count = struct.unpack("<IQ", _read_exact(fh, 12, path, "header"))
        descriptors = []
        for i in range(count):
            cx, cy, ct, n = struct.unpack(
                "<dddI", _read_exact(fh, 28, path, f"descriptor {i} header")
            )
            cov_bytes = _read_exact(fh, 8 * d * d, path, f"descriptor {i} covariance")
            cov = np.frombuffer(cov_bytes, dtype="<f8").reshape(d, d)
            descriptors.append(
                BlockDescriptor(
                    cov=SpdMatrix(SymMatrix(cov)), cx=cx, cy=cy, ct=ct, count=n
                )
            )
    return descriptors, int(d)


# -- codebook files -----------------------------------------------------------

def write_codebook(path, codebook: Codebook) -> None:
    """Codebook file (magic LBCB): k, m, source d, k*m f64 atoms, then the
    meta block (N u64, iterations u32, final dispersion f64)."""
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        fh.write(
            struct.pack(
                "<IIII", FORMAT_VERSION, codebook.k, codebook.m, codebook.source_dim
            )
        )
        fh.write(codebook.atoms.astype("<f8").tobytes())
        fh.write(
            struct.pack(
                "<QId", codebook.n_training, codebook.iterations, codebook.final_dispersion
            )
        )


def read_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        _check_magic(fh, CODEBOOK_MAGIC, path)
        k, m, source_d = struct.unpack("<III", _read_exact(fh, 12, path, "header"))
        atoms = np.frombuffer(
            _read_exact(fh, 8 * k * m, path, "atoms"), dtype="<f8"
        ).reshape(k, m)
        n, iterations, eps = struct.unpack("<QId", _read_exact(fh, 20, path, "meta"))
    return Codebook(
        atoms=atoms,
        source_dim=source_d,
        n_training=n,
        iterations=iterations,
        final_dispersion=eps,
    )


# -- model files ----------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(fh, path, what: str) -> str:
    (length,) = struct.unpack("<H", _read_exact(fh, 2, path, what))
    return _read_exact(fh, length, path, what).decode("utf-8")


def write_model(path, model: SvmModel) -> None:
    """Model file (magic LBSV): kernel params, label table, then per class the
    sparse (index, dual coefficient) pairs and the bias."""
    if model.params is None:
        raise ValueError("cannot serialize a model without kernel parameters")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        params = model.params
        fh.write(struct.pack("<B", _METRIC_CODES[params.metric]))
        fh.write(struct.pack("<I", len(params.channel_names)))
        for name, scale in zip(params.channel_names, params.scales):
            fh.write(_pack_str(name))
            fh.write(struct.pack("<d", scale))
            fh.write(struct.pack("<B", 1 if name in params.degenerate_channels else 0))
        fh.write(struct.pack("<dQ", model.c_reg, model.n_train))
        fh.write(struct.pack("<I", len(model.classes)))
        for cls in model.classes:
            fh.write(_pack_str(str(cls)))
        for ci in range(len(model.classes)):
            support = model.support_indices(ci)
            fh.write(struct.pack("<I", len(support)))
            for idx in support:
                fh.write(struct.pack("<Id", int(idx), model.dual_coefs[ci, idx]))
            fh.write(struct.pack("<d", model.biases[ci]))
            fh.write(struct.pack("<B", 1 if model.converged[ci] else 0))


def read_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        _check_magic(fh, MODEL_MAGIC, path)
        (metric_code,) = struct.unpack("<B", _read_exact(fh, 1, path, "metric"))
        if metric_code not in _METRIC_NAMES:
            raise DataFormatError(f"{path}: unknown kernel metric code {metric_code}")
        (n_channels,) = struct.unpack("<I", _read_exact(fh, 4, path, "channel count"))
        names, scales, degenerate = [], [], []
        for _ in range(n_channels):
            name = _unpack_str(fh, path, "channel name")
            (scale,) = struct.unpack("<d", _read_exact(fh, 8, path, "channel scale"))
            (flag,) = struct.unpack("<B", _read_exact(fh, 1, path, "channel flag"))
            names.append(name)
            scales.append(scale)
            if flag:
                degenerate.append(name)
        c_reg, n_train = struct.unpack("<dQ", _read_exact(fh, 16, path, "C and size"))
        (n_classes,) = struct.unpack("<I", _read_exact(fh, 4, path, "class count"))
        classes = tuple(_unpack_str(fh, path, "label") for _ in range(n_classes))
        dual = np.zeros((n_classes, n_train))
        biases = np.zeros(n_classes)
        converged = []
        for ci in range(n_classes):
            (count,) = struct.unpack("<I", _read_exact(fh, 4, path, "support size"))
            for _ in range(count):
                idx, coef = struct.unpack(
                    "<Id", _read_exact(fh, 12, path, "support pair")
                )
                if idx >= n_train:
                    raise DataFormatError(
                        f"{path}: support index {idx} exceeds training size {n_train}"
                    )
                dual[ci, idx] = coef
            (biases[ci],) = struct.unpack("<d", _read_exact(fh, 8, path, "bias"))
            (flag,) = struct.unpack("<B", _read_exact(fh, 1, path, "convergence flag"))
            converged.append(bool(flag))
    params = KernelParams(
        channel_names=tuple(names),
        scales=np.array(scales),
        metric=_METRIC_NAMES[metric_code],
        degenerate_channels=tuple(degenerate),
    )
    dual.flags.writeable = False
    biases.flags.writeable = False
    return SvmModel(
        classes=classes,
        dual_coefs=dual,
        biases=biases,
        c_reg=c_reg,
        params=params,
        converged=tuple(converged),
    )


# -- histogram tables ---------------------------------------------------------

def write_histograms(path, records) -> None:
    """Histogram table: one CSV row per channel per video, values at 9
    significant digits. ``records`` maps video_id -> MultiChannelHistogram;
    rows are sorted by video id with channels in their defined order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for video_id in sorted(records):
            mch = records[video_id]
            for name, hist in zip(mch.names, mch.histograms):
                writer.writerow(
                    [video_id, name] + [f"{v:.9g}" for v in hist.values]
                )


def read_histograms(path) -> dict[str, MultiChannelHistogram]:
    groups: dict[str, list[tuple[str, Histogram]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if len(row) < 3:
                raise DataFormatError(f"{path}: short histogram row at line {reader.line_num}")
            video_id, name = row[0], row[1]
            values = np.array([float(v) for v in row[2:]])
            norm_mode = "none" if name == "sc" else "l2"
            groups.setdefault(video_id, []).append((name, Histogram(values, norm_mode)))
    return {
        vid: MultiChannelHistogram(
            names=tuple(n for n, _ in pairs), histograms=tuple(h for _, h in pairs)
        )
        for vid, pairs in groups.items()
    }


# -- manifests and dataset metadata --------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    path: str
    label: str
    split: str


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "path", "label", "split"])
        for e in entries:
            writer.writerow([e.video_id, e.path, e.label, e.split])


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["video_id", "path", "label", "split"]:
            raise DataFormatError(f"{path}: malformed manifest header {header}")
        for row in reader:
            if len(row) != 4:
                raise DataFormatError(f"{path}: manifest row {reader.line_num} has {len(row)} fields")
            if row[3] not in ("train", "test"):
                raise DataFormatError(f"{path}: unknown split {row[3]!r} at line {reader.line_num}")
            if row[0] in seen:
                raise DataFormatError(f"{path}: duplicate video id {row[0]!r}")
            seen.add(row[0])
            entries.append(ManifestEntry(*row))
    return entries


def write_dataset_meta(path, meta: dict) -> None:
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset_meta(path) -> dict:
    with open(path) as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid dataset metadata: {exc}") from exc
    for key in ("width", "height", "duration", "d"):
        if key not in meta:
            raise DataFormatError(f"{path}: dataset metadata misses {key!r}")
    return meta


# -- matrix debug format --------------------------------------------------------

def matrix_to_text(a) -> str:
    """Textual debug form: dimension line, then one row per line with
    15-significant-digit entries."""
    arr = a.array if hasattr(a, "array") else np.asarray(a, dtype=np.float64)
    lines = [str(arr.shape[0])]
    for row in arr:
        lines.append(" ".join(f"{v:.15g}" for v in row))
    return "\n".join(lines) + "\n"


def matrix_from_text(text: str) -> np.ndarray:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise DataFormatError("empty matrix text")
    d = int(lines[0])
    if len(lines) != d + 1:
        raise DataFormatError(f"matrix text declares d={d} but has {len(lines) - 1} rows")
    rows = []
    for ln in lines[1:]:
        row = [float(v) for v in ln.split()]
        if len(row) != d:
            raise DataFormatError(f"matrix row has {len(row)} entries, expected {d}")
        rows.append(row)
    return np.array(rows)


def relative_to_manifest(manifest_path, entry_path) -> Path:
    """Resolve a manifest entry path relative to the manifest location."""
    p = Path(entry_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p
