"""Datasets, the archive ``.ts`` text format, and the SPCL representation file.

Arrays are held in memory as N x T x D (instances, timestamps, features),
row-major. The ``.ts`` format stores each record dimension-major, so the
parser transposes.
"""
from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigurationError, FormatError, ParseError

SPCL_MAGIC = b"SPCL"
SPCL_VERSION = 1
_MISSING = {"?", "nan", "NaN", "NAN"}


@dataclass
class Dataset:
    name: str
    data: np.ndarray
    labels: np.ndarray | None = None
    label_names: list[str] | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ConfigurationError(f"dataset data must be N x T x D, got shape {self.data.shape}")
        n, t, d = self.data.shape
        if n < 1 or t < 2 or d < 1:
            raise ConfigurationError(f"dataset needs N>=1, T>=2, D>=1, got {self.data.shape}")
        if np.isnan(self.data).any():
            raise ConfigurationError("dataset contains NaN after imputation")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ConfigurationError(f"labels must have length {n}, got {self.labels.shape}")
            k = self.num_classes
            if self.labels.min() < 0 or self.labels.max() >= k:
                raise ConfigurationError("labels out of range")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 0
        if self.label_names is not None:
            return len(self.label_names)
        return int(self.labels.max()) + 1

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            name=self.name,
            data=self.data[idx],
            labels=None if self.labels is None else self.labels[idx],
            label_names=self.label_names,
        )


@dataclass
class ReprSet:
    """Per-timestamp representations, stored in float32 so files round-trip exactly."""

    reps: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.reps = np.asarray(self.reps, dtype=np.float32)
        if self.reps.ndim != 3 or self.reps.shape[2] < 1:
            raise ConfigurationError(f"reps must be N x T x P with P >= 1, got {self.reps.shape}")

    @property
    def instance_reps(self) -> np.ndarray:
        return self.reps.max(axis=1)

    def __eq__(self, other):
        if not isinstance(other, ReprSet):
            return NotImplemented
        return self.provenance == other.provenance and np.array_equal(self.reps, other.reps)


# -- .ts parsing ----------------------------------------------------------
def _parse_bool(value: str, line: int) -> bool:
    v = value.strip().lower()
    if v in ("true", "1"):
        return True
    if v in ("false", "0"):
        return False
    raise ParseError(f"expected true/false, got {value!r}", line)


def _interpolate(series: np.ndarray) -> tuple[np.ndarray, bool]:
    """Fill NaN by linear interpolation, holding edge values constant."""
    bad = np.isnan(series)
    if not bad.any():
        return series, False
    good = np.flatnonzero(~bad)
    if good.size == 0:
        return np.zeros_like(series), True
    out = series.copy()
    out[bad] = np.interp(np.flatnonzero(bad), good, series[good])
    return out, True


def parse_ts(text: str) -> Dataset:
    """Parse the UEA/UCR ``.ts`` text format (header subset plus records)."""
    name = "unnamed"
    dims: int | None = None
    univariate: bool | None = None
    series_length: int | None = None
    has_labels = False
    label_names: list[str] = []
    data_line: int | None = None
    lines = text.splitlines()

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not line.startswith("@"):
            raise ParseError("record before @data", lineno)
        key, _, rest = line.partition(" ")
        key = key.lower()
        rest = rest.strip()
        if key == "@data":
            data_line = lineno
            break
        if key == "@problemname":
            name = rest
        elif key == "@univariate":
            univariate = _parse_bool(rest, lineno)
        elif key == "@dimensions":
            try:
                dims = int(rest)
            except ValueError:
                raise ParseError(f"bad @dimensions value {rest!r}", lineno) from None
        elif key == "@serieslength":
            try:
                series_length = int(rest)
            except ValueError:
                raise ParseError(f"bad @seriesLength value {rest!r}", lineno) from None
        elif key == "@classlabel":
            parts = rest.split()
            if not parts:
                raise ParseError("@classLabel needs true/false", lineno)
            has_labels = _parse_bool(parts[0], lineno)
            label_names = parts[1:]
            if has_labels and not label_names:
                raise ParseError("@classLabel true without class names", lineno)
        # @equalLength, @timeStamps, @missing and unknown directives are informational.

    if data_line is None:
        raise ParseError("missing @data section", len(lines) + 1)
    if dims is None:
        dims = 1 if univariate in (None, True) else None
        if dims is None:
            raise ParseError("@univariate false requires @dimensions", data_line)

    records: list[list[np.ndarray]] = []
    labels: list[int] = []
    for lineno in range(data_line + 1, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line or line.startswith("#"):
            continue
        idx = len(records)
        parts = line.split(":")
        if has_labels:
            label_tok = parts.pop().strip()
            if label_tok not in label_names:
                raise ParseError(f"record {idx}: unknown class label {label_tok!r}", lineno)
            labels.append(label_names.index(label_tok))
        if len(parts) != dims:
            raise ParseError(f"record {idx}: expected {dims} dimensions, found {len(parts)}", lineno)
        series = []
        for part in parts:
            vals = []
            for tok in part.split(","):
                tok = tok.strip()
                if tok in _MISSING:
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise ParseError(f"record {idx}: non-numeric token {tok!r}", lineno) from None
            series.append(np.array(vals, dtype=np.float64))
        records.append(series)

    if not records:
        raise ParseError("no records after @data", len(lines))

    lengths = [len(s) for rec in records for s in rec]
    T = series_length if series_length is not None else max(lengths)
    warnings: list[str] = []
    data = np.empty((len(records), T, dims))
    for i, rec in enumerate(records):
        for d, s in enumerate(rec):
            s, imputed = _interpolate(s)
            if imputed:
                warnings.append(f"record {i} dim {d}: imputed missing values")
            if len(s) > T:
                raise ParseError(f"record {i}: series longer than declared length {T}")
            if len(s) < T:
                warnings.append(f"record {i} dim {d}: padded from {len(s)} to {T}")
                s = np.concatenate([s, np.full(T - len(s), s[-1])])
            data[i, :, d] = s

    return Dataset(
        name=name,
        data=data,
        labels=np.array(labels) if has_labels else None,
        label_names=label_names if has_labels else None,
        warnings=warnings,
    )


def render_ts(ds: Dataset) -> str:
    """Render a dataset in ``.ts`` format; :func:`parse_ts` inverts it exactly."""
    n, t, d = ds.shape
    out = io.StringIO()
    out.write(f"@problemName {ds.name}\n")
    out.write("@timeStamps false\n@missing false\n")
    out.write(f"@univariate {'true' if d == 1 else 'false'}\n")
    out.write(f"@dimensions {d}\n@equalLength true\n@seriesLength {t}\n")
    if ds.labels is not None:
        names = ds.label_names or [str(k) for k in range(ds.num_classes)]
        out.write("@classLabel true " + " ".join(names) + "\n")
    else:
        out.write("@classLabel false\n")
    out.write("@data\n")
    for i in range(n):
        dims = [",".join(repr(float(v)) for v in ds.data[i, :, k]) for k in range(d)]
        if ds.labels is not None:
            dims.append(names[ds.labels[i]])
        out.write(":".join(dims) + "\n")
    return out.getvalue()


def load_ts(path: str | Path) -> Dataset:
    return parse_ts(Path(path).read_text())


def save_ts(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(render_ts(ds))


# -- CSV datasets -----------------------------------------------------------
def load_csv(path: str | Path) -> Dataset:
    """Long-format CSV: columns ``instance,timestamp,<features...>[,label]``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty CSV file", 1) from None
        header = [h.strip() for h in header]
        if header[:2] != ["instance", "timestamp"]:
            raise ParseError("CSV header must start with instance,timestamp", 1)
        has_label = header[-1] == "label"
        feat_cols = header[2:-1] if has_label else header[2:]
        if not feat_cols:
            raise ParseError("CSV has no feature columns", 1)
        rows: dict[int, dict[int, list[float]]] = {}
        lab: dict[int, str] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, found {len(row)}", lineno)
            try:
                i, t = int(row[0]), int(row[1])
                vals = [np.nan if v.strip() in _MISSING else float(v) for v in row[2:2 + len(feat_cols)]]
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", lineno) from None
            rows.setdefault(i, {})[t] = vals
            if has_label:
                lab[i] = row[-1].strip()
    if not rows:
        raise ParseError("CSV has no data rows")
    ids = sorted(rows)
    T = max(max(r) for r in rows.values()) + 1
    data = np.full((len(ids), T, len(feat_cols)), np.nan)
    for k, i in enumerate(ids):
        for t, vals in rows[i].items():
            data[k, t] = vals
    warnings = []
    for k in range(len(ids)):
        for d in range(len(feat_cols)):
            data[k, :, d], imputed = _interpolate(data[k, :, d])
            if imputed:
                warnings.append(f"instance {ids[k]} dim {d}: imputed missing values")
    labels = names = None
    if has_label:
        names = sorted(set(lab.values()))
        labels = np.array([names.index(lab[i]) for i in ids])
    return Dataset(name=Path(path).stem, data=data, labels=labels, label_names=names, warnings=warnings)


def save_csv(ds: Dataset, path: str | Path) -> None:
    """Long-format CSV readable by :func:`load_csv`; labels are written by name."""
    n, t, d = ds.shape
    names = None
    if ds.labels is not None:
        names = ds.label_names or [str(k) for k in range(ds.num_classes)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance", "timestamp", *[f"f{k}" for k in range(d)], *(["label"] if names else [])])
        for i in range(n):
            for s in range(t):
                row = [i, s, *(repr(float(v)) for v in ds.data[i, s])]
                if names:
                    row.append(names[ds.labels[i]])
                w.writerow(row)


def save_dataset(ds: Dataset, path: str | Path) -> None:
    if Path(path).suffix.lower() == ".csv":
        save_csv(ds, path)
    else:
        save_ts(ds, path)


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return load_csv(path)
    return load_ts(path)


def load_labels(path: str | Path) -> np.ndarray:
    """Labels file: one integer per line, or a dataset file carrying labels."""
    path = Path(path)
    if path.suffix.lower() in (".ts", ".csv"):
        ds = load_dataset(path)
        if ds.labels is None:
            raise ConfigurationError(f"{path} carries no labels")
        return ds.labels
    try:
        return np.array([int(tok) for tok in path.read_text().split()], dtype=np.int64)
    except ValueError:
        raise ParseError(f"{path}: labels must be integers") from None


# -- preprocessing ----------------------------------------------------------
def znormalize(ds: Dataset, mode: str = "per-instance") -> Dataset:
    """Zero-mean, unit-variance scaling (population std). Constant series map to zeros."""
    x = ds.data
    if mode == "per-instance":
        axes: tuple[int, ...] = (1,)
    elif mode == "per-dataset":
        axes = (0, 1)
    else:
        raise ConfigurationError(f"unknown normalisation mode {mode!r}")
    mu = x.mean(axis=axes, keepdims=True)
    sd = x.std(axis=axes, keepdims=True)
    centred = x - mu
    scale = np.where(sd > 0, sd, 1.0)
    out = np.where(sd > 0, centred / scale, 0.0)
    return Dataset(name=ds.name, data=out, labels=ds.labels, label_names=ds.label_names,
                   warnings=list(ds.warnings))


# -- SPCL representation files ------------------------------------------------
def encode_repr(rs: ReprSet) -> bytes:
    n, t, p = rs.reps.shape
    digest = rs.provenance.encode("utf-8")
    return b"".join([
        SPCL_MAGIC,
        struct.pack("<I", SPCL_VERSION),
        struct.pack("<III", n, t, p),
        rs.reps.astype("<f4").tobytes(order="C"),
        struct.pack("<I", len(digest)),
        digest,
    ])


def decode_repr(blob: bytes) -> ReprSet:
    if len(blob) < 20:
        raise FormatError(f"truncated header: expected at least 20 bytes, got {len(blob)}")
    if blob[:4] != SPCL_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {SPCL_MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != SPCL_VERSION:
        raise FormatError(f"unsupported SPCL version {version}")
    n, t, p = struct.unpack_from("<III", blob, 8)
    payload = 4 * n * t * p
    need = 20 + payload + 4
    if len(blob) < need:
        raise FormatError(f"truncated payload: expected at least {need} bytes, got {len(blob)}")
    reps = np.frombuffer(blob, dtype="<f4", count=n * t * p, offset=20).reshape(n, t, p)
    (dlen,) = struct.unpack_from("<I", blob, 20 + payload)
    if len(blob) != need + dlen:
        raise FormatError(f"truncated payload: expected {need + dlen} bytes, got {len(blob)}")
    digest = blob[need:need + dlen].decode("utf-8")
    return ReprSet(reps=reps.astype(np.float32), provenance=digest)


def write_repr(rs: ReprSet, path: str | Path) -> None:
    Path(path).write_bytes(encode_repr(rs))


def read_repr(path: str | Path) -> ReprSet:
    return decode_repr(Path(path).read_bytes())


def export_instance_csv(rs: ReprSet, path: str | Path, labels: Iterable[int] | None = None) -> None:
    inst = rs.instance_reps
    labels = None if labels is None else list(labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["index"] + (["label"] if labels is not None else []) + [f"p{k}" for k in range(inst.shape[1])]
        w.writerow(header)
        for i, row in enumerate(inst):
            lead = [i] + ([labels[i]] if labels is not None else [])
            w.writerow(lead + [repr(float(v)) for v in row])
