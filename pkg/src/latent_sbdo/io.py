"""Versioned binary containers, threshold records and run logs."""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .density import AnomalyThreshold
from .latent import make_model

MAGIC = b"LSBDART\x00"
FORMAT_VERSION = 1
_KINDS = {"PCA": "pca", "PPCA": "ppca", "FactorAnalysis": "fa"}


class ArtifactError(ValueError):
    pass


class MalformedLogError(ValueError):
    def __init__(self, message, line):
        super().__init__(message)
        self.line = line


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_container(path, kind, meta, arrays):
    """Write ``arrays`` (little-endian float64) with a JSON header.

    Layout: magic, 8-byte kind tag, ``<II`` version and header length,
    header JSON, then the raw arrays in header order.
    """
    tag = kind.encode("ascii")
    if len(tag) > 8:
        raise ValueError("kind tag longer than 8 bytes")
    blobs = []
    entries = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(tag.ljust(8, b"\x00"))
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_container(path, kind=None):
    data = Path(path).read_bytes()
    if len(data) < 24 or data[:8] != MAGIC:
        raise ArtifactError(f"{path}: not an artifact container")
    tag = data[8:16].rstrip(b"\x00").decode("ascii", errors="replace")
    if kind is not None and tag != kind:
        raise ArtifactError(f"{path}: expected a {kind} container, found {tag}")
    version, hlen = struct.unpack("<II", data[16:24])
    if version != FORMAT_VERSION:
        raise ArtifactError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(data[24:24 + hlen])
    except ValueError:
        raise ArtifactError(f"{path}: corrupt header") from None
    pos = 24 + hlen
    arrays = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if pos + 8 * n > len(data):
            raise ArtifactError(f"{path}: truncated array {e['name']!r}")
        arrays[e["name"]] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(e["shape"]).copy()
        pos += 8 * n
    if pos != len(data):
        raise ArtifactError(f"{path}: trailing bytes after the last array")
    return header["meta"], arrays


def save_dataset(path, dataset, extra=None):
    meta = {"seed": dataset.seed, "n_attempts": dataset.n_attempts, **(extra or {})}
    write_container(path, "dataset", meta, {"X": dataset.X, "V": dataset.V,
                                            "lower": dataset.lower, "upper": dataset.upper})


def load_dataset(path):
    meta, arrays = read_container(path, "dataset")
    return meta, arrays


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def save_model(path, model):
    kind = _KINDS[type(model).__name__]
    params = {k: _jsonable(v) for k, v in model.get_params().items()}
    arrays, scalars = {}, {}
    for name, value in vars(model).items():
        if not name.endswith("_") or name.startswith("_"):
            continue
        if isinstance(value, np.ndarray):
            arrays[name] = value
            scalars[name] = {"dtype": value.dtype.str}
        elif isinstance(value, list):
            arrays[name] = np.asarray(value, dtype=np.float64)
            scalars[name] = {"dtype": "list"}
        else:
            scalars[name] = {"value": _jsonable(value)}
    write_container(path, "model", {"kind": kind, "params": params, "attributes": scalars}, arrays)


def load_model(path):
    meta, arrays = read_container(path, "model")
    model = make_model(meta["kind"], **meta["params"])
    for name, spec in meta["attributes"].items():
        if "value" in spec:
            setattr(model, name, spec["value"])
        elif spec["dtype"] == "list":
            setattr(model, name, arrays[name].tolist())
        else:
            setattr(model, name, arrays[name].astype(np.dtype(spec["dtype"])))
    return model


def save_threshold(path, threshold, extra=None):
    record = {"format": "latent-sbdo-threshold", "version": FORMAT_VERSION, **threshold.to_dict(), **(extra or {})}
    Path(path).write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")


def load_threshold(path):
    record = json.loads(Path(path).read_text())
    if record.get("format") != "latent-sbdo-threshold":
        raise ArtifactError(f"{path}: not a threshold record")
    fields = AnomalyThreshold.__dataclass_fields__
    return AnomalyThreshold(**{k: record[k] for k in fields}), record


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_log(path, log, extra=None):
    with open(path, "w") as fh:
        if extra:
            fh.write(json.dumps({"header": extra}, sort_keys=True) + "\n")
        log.to_jsonl(fh)


_REQUIRED = ("iteration", "x", "f", "best_so_far", "evaluated")


def load_log(path):
    """Return ``(header, records)``; raises MalformedLogError naming the bad line."""
    header, records = {}, []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLogError(f"line {lineno}: invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(row, dict):
                raise MalformedLogError(f"line {lineno}: record is not an object", lineno)
            if "header" in row and lineno == 1:
                header = row["header"]
                continue
            missing = [k for k in _REQUIRED if k not in row]
            if missing:
                raise MalformedLogError(f"line {lineno}: missing field(s) {', '.join(missing)}", lineno)
            records.append(row)
    if not records:
        raise MalformedLogError("log has no records", 0)
    return header, records
