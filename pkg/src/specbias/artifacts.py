"""On-disk formats: canonical JSON, manifests, and binary32 matrix payloads.

Epochs are stored as ``<stem>.epochs.f32`` plus a ``<stem>.epochs.json`` sidecar,
embeddings as ``<stem>.emb.f32`` plus ``<stem>.emb.json``. Payloads are
little-endian IEEE-754 binary32, row-major. Every manifest records the SHA-256
of its payload so corruption is detectable.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
_F32 = np.dtype("<f4")


class ArtifactError(ValueError):
    """Malformed, truncated or corrupted artifact."""


def _canon(obj):
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canon(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v} cannot be written to a report")
        return _Float(v)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _canon(obj.to_dict())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


class _Float(float):
    pass


def _fmt_float(v: float) -> str:
    s = format(v, ".17g")
    if not any(c in s for c in ".e"):
        s += ".0"
    return s


def _iterencode(o):
    if isinstance(o, dict):
        yield "{"
        for i, k in enumerate(sorted(o)):
            if i:
                yield ","
            yield json.dumps(k) + ":"
            yield from _iterencode(o[k])
        yield "}"
    elif isinstance(o, list):
        yield "["
        for i, v in enumerate(o):
            if i:
                yield ","
            yield from _iterencode(v)
        yield "]"
    elif isinstance(o, _Float):
        yield _fmt_float(float(o))
    else:
        yield json.dumps(o)


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, floats at 17 significant digits; NaN/inf rejected."""
    return "".join(_iterencode(_canon(obj))) + "\n"


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def emit_report(report, path) -> Path:
    """Write ``report`` (dict or object with ``to_dict``) as canonical JSON."""
    text = canonical_json(report)
    return atomic_write(path, text)


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _now() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible artifacts
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch else \
        _dt.datetime.now(_dt.timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def _payload_bytes(mat: np.ndarray) -> bytes:
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise ValueError("payload must be a 2-D matrix")
    if not np.all(np.isfinite(mat)):
        row = int(np.argwhere(~np.isfinite(mat))[0, 0])
        raise ValueError(f"non-finite value in row {row}")
    return np.ascontiguousarray(mat, dtype=_F32).tobytes()


def _stem_paths(path, ext):
    path = Path(path)
    name = path.name
    for suffix in (f".{ext}.f32", f".{ext}.json"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return path.with_name(f"{name}.{ext}.f32"), path.with_name(f"{name}.{ext}.json")


def write_matrix(path, mat: np.ndarray, kind: str, ext: str, extra: dict) -> Path:
    payload_path, manifest_path = _stem_paths(path, ext)
    raw = _payload_bytes(mat)
    manifest = {
        "kind": kind,
        "version": FORMAT_VERSION,
        "shape": list(np.shape(mat)),
        "dtype": "float32-le",
        "payload": payload_path.name,
        "payload_sha256": hashlib.sha256(raw).hexdigest(),
        "created": _now(),
        **extra,
    }
    atomic_write(payload_path, raw)
    atomic_write(manifest_path, canonical_json(manifest))
    return payload_path


def read_matrix(path, ext: str, kind: str, check_digest: bool = True) -> tuple[np.ndarray, dict]:
    payload_path, manifest_path = _stem_paths(path, ext)
    if not manifest_path.exists():
        raise ArtifactError(f"missing manifest {manifest_path}")
    manifest = read_json(manifest_path)
    if manifest.get("kind") != kind:
        raise ArtifactError(f"{manifest_path}: expected kind {kind!r}, got {manifest.get('kind')!r}")
    if manifest.get("version", 0) > FORMAT_VERSION:
        raise ArtifactError(f"{manifest_path}: unsupported format version {manifest['version']}")
    n, d = manifest["shape"]
    raw = payload_path.read_bytes()
    row_bytes = d * _F32.itemsize
    if len(raw) % row_bytes:
        raise ArtifactError(
            f"{payload_path}: truncated payload ({len(raw)} bytes is not a whole number of "
            f"{d}-value rows)")
    found = len(raw) // row_bytes
    if found != n:
        raise ArtifactError(f"{payload_path}: manifest expects {n} rows, found {found}")
    if check_digest and hashlib.sha256(raw).hexdigest() != manifest.get("payload_sha256"):
        raise ArtifactError(f"{payload_path}: payload digest mismatch")
    mat = np.frombuffer(raw, dtype=_F32).reshape(n, d)
    bad = ~np.isfinite(mat)
    if bad.any():
        raise ArtifactError(f"{payload_path}: non-finite value in row {int(np.argwhere(bad)[0, 0])}")
    return mat.astype(np.float64), manifest


def verify(path) -> dict:
    """Re-check a manifest and its payload digest. Returns the manifest."""
    path = Path(path)
    name = path.name
    if name.endswith(".json") and not (name.endswith(".epochs.json") or name.endswith(".emb.json")):
        doc = read_json(path)
        body = {k: v for k, v in doc.items() if k != "digest"}
        if "digest" in doc and doc["digest"] != digest(body):
            raise ArtifactError(f"{path}: report digest mismatch")
        return doc
    for ext, kind in (("epochs", "epochs"), ("emb", "embeddings")):
        if name.endswith(f".{ext}.f32") or name.endswith(f".{ext}.json"):
            return read_matrix(path, ext, kind)[1]
    raise ArtifactError(f"{path}: not a recognized artifact")
