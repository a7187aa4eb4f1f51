"""File formats: CVOL volumes, cohort manifests, key/value configs, checkpoints.

CVOL (binary, little-endian)
    magic "CVOL" | version u32=1 | ndim u32 | dims u32*ndim
    | dtype u8 (0=float32, 1=float64) | reserved 3 bytes=0
    | payload, row-major

Manifest
    UTF-8 CSV, header `subject_id,path,age,sex,cohort,severity,mask_path`,
    optional columns empty for healthy rows. Paths are relative to the
    manifest's directory; the dataset foreground mask lives next to it as
    `foreground.cvol`.

Checkpoint / calibration container
    magic "CCKP" | version u32=1 | kind (u32 length + utf8)
    | header u64 length + JSON (sorted keys)
    | named arrays as raw CVOL blobs, in header order
    | sha256 over all preceding bytes

All writers are deterministic: identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

__all__ = [
    "write_volume", "read_volume", "volume_to_bytes", "volume_from_bytes",
    "ManifestRow", "CohortManifest", "write_manifest", "read_manifest",
    "write_kv", "read_kv",
    "save_container", "load_container", "container_checksum",
]

_MAGIC = b"CVOL"
_VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8"}
_DTYPE_CODES = {"<f4": 0, "<f8": 1}


# ---- CVOL volumes ----------------------------------------------------------

def volume_to_bytes(arr: np.ndarray, dtype: str = "<f8") -> bytes:
    if dtype not in _DTYPE_CODES:
        raise FormatError(f"unsupported CVOL dtype {dtype!r}")
    arr = np.ascontiguousarray(arr)
    out = io.BytesIO()
    out.write(_MAGIC)
    out.write(struct.pack("<I", _VERSION))
    out.write(struct.pack("<I", arr.ndim))
    out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    out.write(struct.pack("<B3x", _DTYPE_CODES[dtype]))
    out.write(arr.astype(dtype).tobytes())
    return out.getvalue()


def volume_from_bytes(raw: bytes) -> np.ndarray:
    if raw[:4] != _MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r} at byte offset 0, expected {_MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    if version != _VERSION:
        raise FormatError(f"unsupported CVOL version {version} at byte offset {off}")
    off += 4
    (ndim,) = struct.unpack_from("<I", raw, off)
    off += 4
    if ndim == 0 or ndim > 8:
        raise FormatError(f"implausible ndim {ndim} at byte offset 8")
    if len(raw) < off + 4 * ndim + 4:
        raise FormatError(f"truncated header at byte offset {off}")
    dims = struct.unpack_from(f"<{ndim}I", raw, off)
    off += 4 * ndim
    (code,) = struct.unpack_from("<B", raw, off)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code} at byte offset {off}")
    off += 4  # dtype byte + 3 reserved
    dt = np.dtype(_DTYPES[code])
    expected = int(np.prod(dims)) * dt.itemsize
    payload = raw[off:]
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload at byte offset {off}: expected {expected} bytes "
            f"for dims {tuple(dims)}, got {len(payload)}")
    return np.frombuffer(payload, dtype=dt).reshape(dims).astype(np.float64)


def write_volume(path: str | Path, arr: np.ndarray, dtype: str = "<f8") -> None:
    Path(path).write_bytes(volume_to_bytes(arr, dtype))


def read_volume(path: str | Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise InputError(f"cannot read volume {path}: {e}") from e
    return volume_from_bytes(raw)


# ---- cohort manifest ---------------------------------------------------------

_MANIFEST_HEADER = ["subject_id", "path", "age", "sex", "cohort", "severity", "mask_path"]
COHORTS = ("train", "validation", "test_healthy", "disease")


@dataclass
class ManifestRow:
    subject_id: str
    path: str
    age: float
    sex: int
    cohort: str
    severity: float | None = None
    mask_path: str | None = None


@dataclass
class CohortManifest:
    rows: list[ManifestRow]
    root: Path
    foreground_path: Path = field(init=False)

    def __post_init__(self):
        self.root = Path(self.root)
        self.foreground_path = self.root / "foreground.cvol"

    def cohort(self, name: str) -> list[ManifestRow]:
        return [r for r in self.rows if r.cohort == name]

    def volume_path(self, row: ManifestRow) -> Path:
        return self.root / row.path

    def mask_path_of(self, row: ManifestRow) -> Path | None:
        return self.root / row.mask_path if row.mask_path else None

    def __eq__(self, other):
        return isinstance(other, CohortManifest) and self.rows == other.rows


def write_manifest(manifest: CohortManifest, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(_MANIFEST_HEADER)
        for r in manifest.rows:
            w.writerow([
                r.subject_id, r.path, repr(float(r.age)), r.sex, r.cohort,
                "" if r.severity is None else repr(float(r.severity)),
                "" if r.mask_path is None else r.mask_path,
            ])


def read_manifest(path: str | Path) -> CohortManifest:
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read manifest {path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _MANIFEST_HEADER:
            raise FormatError(f"bad manifest header in {path}: {header}")
        rows = []
        for rec in reader:
            if len(rec) != len(_MANIFEST_HEADER):
                raise FormatError(f"bad manifest row in {path}: {rec}")
            sid, vpath, age, sex, cohort, severity, mask = rec
            if cohort not in COHORTS:
                raise FormatError(f"unknown cohort {cohort!r} for subject {sid}")
            rows.append(ManifestRow(
                subject_id=sid, path=vpath, age=float(age), sex=int(sex),
                cohort=cohort,
                severity=float(severity) if severity else None,
                mask_path=mask or None,
            ))
    ids = [r.subject_id for r in rows]
    if len(set(ids)) != len(ids):
        raise FormatError(f"duplicate subject ids in {path}")
    return CohortManifest(rows=rows, root=path.parent)


# ---- key/value config files --------------------------------------------------

def write_kv(pairs: dict[str, str], path: str | Path) -> None:
    lines = [f"{k} = {v}" for k, v in pairs.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_kv(path: str | Path) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e}") from e
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


# ---- checkpoint / calibration container ---------------------------------------

_CONTAINER_MAGIC = b"CCKP"
_CONTAINER_VERSION = 1


def save_container(path: str | Path, kind: str, meta: dict,
                   arrays: dict[str, np.ndarray]) -> str:
    """Write a versioned container; returns the hex content checksum."""
    names = sorted(arrays)
    header = json.dumps({"arrays": names, "meta": meta},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = io.BytesIO()
    out.write(_CONTAINER_MAGIC)
    out.write(struct.pack("<I", _CONTAINER_VERSION))
    kind_b = kind.encode("utf-8")
    out.write(struct.pack("<I", len(kind_b)))
    out.write(kind_b)
    out.write(struct.pack("<Q", len(header)))
    out.write(header)
    for name in names:
        blob = volume_to_bytes(arrays[name])
        out.write(struct.pack("<Q", len(blob)))
        out.write(blob)
    body = out.getvalue()
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)
    return digest.hex()


def load_container(path: str | Path, expect_kind: str | None = None
                   ) -> tuple[str, dict, dict[str, np.ndarray], str]:
    """Read a container, verifying checksum; returns (kind, meta, arrays, checksum)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    if len(raw) < 44 or raw[:4] != _CONTAINER_MAGIC:
        raise FormatError(f"{path}: bad container magic at byte offset 0")
    body, digest = raw[:-32], raw[-32:]
    actual = hashlib.sha256(body).digest()
    if actual != digest:
        raise FormatError(f"{path}: checksum mismatch, file corrupt")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    if version != _CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    off += 4
    (klen,) = struct.unpack_from("<I", body, off)
    off += 4
    kind = body[off:off + klen].decode("utf-8")
    off += klen
    if expect_kind is not None and kind != expect_kind:
        raise FormatError(f"{path}: container kind {kind!r}, expected {expect_kind!r}")
    (hlen,) = struct.unpack_from("<Q", body, off)
    off += 8
    header = json.loads(body[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for name in header["arrays"]:
        (blen,) = struct.unpack_from("<Q", body, off)
        off += 8
        arrays[name] = volume_from_bytes(body[off:off + blen])
        off += blen
    if off != len(body):
        raise FormatError(f"{path}: {len(body) - off} trailing bytes at offset {off}")
    return kind, header["meta"], arrays, actual.hex()


def container_checksum(path: str | Path) -> str:
    raw = Path(path).read_bytes()
    if len(raw) < 32:
        raise FormatError(f"{path}: too short to be a container")
    return raw[-32:].hex()
