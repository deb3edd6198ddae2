"""Dataset manifests (CSV) and the RWCF binary feature cache."""

import csv
import os
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .frontends import ARCH_CODES, CAPACITY_CODES
from ._validation import CorruptionError, InvalidInputError, ManifestError

MANIFEST_COLUMNS = ("clip_id", "path", "label", "fold")
SPLIT_VOCAB = ("train", "valid", "test")

CACHE_MAGIC = b"RWCF"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sIIIQII")
_ARCH_NAMES = {v: k for k, v in ARCH_CODES.items()}
_CAPACITY_NAMES = {v: k for k, v in CAPACITY_CODES.items()}


@dataclass(frozen=True)
class ManifestRow:
    clip_id: str
    path: str
    label: str
    fold: object


@dataclass(frozen=True)
class DatasetManifest:
    rows: tuple
    name: str = ""
    base_dir: str = ""

    def __len__(self):
        return len(self.rows)

    @property
    def clip_ids(self):
        return [r.clip_id for r in self.rows]

    @property
    def labels(self):
        return np.array([r.label for r in self.rows])

    @property
    def folds(self):
        return [r.fold for r in self.rows]

    @property
    def is_split(self):
        return bool(self.rows) and isinstance(self.rows[0].fold, str)

    def split_sizes(self):
        counts = Counter(self.folds)
        return tuple(counts.get(tag, 0) for tag in SPLIT_VOCAB)

    def resolve(self, row):
        """Absolute audio path; relative paths are taken from the manifest's directory."""
        path = row.path
        if not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        if not os.path.exists(path):
            raise FileNotFoundError(f"clip {row.clip_id!r}: {path} does not exist")
        return path


def parse_manifest(path, name=None):
    """Read a ``clip_id,path,label,fold`` CSV.

    The fold column is either all integers (k-fold) or all split tags
    (train/valid/test).  Errors carry the offending line number.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ManifestError("empty manifest", 1) from None
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"missing columns: {', '.join(missing)}", 1)
        col = {c: header.index(c) for c in MANIFEST_COLUMNS}
        rows, seen, vocab = [], {}, None
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not f.strip() for f in record):
                continue
            if len(record) < len(header):
                raise ManifestError(f"expected {len(header)} fields, got {len(record)}", lineno)
            clip_id, clip_path, label, fold = (record[col[c]].strip() for c in MANIFEST_COLUMNS)
            if not clip_id:
                raise ManifestError("empty clip_id", lineno)
            if clip_id in seen:
                raise ManifestError(
                    f"duplicate clip_id {clip_id!r} (first seen on line {seen[clip_id]})", lineno)
            if not label:
                raise ManifestError(f"clip {clip_id!r} has an empty label", lineno)
            if fold.lstrip("-").isdigit():
                kind, fold_value = "int", int(fold)
                if fold_value < 0:
                    raise ManifestError(f"negative fold index {fold_value}", lineno)
            elif fold.lower() in SPLIT_VOCAB:
                kind, fold_value = "split", fold.lower()
            else:
                raise ManifestError(f"fold must be an integer or one of {SPLIT_VOCAB}, got {fold!r}", lineno)
            if vocab is None:
                vocab = kind
            elif vocab != kind:
                raise ManifestError("mixed fold vocabularies (integers and split tags)", lineno)
            seen[clip_id] = lineno
            rows.append(ManifestRow(clip_id, clip_path, label, fold_value))
    base = os.path.dirname(os.path.abspath(path))
    return DatasetManifest(tuple(rows), name or os.path.splitext(os.path.basename(path))[0], base)


def write_manifest(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([r.clip_id, r.path, r.label, r.fold])


# --------------------------------------------------------------------------
# Feature cache
# --------------------------------------------------------------------------

@dataclass
class FeatureSet:
    """A block of feature vectors sharing one (arch, capacity, seed) provenance."""

    arch_id: str
    capacity: str
    seed: int
    clip_ids: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            self.values = self.values.reshape(len(self.clip_ids), -1)
        if self.values.shape[0] != len(self.clip_ids):
            raise InvalidInputError("one feature row per clip id is required")

    @property
    def dim(self):
        return self.values.shape[1]

    def __len__(self):
        return len(self.clip_ids)


def encode_cache(fs):
    out = [_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, ARCH_CODES[fs.arch_id],
                        CAPACITY_CODES[fs.capacity], int(fs.seed) % (1 << 64), fs.dim, len(fs))]
    rows = np.ascontiguousarray(fs.values, dtype="<f4")
    for cid, row in zip(fs.clip_ids, rows):
        raw = str(cid).encode("utf-8")
        if len(raw) > 0xFFFF:
            raise InvalidInputError(f"clip id too long: {cid[:40]}...")
        out.append(struct.pack("<H", len(raw)) + raw + row.tobytes())
    return b"".join(out)


def decode_cache(data):
    if len(data) < _HEADER.size:
        raise CorruptionError("cache shorter than its header")
    magic, version, arch, cap, seed, dim, count = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise CorruptionError(f"bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise CorruptionError(f"unsupported cache version {version}")
    if arch not in _ARCH_NAMES or cap not in _CAPACITY_NAMES:
        raise CorruptionError(f"unknown arch/capacity codes {arch}/{cap}")
    pos = _HEADER.size
    ids, values = [], np.empty((count, dim), dtype=np.float32)
    row_bytes = 4 * dim
    for i in range(count):
        if pos + 2 > len(data):
            raise CorruptionError(f"truncated before record {i}")
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + n + row_bytes > len(data):
            raise CorruptionError(f"truncated inside record {i}")
        ids.append(data[pos:pos + n].decode("utf-8"))
        pos += n
        values[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        pos += row_bytes
    if pos != len(data):
        raise CorruptionError(f"{len(data) - pos} trailing bytes after {count} records")
    return FeatureSet(_ARCH_NAMES[arch], _CAPACITY_NAMES[cap], seed, ids, values)


def write_cache(fs, path):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(encode_cache(fs))
    os.replace(tmp, path)


def read_cache(path):
    with open(path, "rb") as fh:
        return decode_cache(fh.read())
