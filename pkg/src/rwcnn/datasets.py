"""Manifest builders for locally supplied copies of the benchmark datasets.

Nothing is downloaded.  Each builder walks a directory laid out the way the
dataset is distributed and writes a ``clip_id,path,label,fold`` manifest with
paths relative to the manifest's own directory.  Audio must be WAV; convert
``.au``/``.mp3`` originals first (for example with ``ffmpeg``).
"""

import csv
import os

from .cache import ManifestRow, write_manifest
from .evaluation import stratified_folds
from ._validation import InvalidInputError

DATASETS = ("gtzan", "ballroom", "urbansound8k")
GTZAN_SPLIT_FILES = {"train": "train_filtered.txt", "valid": "valid_filtered.txt",
                     "test": "test_filtered.txt"}


def _wav_name(name):
    return os.path.splitext(name)[0] + ".wav"


def _rel(path, out_dir):
    return os.path.relpath(path, out_dir)


def gtzan_rows(root, splits_dir, out_dir):
    """Fault-filtered GTZAN: one split file per tag, lines like ``blues/blues.00000.au``."""
    rows = []
    for tag, fname in GTZAN_SPLIT_FILES.items():
        listing = os.path.join(splits_dir, fname)
        if not os.path.exists(listing):
            raise FileNotFoundError(f"missing split listing {listing}")
        with open(listing, encoding="utf-8") as fh:
            for line in fh:
                entry = line.strip()
                if not entry:
                    continue
                label = entry.split("/")[0]
                path = os.path.join(root, _wav_name(entry))
                clip_id = os.path.splitext(os.path.basename(entry))[0]
                rows.append(ManifestRow(clip_id, _rel(path, out_dir), label, tag))
    return rows


def ballroom_rows(root, out_dir, k=10, seed=0):
    """Extended Ballroom: ``<root>/<style>/<clip>.wav``; stratified k folds are drawn."""
    found = []
    for label in sorted(os.listdir(root)):
        sub = os.path.join(root, label)
        if not os.path.isdir(sub):
            continue
        for name in sorted(os.listdir(sub)):
            if name.lower().endswith(".wav"):
                found.append((f"{label}_{os.path.splitext(name)[0]}", os.path.join(sub, name), label))
    if not found:
        raise InvalidInputError(f"no WAV files under {root}")
    plan = stratified_folds([label for _, _, label in found], k, seed)
    return [ManifestRow(cid, _rel(path, out_dir), label, int(f))
            for (cid, path, label), f in zip(found, plan.assignment)]


def urbansound8k_rows(root, out_dir):
    """UrbanSound8K: the ten predefined folds from ``metadata/UrbanSound8K.csv``."""
    meta = os.path.join(root, "metadata", "UrbanSound8K.csv")
    if not os.path.exists(meta):
        raise FileNotFoundError(f"missing metadata file {meta}")
    rows = []
    with open(meta, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            fold = int(rec["fold"])
            path = os.path.join(root, "audio", f"fold{fold}", rec["slice_file_name"])
            rows.append(ManifestRow(os.path.splitext(rec["slice_file_name"])[0],
                                    _rel(path, out_dir), rec["class"], fold - 1))
    return rows


def build_manifest(dataset, root, out, splits_dir=None, seed=0):
    out_dir = os.path.dirname(os.path.abspath(out))
    if dataset == "gtzan":
        if splits_dir is None:
            raise InvalidInputError("gtzan needs the directory holding the fault-filtered split listings")
        rows = gtzan_rows(root, splits_dir, out_dir)
    elif dataset == "ballroom":
        rows = ballroom_rows(root, out_dir, seed=seed)
    elif dataset == "urbansound8k":
        rows = urbansound8k_rows(root, out_dir)
    else:
        raise InvalidInputError(f"dataset must be one of {DATASETS}, got {dataset!r}")
    write_manifest(out, rows)
    return rows
