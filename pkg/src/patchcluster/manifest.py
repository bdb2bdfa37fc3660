"""Dataset manifests and construction of the three blind-detection settings.

A manifest is a JSON document (``schema_version`` 1) listing, per image, the
feature tensor paths, an optional ground-truth mask, split tag, and label.
Relative paths are resolved against the manifest's directory on load.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import tensorfile

SCHEMA_VERSION = 1
TENSOR_SUFFIX = ".pcfb"

SPLITS = ("train", "test")
LABELS = ("normal", "anomalous")


class ManifestError(ValueError):
    """Malformed or inconsistent manifest."""


class EmptySettingError(ManifestError):
    """A requested setting selects zero records."""


class BadSetting(Enum):
    """The three unlabeled-set regimes a bank can be built from."""

    MIX = "mix"
    TEST = "test"
    ANO = "ano"

    @classmethod
    def parse(cls, value) -> "BadSetting":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ManifestError(f"unknown setting {value!r}") from None


@dataclass
class ImageRecord:
    id: str
    feature_paths: list[str] = field(default_factory=list)
    mask_path: str | None = None
    image_path: str | None = None
    split: str = "test"
    label: str = "normal"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"record {self.id}: bad split {self.split!r}")
        if self.label not in LABELS:
            raise ManifestError(f"record {self.id}: bad label {self.label!r}")


@dataclass
class DatasetManifest:
    category: str
    image_size: tuple[int, int]  # (height, width) in pixels
    records: list[ImageRecord]
    schema_version: int = SCHEMA_VERSION


def derive_label(mask: np.ndarray) -> str:
    """Label implied by a mask: anomalous iff any pixel is nonzero."""
    return "anomalous" if np.any(mask != 0) else "normal"


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "schema_version": manifest.schema_version,
        "category": manifest.category,
        "image_size": list(manifest.image_size),
        "records": [
            {
                "id": r.id,
                "feature_paths": list(r.feature_paths),
                "mask_path": r.mask_path,
                "image_path": r.image_path,
                "split": r.split,
                "label": r.label,
            }
            for r in manifest.records
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _resolve(base: Path, p: str | None) -> str | None:
    if p is None:
        return None
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Load a manifest, resolving relative paths against its directory.

    Validates the schema version, id uniqueness, and (by default) that every
    referenced file exists.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(
            f"unsupported schema_version {doc.get('schema_version')!r} in {path}"
        )
    base = path.parent
    records = []
    for rec in doc["records"]:
        records.append(
            ImageRecord(
                id=rec["id"],
                feature_paths=[_resolve(base, p) for p in rec.get("feature_paths", [])],
                mask_path=_resolve(base, rec.get("mask_path")),
                image_path=_resolve(base, rec.get("image_path")),
                split=rec.get("split", "test"),
                label=rec.get("label", "normal"),
            )
        )
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ManifestError(f"duplicate record ids: {dupes}")
    manifest = DatasetManifest(
        category=doc["category"],
        image_size=tuple(doc["image_size"]),
        records=records,
    )
    if check_files:
        missing = [
            p
            for r in records
            for p in [*r.feature_paths, r.mask_path, r.image_path]
            if p is not None and not Path(p).exists()
        ]
        if missing:
            raise ManifestError(f"missing files referenced by {path}: {missing[:10]}")
    return manifest


def build_bad_setting(manifest: DatasetManifest, setting) -> list[ImageRecord]:
    """Select the records participating in a setting, sorted by id.

    Mix takes every record, Test the test split, Ano the anomalous test
    records. An Ano selection with no anomalous records is an error.
    """
    setting = BadSetting.parse(setting)
    if setting is BadSetting.MIX:
        chosen = list(manifest.records)
    elif setting is BadSetting.TEST:
        chosen = [r for r in manifest.records if r.split == "test"]
    else:
        chosen = [
            r for r in manifest.records if r.split == "test" and r.label == "anomalous"
        ]
        if not chosen:
            raise EmptySettingError("empty setting: no anomalous records")
    return sorted(chosen, key=lambda r: r.id)


def load_mask(record: ImageRecord, image_size: tuple[int, int]) -> np.ndarray:
    """Ground-truth mask for a record; all-zero when no mask file is listed."""
    if record.mask_path is None:
        return np.zeros(image_size, dtype=np.uint8)
    mask = tensorfile.read_tensor(record.mask_path)
    if mask.ndim != 2:
        raise ManifestError(f"mask for {record.id} is not 2-D")
    if mask.shape != tuple(image_size):
        raise ManifestError(
            f"mask for {record.id} has shape {mask.shape}, expected {tuple(image_size)}"
        )
    return mask


def apply_mask_labels(manifest: DatasetManifest) -> DatasetManifest:
    """Re-derive labels from mask contents for records with tensor masks.

    The mask is the source of truth: a listed label that disagrees with the
    mask is replaced. Records whose mask is not a tensor file (or absent) keep
    their label but absent masks force ``normal``.
    """
    records = []
    for r in manifest.records:
        if r.mask_path is None:
            records.append(replace(r, label="normal"))
        elif r.mask_path.endswith(TENSOR_SUFFIX):
            mask = load_mask(r, manifest.image_size)
            records.append(replace(r, label=derive_label(mask)))
        else:
            records.append(replace(r))
    return replace(manifest, records=records)
