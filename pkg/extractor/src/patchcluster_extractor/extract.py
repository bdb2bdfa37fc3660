"""Export per-stage backbone features (and aligned masks) for a dataset.

Consumes and produces the shared cross-component formats: the PCFB tensor
container and the JSON manifest. The output manifest references the emitted
feature tensors (finest stage first), converted masks, and the original
image paths, with everything relative to the output directory's manifest.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from patchcluster.manifest import (
    DatasetManifest,
    ImageRecord,
    load_manifest,
    save_manifest,
)
from patchcluster.tensorfile import write_tensor

from .backbone import build_stage_extractor
from .config import ExtractConfig
from .preprocess import load_image, load_mask

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _safe_name(image_id: str) -> str:
    return image_id.replace("/", "_").replace("\\", "_")


def _write_stage_features(
    outputs: dict[str, torch.Tensor],
    records: list[ImageRecord],
    cfg: ExtractConfig,
    out_dir: Path,
) -> list[ImageRecord]:
    updated = []
    for i, record in enumerate(records):
        rel_paths = []
        for stage in cfg.stages:
            fmap = outputs[str(stage)][i].permute(1, 2, 0).contiguous()
            rel = f"features/{_safe_name(record.id)}_s{stage}.pcfb"
            write_tensor(out_dir / rel, fmap.numpy().astype(np.float32))
            rel_paths.append(rel)
        updated.append(replace(record, feature_paths=rel_paths))
    return updated


def extract_records(
    records: list[ImageRecord],
    cfg: ExtractConfig,
    out_dir,
    category: str = "extracted",
) -> Path:
    """Run the backbone over every record and write a self-contained output
    tree (features/, masks/, manifest.json). Returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    model = build_stage_extractor(cfg)

    processed: list[ImageRecord] = []
    with torch.no_grad():
        for lo in range(0, len(records), cfg.batch_size):
            batch_records = records[lo : lo + cfg.batch_size]
            batch = torch.stack(
                [load_image(r.image_path, cfg) for r in batch_records]
            ).to(cfg.device)
            outputs = {k: v.cpu() for k, v in model(batch).items()}
            processed.extend(
                _write_stage_features(outputs, batch_records, cfg, out_dir)
            )

    final: list[ImageRecord] = []
    for record in processed:
        mask_rel = None
        if record.mask_path is not None:
            mask = load_mask(record.mask_path, cfg)
            mask_rel = f"masks/{_safe_name(record.id)}.pcfb"
            write_tensor(out_dir / mask_rel, mask)
        final.append(replace(record, mask_path=mask_rel))

    manifest = DatasetManifest(
        category=category, image_size=(cfg.crop, cfg.crop), records=final
    )
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    return manifest_path


def extract_manifest(manifest_path, out_dir, cfg: ExtractConfig | None = None) -> Path:
    """Extract features for every record of an existing manifest."""
    cfg = cfg or ExtractConfig()
    manifest = load_manifest(manifest_path)
    missing = [r.id for r in manifest.records if r.image_path is None]
    if missing:
        raise ValueError(f"records without image paths: {missing[:10]}")
    return extract_records(manifest.records, cfg, out_dir, category=manifest.category)


def extract_dir(image_dir, out_dir, cfg: ExtractConfig | None = None) -> Path:
    """Extract features for a plain directory of images (no labels/masks)."""
    cfg = cfg or ExtractConfig()
    image_dir = Path(image_dir).resolve()
    paths = sorted(
        p for p in image_dir.rglob("*") if p.suffix.lower() in _IMAGE_SUFFIXES
    )
    if not paths:
        raise ValueError(f"no images found under {image_dir}")
    records = [
        ImageRecord(
            id=str(p.relative_to(image_dir).with_suffix("")),
            image_path=str(p),
            split="test",
            label="normal",
        )
        for p in paths
    ]
    return extract_records(records, cfg, out_dir, category=image_dir.name)
