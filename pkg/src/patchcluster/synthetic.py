"""Seeded generator of contaminated patch-feature datasets with ground truth.

The generator instantiates the density assumption the scorers rely on:
normal patch vectors for the same contextual location form tight, heavily
sampled clusters, while anomalous vectors are sparse. Each image assigns
grid cells to shared context clusters through a jittered Voronoi layout (so
the clusters are contextual, not tied to fixed coordinates), and anomalous
images carry one rectangular blob whose vectors follow a spatially smooth
broad field: neighboring blob cells are near-duplicates of each other, which
gives anomalies plausible nearest neighbors, but only a handful of them, so
wider neighborhoods reveal the sparsity.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import tensorfile
from .manifest import DatasetManifest, ImageRecord, load_manifest, save_manifest

STRIDE = 8  # pixels of mask resolution per feature-grid cell

# Internal texture constants; scales are relative to normal_sigma.
_CLUSTER_MEAN_SCALE = 8.0
_BLOB_FIELD_CORR = 4.0
_BLOB_ROUGHNESS_RANGE = (0.6, 1.1)  # per-blob cell-to-cell texture scale


@dataclass
class SynthConfig:
    num_images: int = 100
    grid: tuple[int, int] = (28, 28)  # (width, height) of the feature grid
    dim: int = 64
    num_location_clusters: int = 12
    normal_sigma: float = 1.0
    anomaly_sigma: float = 5.0
    anomaly_image_fraction: float = 0.23
    anomaly_area_fraction: float = 0.13  # of the grid, per anomalous image
    seed: int = 0

    def __post_init__(self):
        if self.anomaly_sigma <= self.normal_sigma:
            raise ValueError("anomaly_sigma must exceed normal_sigma")
        for name in ("anomaly_image_fraction", "anomaly_area_fraction"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {value}")
        if self.num_images < 1 or self.dim < 1 or self.num_location_clusters < 1:
            raise ValueError("num_images, dim, num_location_clusters must be >= 1")


def _blob_rect(rng, w: int, h: int, area_fraction: float):
    """Axis-aligned rectangle of roughly the requested area."""
    area = max(1.0, area_fraction * w * h)
    aspect = rng.uniform(0.6, 1.6)
    bw = int(np.clip(round(np.sqrt(area * aspect)), 1, w))
    bh = int(np.clip(round(area / bw), 1, h))
    x0 = int(rng.integers(0, w - bw + 1))
    y0 = int(rng.integers(0, h - bh + 1))
    return x0, y0, bw, bh


def generate_bad_dataset(cfg: SynthConfig, out_dir) -> DatasetManifest:
    """Write feature tensors, masks, a manifest, and a config echo.

    Fully deterministic for a given config: the same seed regenerates
    bit-identical files. Returns the manifest (also saved to
    ``out_dir/manifest.json``).
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    w, h = cfg.grid
    d = cfg.dim
    sigma_n = cfg.normal_sigma

    cluster_means = rng.normal(0.0, 1.0, (cfg.num_location_clusters, d)) * (
        _CLUSTER_MEAN_SCALE * sigma_n
    )
    anchors = np.stack(
        [
            rng.uniform(0, w, cfg.num_location_clusters),
            rng.uniform(0, h, cfg.num_location_clusters),
        ],
        axis=1,
    )
    n_anom = int(round(cfg.num_images * cfg.anomaly_image_fraction))
    anomalous = set(rng.choice(cfg.num_images, size=n_anom, replace=False).tolist())

    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    records = []
    for i in range(cfg.num_images):
        image_id = f"img_{i:04d}"
        jitter = rng.uniform(-2.0, 2.0, size=2)
        shifted = anchors + jitter
        sq = (xs[..., None] - shifted[None, None, :, 0]) ** 2 + (
            ys[..., None] - shifted[None, None, :, 1]
        ) ** 2
        assignment = np.argmin(sq, axis=2)
        values = cluster_means[assignment] + rng.normal(0.0, sigma_n, (h, w, d))

        mask_path = None
        if i in anomalous:
            x0, y0, bw, bh = _blob_rect(rng, w, h, cfg.anomaly_area_fraction)
            center = rng.normal(0.0, _CLUSTER_MEAN_SCALE * sigma_n, d)
            field = rng.normal(0.0, 1.0, (bh, bw, d))
            field = gaussian_filter(field, sigma=(_BLOB_FIELD_CORR, _BLOB_FIELD_CORR, 0))
            field /= field.std() + 1e-12
            rough_scale = rng.uniform(*_BLOB_ROUGHNESS_RANGE)
            rough = rng.normal(0.0, rough_scale * sigma_n, (bh, bw, d))
            values[y0 : y0 + bh, x0 : x0 + bw] = (
                center + cfg.anomaly_sigma * field + rough
            )
            mask = np.zeros((h * STRIDE, w * STRIDE), dtype=np.uint8)
            mask[y0 * STRIDE : (y0 + bh) * STRIDE, x0 * STRIDE : (x0 + bw) * STRIDE] = 1
            mask_path = f"masks/{image_id}.pcfb"
            tensorfile.write_tensor(out_dir / mask_path, mask)

        feature_path = f"features/{image_id}.pcfb"
        tensorfile.write_tensor(out_dir / feature_path, values.astype(np.float32))
        records.append(
            ImageRecord(
                id=image_id,
                feature_paths=[feature_path],
                mask_path=mask_path,
                split="test",
                label="anomalous" if i in anomalous else "normal",
            )
        )

    manifest = DatasetManifest(
        category="synthetic",
        image_size=(h * STRIDE, w * STRIDE),
        records=records,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    (out_dir / "synth.json").write_text(
        json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n"
    )
    # reload so returned record paths are resolved and validated
    return load_manifest(out_dir / "manifest.json")
