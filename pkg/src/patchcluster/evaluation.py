"""Threshold-free detection metrics and per-run report assembly.

AUROC is computed as the normalized Mann-Whitney U statistic (ties count
half). The per-region-overlap score (PRO) averages, at each threshold, the
recall of every 8-connected ground-truth region, and integrates that curve
against the global false-positive rate up to a limit (default 0.3),
normalized by the limit. Thresholds default to 200 quantile-spaced levels of
the pooled scores, which makes the score invariant under strictly increasing
transforms.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import label as _cc_label
from scipy.stats import rankdata

from .manifest import BadSetting, DatasetManifest, build_bad_setting, derive_label, load_mask


class UndefinedMetricError(ValueError):
    """Metric has no value on this input (single class, no regions, ...)."""


class MissingScoreError(KeyError):
    """A record selected by the setting has no score attached."""


@dataclass
class Region:
    """One 8-connected component of a ground-truth mask."""

    id: int
    rows: np.ndarray
    cols: np.ndarray

    @property
    def size(self) -> int:
        return len(self.rows)


@dataclass
class EvalReport:
    category: str
    setting: str
    image_auroc: float | None
    pixel_auroc: float
    pro: float
    image_scores: dict[str, float]
    config: dict = field(default_factory=dict)


def auroc(scores, labels) -> float:
    """Probability a random anomalous score outranks a random normal one."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("undefined metric: both classes required")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pixel_auroc(maps, masks) -> float:
    """AUROC over the pooled pixels of all score maps."""
    if len(maps) != len(masks):
        raise ValueError("need one mask per score map")
    for m, g in zip(maps, masks):
        if m.shape != g.shape:
            raise ValueError(f"score map shape {m.shape} != mask shape {g.shape}")
    scores = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps])
    labels = np.concatenate([(np.asarray(g) != 0).ravel() for g in masks]).astype(np.int8)
    return auroc(scores, labels)


_EIGHT = np.ones((3, 3), dtype=int)


def connected_components(mask) -> list[Region]:
    """8-connected components of a binary mask, ids in row-major discovery
    order (1-based)."""
    binary = np.asarray(mask) != 0
    labeled, count = _cc_label(binary, structure=_EIGHT)
    if count == 0:
        return []
    flat = labeled.ravel()
    nonzero = flat != 0
    first_seen: dict[int, int] = {}
    values = flat[nonzero]
    positions = np.flatnonzero(nonzero)
    for pos, val in zip(positions, values):
        if val not in first_seen:
            first_seen[int(val)] = int(pos)
            if len(first_seen) == count:
                break
    order = sorted(first_seen, key=first_seen.get)
    regions = []
    for new_id, old in enumerate(order, start=1):
        rows, cols = np.nonzero(labeled == old)
        regions.append(Region(id=new_id, rows=rows, cols=cols))
    return regions


def _pro_curve(maps, masks, thresholds):
    """(fpr, mean-region-overlap) points for descending thresholds, starting
    from the empty prediction at (0, 0)."""
    regions = [connected_components(g) for g in masks]
    if not any(regions):
        raise UndefinedMetricError("undefined metric: no anomalous regions")
    negatives = [np.asarray(g) == 0 for g in masks]
    total_neg = sum(int(n.sum()) for n in negatives)
    if total_neg == 0:
        raise UndefinedMetricError("undefined metric: no normal pixels")
    fprs = [0.0]
    pros = [0.0]
    for t in thresholds:
        overlaps = []
        fp = 0
        for m, regs, neg in zip(maps, regions, negatives):
            pred = np.asarray(m) >= t
            for r in regs:
                overlaps.append(pred[r.rows, r.cols].sum() / r.size)
            fp += int(np.logical_and(pred, neg).sum())
        fprs.append(fp / total_neg)
        pros.append(float(np.mean(overlaps)))
    return np.asarray(fprs), np.asarray(pros)


def pro_score(
    maps,
    masks,
    fpr_limit: float = 0.3,
    num_thresholds: int = 200,
    thresholds=None,
) -> float:
    """Area under the per-region-overlap curve up to ``fpr_limit``,
    normalized by the limit.

    ``thresholds`` overrides the default quantile sweep; predictions use
    ``score >= threshold`` and the curve is integrated by trapezoid after
    clipping at the FPR limit.
    """
    if not 0.0 < fpr_limit <= 1.0:
        raise ValueError("fpr_limit must be in (0, 1]")
    if thresholds is None:
        pooled = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in maps])
        thresholds = np.quantile(pooled, np.linspace(0.0, 1.0, num_thresholds))
    thresholds = np.sort(np.asarray(thresholds, dtype=np.float64))[::-1]
    fprs, pros = _pro_curve(maps, masks, thresholds)
    inside = fprs <= fpr_limit
    x = fprs[inside]
    y = pros[inside]
    beyond = np.flatnonzero(~inside)
    if len(beyond) and len(x):
        j = beyond[0]
        x0, y0 = fprs[j - 1], pros[j - 1]
        x1, y1 = fprs[j], pros[j]
        y_lim = y0 if x1 == x0 else y0 + (y1 - y0) * (fpr_limit - x0) / (x1 - x0)
        x = np.append(x, fpr_limit)
        y = np.append(y, y_lim)
    area = float(np.trapezoid(y, x))
    return area / fpr_limit


def evaluate_run(
    manifest: DatasetManifest,
    setting,
    pixel_maps: dict[str, np.ndarray],
    image_scores: dict[str, float],
    config: dict | None = None,
) -> EvalReport:
    """Assemble the metric report for one scored run.

    Image labels are re-derived from the masks, and image AUROC is reported
    only when both classes are present (the all-anomalous setting has none).
    """
    setting = BadSetting.parse(setting)
    records = build_bad_setting(manifest, setting)
    missing = [r.id for r in records if r.id not in pixel_maps or r.id not in image_scores]
    if missing:
        raise MissingScoreError(f"no scores for records: {missing[:10]}")
    maps, masks, labels, per_image = [], [], [], {}
    for r in records:
        mask = load_mask(r, manifest.image_size)
        maps.append(np.asarray(pixel_maps[r.id], dtype=np.float64))
        masks.append(mask)
        labels.append(1 if derive_label(mask) == "anomalous" else 0)
        per_image[r.id] = float(image_scores[r.id])
    img_auroc = None
    if 0 < sum(labels) < len(labels):
        img_auroc = auroc([per_image[r.id] for r in records], labels)
    return EvalReport(
        category=manifest.category,
        setting=setting.value,
        image_auroc=img_auroc,
        pixel_auroc=pixel_auroc(maps, masks),
        pro=pro_score(maps, masks),
        image_scores=per_image,
        config=dict(config or {}),
    )


def save_report(report: EvalReport, path) -> None:
    doc = {
        "category": report.category,
        "setting": report.setting,
        "image_auroc": report.image_auroc,
        "pixel_auroc": report.pixel_auroc,
        "pro": report.pro,
        "image_scores": report.image_scores,
        "config": report.config,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_report(path) -> EvalReport:
    doc = json.loads(Path(path).read_text())
    return EvalReport(**doc)


_SETTING_ORDER = {"mix": 0, "test": 1, "ano": 2}
_METRICS = (("image_auroc", "image"), ("pixel_auroc", "pixel"), ("pro", "pro"))


def reports_to_csv(reports) -> str:
    """Tabulate reports as setting/metric rows with one column per category."""
    categories = sorted({r.category for r in reports})
    by_key = {(r.setting, r.category): r for r in reports}
    settings = sorted({r.setting for r in reports}, key=lambda s: _SETTING_ORDER.get(s, 9))
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["setting", "metric", *categories, "mean"])
    for setting in settings:
        for attr, name in _METRICS:
            values = [getattr(by_key[(setting, c)], attr, None) if (setting, c) in by_key else None for c in categories]
            present = [v for v in values if v is not None]
            if not present:
                continue
            row = [setting, name]
            row += [f"{v:.4f}" if v is not None else "" for v in values]
            row.append(f"{float(np.mean(present)):.4f}")
            writer.writerow(row)
    return buf.getvalue()
