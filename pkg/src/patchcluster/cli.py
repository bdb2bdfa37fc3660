"""Command-line pipeline: import, bank, score, eval, synth, heatmap.

Each command is a thin orchestration of the library modules; outputs land
only under the requested output paths, and identical inputs plus seeds
produce byte-identical reports. Failures exit nonzero with a one-line JSON
error object on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, bank as bank_mod, evaluation, features, scoring, synthetic, tensorfile
from .manifest import (
    BadSetting,
    DatasetManifest,
    ImageRecord,
    ManifestError,
    apply_mask_labels,
    build_bad_setting,
    load_manifest,
    save_manifest,
)

SETTINGS = ("mix", "test", "ano", "one-class")


class CliError(ValueError):
    pass


def _default_workers() -> int:
    return int(os.environ.get("PATCHCLUSTER_WORKERS", "1"))


def _records_for(manifest: DatasetManifest, setting: str, role: str):
    """Records used for a stage; one-class banks come from the train split
    while scoring and evaluation stay on the test split."""
    if setting == "one-class":
        split = "train" if role == "bank" else "test"
        chosen = sorted(
            (r for r in manifest.records if r.split == split), key=lambda r: r.id
        )
        if role == "bank" and not chosen:
            raise CliError("one-class setting requires train records")
        return chosen
    return build_bad_setting(manifest, BadSetting.parse(setting))


def _safe_name(image_id: str) -> str:
    return image_id.replace("/", "_").replace("\\", "_")


def _map_workers(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True))


def cmd_synth(args) -> None:
    cfg = synthetic.SynthConfig(
        num_images=args.num_images,
        grid=tuple(args.grid),
        dim=args.dim,
        num_location_clusters=args.clusters,
        normal_sigma=args.normal_sigma,
        anomaly_sigma=args.anomaly_sigma,
        anomaly_image_fraction=args.anomaly_image_fraction,
        anomaly_area_fraction=args.anomaly_area_fraction,
        seed=args.seed,
    )
    manifest = synthetic.generate_bad_dataset(cfg, args.out)
    _emit(
        {
            "manifest": str(Path(args.out) / "manifest.json"),
            "images": len(manifest.records),
            "anomalous": sum(r.label == "anomalous" for r in manifest.records),
        }
    )


def cmd_bank(args) -> None:
    manifest = load_manifest(args.manifest)
    records = _records_for(manifest, args.setting, role="bank")
    maps = _map_workers(
        lambda r: features.load_patch_feature_map(r, patch_size=args.patch_size),
        records,
        args.workers,
    )
    result = bank_mod.assemble(maps)
    if args.ratio < 1.0 or args.projection_dim is not None:
        result = bank_mod.coreset_subsample(
            result, args.ratio, seed=args.seed, projection_dim=args.projection_dim
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensor_path = out.with_suffix(".pcfb")
    meta_path = out.with_suffix(".json")
    bank_mod.save_bank(result, tensor_path, meta_path)
    _emit({"bank": str(tensor_path), "meta": str(meta_path), "rows": result.size, "dim": result.dim})


def cmd_score(args) -> None:
    manifest = load_manifest(args.manifest)
    the_bank = bank_mod.load_bank(args.bank, Path(args.bank).with_suffix(".json"))
    k = args.k if args.k is not None else scoring.default_k_for_ratio(the_bank.subsample_ratio)
    cfg = scoring.ScorerConfig(
        k=k,
        start_index=args.start_index,
        scorer=args.scorer,
        b=args.b,
        gaussian_sigma=args.sigma,
        clamp_weight=args.clamp_weight,
    )
    records = _records_for(manifest, args.setting, role="score")
    out = Path(args.out)
    (out / "scoremaps").mkdir(parents=True, exist_ok=True)

    def score_one(record: ImageRecord):
        pmap = features.load_patch_feature_map(record, patch_size=args.patch_size)
        smap = scoring.score_image(the_bank, pmap, cfg, manifest.image_size)
        rel = f"scoremaps/{_safe_name(record.id)}.pcfb"
        tensorfile.write_tensor(out / rel, smap.pixels.astype(np.float32))
        return record.id, rel, smap

    results = _map_workers(score_one, records, args.workers)
    doc = {
        "config": {
            "k": cfg.k,
            "start_index": cfg.start_index,
            "scorer": cfg.scorer,
            "b": cfg.image_score_neighbors,
            "gaussian_sigma": cfg.gaussian_sigma,
            "clamp_weight": cfg.clamp_weight,
            "setting": args.setting,
            "patch_size": args.patch_size,
            "bank_rows": the_bank.size,
            "bank_ratio": the_bank.subsample_ratio,
        },
        "maps": {rid: rel for rid, rel, _ in results},
        "image_scores": {rid: smap.image_score for rid, _, smap in results},
        "argmax_scores": {rid: smap.argmax_score for rid, _, smap in results},
    }
    (out / "scores.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _emit({"scores": str(out / "scores.json"), "images": len(results)})


def cmd_eval(args) -> None:
    manifest = apply_mask_labels(load_manifest(args.manifest))
    scores_dir = Path(args.scores)
    doc = json.loads((scores_dir / "scores.json").read_text())
    pixel_maps = {
        rid: tensorfile.read_tensor(scores_dir / rel) for rid, rel in doc["maps"].items()
    }
    setting = doc["config"].get("setting", args.setting)
    if args.setting is not None:
        setting = args.setting
    eval_setting = "test" if setting == "one-class" else setting
    report = evaluation.evaluate_run(
        manifest, eval_setting, pixel_maps, doc["image_scores"], config=doc["config"]
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    evaluation.save_report(report, out)
    if args.csv:
        Path(args.csv).write_text(evaluation.reports_to_csv([report]))
    _emit(
        {
            "report": str(out),
            "image_auroc": report.image_auroc,
            "pixel_auroc": report.pixel_auroc,
            "pro": report.pro,
        }
    )


def _render_heatmap(pixels: np.ndarray, image_path: str | None):
    """Min-max normalized colormap overlay; raw map when no source image."""
    from matplotlib import colormaps
    from PIL import Image

    lo, hi = float(pixels.min()), float(pixels.max())
    norm = (pixels - lo) / (hi - lo) if hi > lo else np.zeros_like(pixels)
    rgba = colormaps["viridis"](norm)
    heat = (rgba[..., :3] * 255).astype(np.uint8)
    if image_path and Path(image_path).exists():
        base = Image.open(image_path).convert("RGB").resize(
            (pixels.shape[1], pixels.shape[0]), Image.BILINEAR
        )
        blended = (0.5 * np.asarray(base, dtype=np.float64) + 0.5 * heat).astype(np.uint8)
        return Image.fromarray(blended)
    return Image.fromarray(heat)


def cmd_heatmap(args) -> None:
    manifest = load_manifest(args.manifest)
    scores_dir = Path(args.scores)
    doc = json.loads((scores_dir / "scores.json").read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {r.id: r for r in manifest.records}
    written = []
    for rid, rel in sorted(doc["maps"].items()):
        pixels = tensorfile.read_tensor(scores_dir / rel).astype(np.float64)
        record = by_id.get(rid)
        img = _render_heatmap(pixels, record.image_path if record else None)
        path = out / f"{_safe_name(rid)}.png"
        img.save(path)
        written.append(str(path))
    _emit({"heatmaps": len(written), "dir": str(out)})


def cmd_import_mvtec(args) -> None:
    """Map the stock MVTec layout (train/good, test/<defect>, ground_truth)
    onto one manifest per category."""
    root = Path(args.root).resolve()
    categories = args.category or sorted(
        p.name for p in root.iterdir() if (p / "test").is_dir() or (p / "train").is_dir()
    )
    if not categories:
        raise CliError(f"no category directories under {root}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for category in categories:
        cdir = root / category
        problems = []
        records = []
        for split_dir, split in (("train", "train"), ("test", "test")):
            sdir = cdir / split_dir
            if not sdir.is_dir():
                problems.append(f"missing directory: {sdir}")
                continue
            for defect_dir in sorted(p for p in sdir.iterdir() if p.is_dir()):
                defect = defect_dir.name
                for img in sorted(defect_dir.glob("*.png")):
                    rid = f"{split}/{defect}/{img.stem}"
                    mask_path = None
                    label = "normal"
                    if split == "test" and defect != "good":
                        label = "anomalous"
                        mask = cdir / "ground_truth" / defect / f"{img.stem}_mask.png"
                        if mask.exists():
                            mask_path = str(mask)
                        else:
                            problems.append(f"missing mask: {mask}")
                    records.append(
                        ImageRecord(
                            id=rid,
                            feature_paths=[],
                            mask_path=mask_path,
                            image_path=str(img),
                            split=split,
                            label=label,
                        )
                    )
        if problems:
            raise ManifestError(
                f"layout violations in {cdir}:\n" + "\n".join(problems)
            )
        if not records:
            raise ManifestError(f"no images found under {cdir}")
        manifest = DatasetManifest(
            category=category, image_size=tuple(args.image_size), records=records
        )
        path = out_dir / f"{category}.json"
        save_manifest(manifest, path)
        written[category] = {"manifest": str(path), "images": len(records)}
    _emit({"categories": written})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchcluster",
        description="Blind anomaly detection over patch-feature memory banks",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-images", type=int, default=100)
    p.add_argument("--grid", type=int, nargs=2, default=[28, 28], metavar=("W", "H"))
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--clusters", type=int, default=12)
    p.add_argument("--normal-sigma", type=float, default=1.0)
    p.add_argument("--anomaly-sigma", type=float, default=5.0)
    p.add_argument("--anomaly-image-fraction", type=float, default=0.23)
    p.add_argument("--anomaly-area-fraction", type=float, default=0.13)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bank", help="assemble (and optionally subsample) a bank")
    p.add_argument("--manifest", required=True)
    p.add_argument("--setting", choices=SETTINGS, default="mix")
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--projection-dim", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=3)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--out", required=True, help="output path stem for .pcfb/.json")
    p.set_defaults(func=cmd_bank)

    p = sub.add_parser("score", help="score a setting against a bank")
    p.add_argument("--manifest", required=True)
    p.add_argument("--setting", choices=SETTINGS, default="mix")
    p.add_argument("--bank", required=True, help="bank .pcfb path")
    p.add_argument("--scorer", choices=scoring.SCORERS, default="patchcluster")
    p.add_argument("--k", type=int, default=None, help="default: by bank ratio")
    p.add_argument("--start-index", type=int, default=2)
    p.add_argument("--b", type=int, default=None)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--clamp-weight", action="store_true")
    p.add_argument("--patch-size", type=int, default=3)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute metrics for a scored run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", required=True, help="directory from the score command")
    p.add_argument("--setting", choices=SETTINGS, default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="render score maps as PNG overlays")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("import-mvtec", help="build manifests from an MVTec tree")
    p.add_argument("--root", required=True)
    p.add_argument("--category", action="append", default=None)
    p.add_argument("--image-size", type=int, nargs=2, default=[224, 224], metavar=("H", "W"))
    p.add_argument("--out", required=True, help="directory for per-category manifests")
    p.set_defaults(func=cmd_import_mvtec)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # surfaced as machine-readable JSON
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
