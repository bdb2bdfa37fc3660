#!/usr/bin/env python3
"""Full benchmark reproduction driver (needs the MVTec AD dataset plus the
feature extractor package from ``extractor/``).

Walks every category through import -> extract -> bank -> score -> eval for
the requested settings and prints the aggregate table. Expects the dataset's
stock directory layout at --root.
"""
import argparse
import json
from pathlib import Path

from patchcluster.cli import main as cli
from patchcluster.evaluation import load_report, reports_to_csv


def run(argv) -> None:
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"command failed: {' '.join(argv)}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", required=True, help="MVTec AD root directory")
    parser.add_argument("--work", required=True, help="working directory for artifacts")
    parser.add_argument("--settings", nargs="+", default=["mix", "test", "ano"])
    parser.add_argument("--ratio", type=float, default=0.25)
    parser.add_argument("--k", type=int, default=25)
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args()

    try:
        from patchcluster_extractor.config import ExtractConfig
        from patchcluster_extractor.extract import extract_manifest
    except ImportError as exc:
        raise SystemExit(
            "feature extractor not installed; run "
            "`pip install -e ./extractor --no-build-isolation`"
        ) from exc

    work = Path(args.work)
    manifests = work / "manifests"
    run(["import-mvtec", "--root", args.root, "--out", str(manifests)])
    categories = sorted(p.stem for p in manifests.glob("*.json"))
    reports = []
    for category in categories:
        extracted = extract_manifest(
            manifests / f"{category}.json",
            work / "features" / category,
            ExtractConfig(device=args.device),
        )
        for setting in args.settings:
            rdir = work / "runs" / category / setting
            run([
                "bank", "--manifest", str(extracted), "--setting", setting,
                "--ratio", str(args.ratio), "--out", str(rdir / "bank"),
            ])
            run([
                "score", "--manifest", str(extracted), "--setting", setting,
                "--bank", str(rdir / "bank.pcfb"), "--k", str(args.k),
                "--out", str(rdir / "scores"),
            ])
            run([
                "eval", "--manifest", str(extracted), "--scores", str(rdir / "scores"),
                "--out", str(rdir / "report.json"),
            ])
            reports.append(load_report(rdir / "report.json"))
    table = reports_to_csv(reports)
    (work / "summary.csv").write_text(table)
    print(table)
    print(json.dumps({"summary": str(work / "summary.csv"), "runs": len(reports)}))


if __name__ == "__main__":
    main()
