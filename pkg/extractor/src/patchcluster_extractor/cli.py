"""Command-line front end for the feature extractor."""
from __future__ import annotations

import argparse
import json
import sys

from .config import ExtractConfig
from .extract import extract_dir, extract_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchcluster-extract",
        description="Export backbone stage features into tensor files + manifest",
    )
    src = parser.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="manifest with image paths")
    src.add_argument("--images", help="directory of images")
    parser.add_argument("--out", required=True)
    parser.add_argument("--backbone", default="wide_resnet50_2")
    parser.add_argument("--stages", type=int, nargs="+", default=[2, 3])
    parser.add_argument("--resize", type=int, default=256)
    parser.add_argument("--crop", type=int, default=224)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    parser.add_argument(
        "--weights",
        default="pretrained",
        help='"pretrained", "none", or a state-dict path',
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = ExtractConfig(
        backbone=args.backbone,
        stages=tuple(args.stages),
        resize=args.resize,
        crop=args.crop,
        batch_size=args.batch_size,
        device=args.device,
        weights=args.weights,
    )
    try:
        if args.manifest:
            manifest = extract_manifest(args.manifest, args.out, cfg)
        else:
            manifest = extract_dir(args.images, args.out, cfg)
    except Exception as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    print(json.dumps({"manifest": str(manifest)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
