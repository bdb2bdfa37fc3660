#!/usr/bin/env python3
"""Desk-scale benchmark on the default synthetic contaminated dataset.

Reproduces the two headline trends without any external data: pixel AUROC
across neighbor counts K (nearest-neighbor scoring vs local clustering),
and across coreset subsampling ratios. Takes a few minutes on a laptop.
"""
import argparse
import tempfile
import time
from pathlib import Path

import numpy as np

from patchcluster import (
    PatchFeatureMap,
    ScorerConfig,
    SynthConfig,
    assemble,
    coreset_subsample,
    generate_bad_dataset,
    pixel_auroc,
    read_tensor,
    score_feature_map,
    score_feature_map_sweep,
    upsample_and_smooth,
)
from patchcluster.manifest import load_mask
from patchcluster.scoring import default_k_for_ratio


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--num-images", type=int, default=100)
    parser.add_argument("--out", default=None, help="dataset directory (default: temp)")
    args = parser.parse_args()

    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="pcbench_"))
    cfg = SynthConfig(num_images=args.num_images, seed=args.seed)
    print(f"generating dataset in {out} ...")
    manifest = generate_bad_dataset(cfg, out)
    maps = [PatchFeatureMap(r.id, read_tensor(r.feature_paths[0])) for r in manifest.records]
    masks = [load_mask(r, manifest.image_size) for r in manifest.records]
    bank = assemble(maps)
    print(f"bank: {bank.size} x {bank.dim}")

    ks = sorted({1, 10, cfg.num_images // 2, cfg.num_images, 2 * cfg.num_images})
    t0 = time.time()
    pixels = {k: [] for k in ks}
    for pmap in maps:
        sweep = score_feature_map_sweep(bank, pmap, ScorerConfig(k=max(ks)), ks)
        for k in ks:
            pixels[k].append(upsample_and_smooth(sweep[k], manifest.image_size, 4.0))
    print(f"\nK sweep ({time.time() - t0:.0f}s, full bank):")
    print(f"{'K':>6}  {'pixel AUROC':>12}")
    for k in ks:
        print(f"{k:>6}  {pixel_auroc(pixels[k], masks):>12.4f}")

    print("\ncoreset sweep:")
    print(f"{'ratio':>6}  {'K':>4}  {'rows':>7}  {'pixel AUROC':>12}  {'time':>6}")
    for ratio in (1.0, 0.25, 0.10, 0.01):
        t0 = time.time()
        reduced = coreset_subsample(bank, ratio, seed=0)
        k = default_k_for_ratio(ratio)
        maps_pixels = []
        for pmap in maps:
            raw = score_feature_map(reduced, pmap, ScorerConfig(k=k, start_index=2))
            maps_pixels.append(upsample_and_smooth(raw, manifest.image_size, 4.0))
        score = pixel_auroc(maps_pixels, masks)
        print(f"{ratio:>6.2f}  {k:>4}  {reduced.size:>7}  {score:>12.4f}  {time.time() - t0:>5.0f}s")


if __name__ == "__main__":
    main()
