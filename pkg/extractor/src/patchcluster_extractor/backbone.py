"""Backbone construction and residual-stage feature taps."""
from __future__ import annotations

from pathlib import Path

import torch
from torchvision import models
from torchvision.models.feature_extraction import create_feature_extractor

from .config import ExtractConfig


class MissingWeightsError(RuntimeError):
    pass


def _load_model(cfg: ExtractConfig) -> torch.nn.Module:
    if cfg.weights == "pretrained":
        try:
            return models.get_model(cfg.backbone, weights="IMAGENET1K_V1")
        except Exception as exc:
            raise MissingWeightsError(
                f"pretrained weights for {cfg.backbone} unavailable: {exc}"
            ) from exc
    model = models.get_model(cfg.backbone, weights=None)
    if cfg.weights != "none":
        path = Path(cfg.weights)
        if not path.exists():
            raise MissingWeightsError(f"weights file not found: {path}")
        model.load_state_dict(torch.load(path, map_location="cpu"))
    return model


def build_stage_extractor(cfg: ExtractConfig) -> torch.nn.Module:
    """Model whose forward returns {stage_id: (B, C, H, W) tensor} taken at
    the output of each requested residual stage's final block."""
    model = _load_model(cfg)
    nodes = {f"layer{s}": str(s) for s in cfg.stages}
    extractor = create_feature_extractor(model, return_nodes=nodes)
    extractor.eval()
    return extractor.to(cfg.device)
