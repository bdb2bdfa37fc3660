"""Image and mask loading with the fixed resize/crop evaluation protocol.

Images are forced to three channels (grayscale inputs are replicated),
resized square, center-cropped, and channel-normalized. Ground-truth masks
go through the same geometry with nearest-neighbor resampling so they stay
binary and aligned with the features.
"""
from __future__ import annotations

import numpy as np
import torch
from PIL import Image
from torchvision import transforms

from .config import NORMALIZE_MEAN, NORMALIZE_STD, ExtractConfig


class UnreadableImageError(ValueError):
    pass


def image_transform(cfg: ExtractConfig) -> transforms.Compose:
    return transforms.Compose(
        [
            transforms.Resize((cfg.resize, cfg.resize), antialias=True),
            transforms.CenterCrop(cfg.crop),
            transforms.ToTensor(),
            transforms.Normalize(NORMALIZE_MEAN, NORMALIZE_STD),
        ]
    )


def load_image(path, cfg: ExtractConfig) -> torch.Tensor:
    """Read an image file into a normalized (3, crop, crop) tensor."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
    except (OSError, ValueError) as exc:
        raise UnreadableImageError(f"cannot read image {path}: {exc}") from exc
    return image_transform(cfg)(rgb)


def load_mask(path, cfg: ExtractConfig) -> np.ndarray:
    """Read a ground-truth mask and align it with the image geometry.

    Nearest-neighbor resampling keeps the mask binary; any nonzero pixel
    counts as anomalous.
    """
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
    except (OSError, ValueError) as exc:
        raise UnreadableImageError(f"cannot read mask {path}: {exc}") from exc
    resized = gray.resize((cfg.resize, cfg.resize), Image.NEAREST)
    left = (cfg.resize - cfg.crop) // 2
    cropped = resized.crop((left, left, left + cfg.crop, left + cfg.crop))
    return (np.asarray(cropped) > 0).astype(np.uint8)
