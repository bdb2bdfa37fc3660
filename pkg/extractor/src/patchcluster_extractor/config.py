from __future__ import annotations

from dataclasses import dataclass

VALID_STAGES = (1, 2, 3, 4)

# Channel statistics of the backbone's pretraining corpus, applied before
# inference (standard practice for stock pretrained weights).
NORMALIZE_MEAN = (0.485, 0.456, 0.406)
NORMALIZE_STD = (0.229, 0.224, 0.225)


@dataclass
class ExtractConfig:
    backbone: str = "wide_resnet50_2"
    stages: tuple[int, ...] = (2, 3)
    resize: int = 256
    crop: int = 224
    batch_size: int = 8
    device: str = "cpu"
    weights: str = "pretrained"  # "pretrained", "none", or a state-dict path

    def __post_init__(self):
        self.stages = tuple(sorted(int(s) for s in self.stages))
        if not self.stages or any(s not in VALID_STAGES for s in self.stages):
            raise ValueError(f"stages must be a nonempty subset of {VALID_STAGES}")
        if self.resize < self.crop:
            raise ValueError("resize must be at least the crop size")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
