"""Pretrained-backbone feature export for the patchcluster engine."""

__version__ = "0.1.0"

from .config import ExtractConfig
from .extract import extract_dir, extract_manifest, extract_records
