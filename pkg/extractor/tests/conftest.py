import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    """Three small images: two RGB, one grayscale."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(0)
    for name in ("a", "b"):
        arr = rng.integers(0, 256, size=(48, 64, 3), dtype=np.uint8)
        Image.fromarray(arr, "RGB").save(root / f"{name}.png")
    gray = rng.integers(0, 256, size=(48, 64), dtype=np.uint8)
    Image.fromarray(gray, "L").save(root / "gray.png")
    return root
