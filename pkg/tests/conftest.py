import numpy as np
import pytest

from patchcluster import MemoryBank, SynthConfig, generate_bad_dataset


def make_bank(points) -> MemoryBank:
    pts = np.asarray(points, dtype=np.float32)
    return MemoryBank(pts, [("img", i + 1, 1) for i in range(len(pts))])


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A small but complete generated dataset shared across tests."""
    out = tmp_path_factory.mktemp("small_synth")
    cfg = SynthConfig(
        num_images=16,
        grid=(10, 10),
        dim=12,
        num_location_clusters=4,
        anomaly_image_fraction=0.25,
        anomaly_area_fraction=0.15,
        seed=7,
    )
    manifest = generate_bad_dataset(cfg, out)
    return cfg, manifest, out
