import numpy as np
import pytest
from PIL import Image

from segexport import ExportConfig


def write_inputs(root, count=3, h=48, w=64, class_count=19, seed=3):
    """PNG images plus aligned label maps; returns (image paths, label paths)."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    images, labels = [], []
    for i in range(count):
        img = rng.uniform(0, 255, size=(h, w, 3)).astype(np.uint8)
        ip = root / f"frame_{i:02d}.png"
        Image.fromarray(img).save(ip)
        lab = rng.integers(0, class_count, size=(h, w)).astype(np.uint8)
        lab[:2] = 255
        lp = root / f"frame_{i:02d}_lab.png"
        Image.fromarray(lab, mode="L").save(lp)
        images.append(str(ip))
        labels.append(str(lp))
    return images, labels


@pytest.fixture()
def rng():
    return np.random.default_rng(20260821)


@pytest.fixture()
def make_inputs():
    return write_inputs


@pytest.fixture(scope="session")
def input_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("inputs")
    return write_inputs(root)


@pytest.fixture()
def export_cfg(input_set, tmp_path):
    images, labels = input_set
    return ExportConfig(
        images=images, labels=labels, out_dir=str(tmp_path / "export"), bank_count=1
    )
