import numpy as np
import pytest

from ticketsift.datasets import ImageDataset, ImageGeometry


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_dataset(rng, geom: ImageGeometry, n: int, n_classes: int) -> ImageDataset:
    images = rng.random((n, geom.input_size), dtype=np.float32)
    labels = rng.integers(0, n_classes, size=n)
    return ImageDataset(geom, images, labels, n_classes)
