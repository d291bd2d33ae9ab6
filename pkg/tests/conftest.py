import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from irshield.fixtures import gen_fixture_model
from irshield.netdef import parse_network
from irshield.tensor import Tensor

GOLDEN_DIR = Path(__file__).parent / "golden"


def seed_image(shape: tuple[int, int, int], seed: int) -> Tensor:
    """Deterministic pseudo-random image with values in [0, 1)."""
    w, h, c = shape
    rng = np.random.default_rng(seed)
    return Tensor.from_array(rng.random((c, h, w), dtype=np.float32))


@pytest.fixture(scope="session")
def plain17():
    cfg, weights = gen_fixture_model("plain17", 42, 10)
    return parse_network(cfg, weights)


@pytest.fixture(scope="session")
def plain28():
    cfg, weights = gen_fixture_model("plain28", 42, 10)
    return parse_network(cfg, weights)


@pytest.fixture(scope="session")
def denseblock():
    cfg, weights = gen_fixture_model("denseblock", 1, 10)
    return parse_network(cfg, weights)
