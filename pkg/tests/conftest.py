import numpy as np
import pytest

from streamforge import OffloadDevice


@pytest.fixture
def device():
    dev = OffloadDevice(0, arena_bytes=1 << 24)
    yield dev
    dev.close()


@pytest.fixture
def stream(device):
    return device.get_default_stream()


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
