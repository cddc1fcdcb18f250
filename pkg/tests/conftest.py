import numpy as np
import pytest

from mmtcdet.sysmodel import build_alphabet


@pytest.fixture(scope="session")
def qpsk():
    return build_alphabet("QPSK")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
