import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

PROBE = Path(__file__).with_name("_backend_probe.py")


def _probe(backend):
    env = {**os.environ, "MMTCDET_BACKEND": backend}
    r = subprocess.run([sys.executable, str(PROBE)], capture_output=True, text=True, env=env,
                       timeout=600)
    assert r.returncode == 0, r.stderr
    return json.loads(r.stdout)


@pytest.fixture(scope="module")
def both():
    return _probe("numba"), _probe("numpy")


def test_backends_selected(both):
    assert both[0]["backend"] == "numba" and both[1]["backend"] == "numpy"


@pytest.mark.parametrize("v", ["AA_CL_DF", "AA_RLS"])
def test_adaptive_kernels_agree(both, v):
    a, b = both[0][v], both[1][v]
    np.testing.assert_allclose(a["w"], b["w"], atol=1e-9)
    np.testing.assert_allclose(a["soft"], b["soft"], atol=1e-9)
    assert a["dec"] == b["dec"]
    assert a["counts"] == b["counts"]


def test_sic_and_spa_agree(both):
    a, b = both
    assert a["sic"] == b["sic"]
    np.testing.assert_allclose(a["spa"]["post"], b["spa"]["post"], atol=1e-9)
    assert a["spa"]["iters"] == b["spa"]["iters"]


def test_experiment_csv_identical(both):
    assert both[0]["csv"] == both[1]["csv"]
