import numpy as np
import pytest

from mgalerkin import _pykernels, kernels

try:
    from mgalerkin import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = ["python"] + (["cython"] if _ckernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel implementation."""
    impl = _pykernels if request.param == "python" else _ckernels
    monkeypatch.setattr(kernels, "_impl", impl)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
