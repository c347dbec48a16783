from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from ntc.container import CodecModel, ModelRegistry
from ntc.density import DiscretePMF
from ntc.transforms import init_params, preset

DATA = Path(__file__).parent / "data"
GOLDEN_INDEX = 7


@pytest.fixture(scope="session")
def golden_registry():
    return ModelRegistry.load(DATA / "golden_model.ntc1")


@pytest.fixture(scope="session")
def golden_model(golden_registry):
    return golden_registry.get(GOLDEN_INDEX)


def gaussian_pmf(sigma, lo=-6, hi=6):
    n = np.arange(lo, hi + 1)
    p = np.maximum(norm.cdf((n + 0.5) / sigma) - norm.cdf((n - 0.5) / sigma), 1e-9)
    return DiscretePMF(lo, p / p.sum())


@pytest.fixture(scope="session")
def rgb_model():
    spec = preset("desk-rgb")
    phi, theta = init_params(spec, 4)
    return CodecModel(phi, theta, [gaussian_pmf(0.8)] * spec.code_channels, lmbda=0.01)
