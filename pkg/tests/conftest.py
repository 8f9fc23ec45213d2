import numpy as np
import pytest

from alignnd.data import SyntheticConfig, generate_synthetic, ideal_complex
from alignnd.model import ModelConfig, init_model


def jittered_complex(n_w: int, seed: int = 0):
    """A synthetic complex with exactly ``n_w`` waters."""
    cfg = SyntheticConfig(n_samples=1, coordination_probs={n_w: 1.0}, seed=seed)
    return generate_synthetic(cfg)[0].structure


@pytest.fixture(scope="session")
def complexes():
    return {n: jittered_complex(n, seed=n) for n in (4, 5, 6)}


@pytest.fixture(scope="session")
def octahedron():
    return ideal_complex(6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_state(rep="alignn-d", D=8, L=2, seed=0, **kw):
    return init_model(ModelConfig(L=L, D=D, representation=rep, **kw), seed)
