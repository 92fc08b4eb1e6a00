import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pmorder.weightdist import DiscreteDistribution

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@st.composite
def unit_mean_laws(draw, max_size=4, low=0.05, high=4.0):
    """Finite positive laws rescaled to unit mean."""
    n = draw(st.integers(1, max_size))
    atoms = np.array(draw(st.lists(st.floats(low, high), min_size=n, max_size=n)))
    raw = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))
    probs = raw / raw.sum()
    atoms = atoms / float(np.dot(atoms, probs))
    return DiscreteDistribution.from_atoms(atoms, probs)
