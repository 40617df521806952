import numpy as np
import pytest

from causal_probe.data import FeatureTable


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def make_table(**cols):
    names = tuple(cols)
    return FeatureTable(names, np.column_stack([np.asarray(cols[c], float) for c in names]))
