import math

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from hcts.data import InteractionGraph, SyntheticConfig, gen_synthetic

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TINY_DATA = SyntheticConfig(users=40, items_src=50, items_tgt=40, overlap_fraction=0.5,
                            edges_src=500, edges_tgt=350)

curvatures = st.sampled_from([0.01, 0.25, 1.0, 4.0, 100.0]) | st.floats(0.05, 20.0)
seeds = st.integers(0, 2**32 - 1)


def rand_points(n, d, k, rng, scale=1.0, relative=False):
    """On-manifold points from lifted Gaussian tangents, computed independently in numpy.

    ``relative`` measures ``scale`` in units of sqrt(K), keeping x_0 / sqrt(K) moderate.
    """
    v = rng.standard_normal((n, d)) * scale * (math.sqrt(k) if relative else 1.0)
    r = np.linalg.norm(v, axis=1, keepdims=True)
    sk = math.sqrt(k)
    safe = np.where(r > 0, r, 1.0)
    x0 = sk * np.cosh(r / sk)
    xs = sk * np.sinh(r / sk) * v / safe
    return torch.tensor(np.concatenate([x0, xs], axis=1))


def np_dist(x, y, k):
    """Reference distance: sqrt(K) * arcosh(-<x,y>_M / K) in numpy."""
    x, y = np.asarray(x), np.asarray(y)
    inner = -x[..., 0] * y[..., 0] + (x[..., 1:] * y[..., 1:]).sum(-1)
    return math.sqrt(k) * np.arccosh(np.maximum(-inner / k, 1.0))


def toy_graph(edges, nu, ni):
    e = np.array(edges, dtype=np.int64).reshape(-1, 2)
    return InteractionGraph.from_edges(e[:, 0], e[:, 1], nu, ni,
                                       [f"u{j}" for j in range(nu)], [f"i{j}" for j in range(ni)])


@pytest.fixture(scope="session")
def tiny_dataset():
    return gen_synthetic(TINY_DATA, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
