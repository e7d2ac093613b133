import math

import numpy as np
import pytest

from sievenet.likelihood import ObservedRecord
from sievenet.model import init_network


def make_record(kind: str, z, weight: float = 1.0, L: float = 1.0, R: float = 2.5) -> ObservedRecord:
    """Shorthand for one record of the given censoring kind."""
    if kind == "left":
        return ObservedRecord(L=0.0, R=R, delta_L=1, delta_I=0, observed=1, z=z, weight=weight)
    if kind == "interval":
        return ObservedRecord(L=L, R=R, delta_L=0, delta_I=1, observed=1, z=z, weight=weight)
    if kind == "right":
        return ObservedRecord(L=L, R=math.inf, delta_L=0, delta_I=0, observed=1, z=z, weight=weight)
    raise ValueError(kind)


def random_batch(rng: np.random.Generator, n: int, p: int, u: float = 5.0, weights=True):
    """Mixed-censoring records with times inside [0, u]."""
    records = []
    for i in range(n):
        z = rng.random(p)
        w = rng.uniform(0.5, 3.0) if weights else 1.0
        kind = ("left", "interval", "right")[i % 3]
        a = rng.uniform(0.1 * u, 0.5 * u)
        b = rng.uniform(0.55 * u, 0.95 * u)
        if kind == "left":
            records.append(make_record("left", z, w, R=a))
        elif kind == "interval":
            records.append(make_record("interval", z, w, L=a, R=b))
        else:
            records.append(make_record("right", z, w, L=b))
    return records


@pytest.fixture
def rng():
    return np.random.default_rng(20240810)


@pytest.fixture
def small_net(rng):
    return init_network((5, 6, 1), rng)
