import random

import numpy as np
import pytest

from approxlab import genome as gn


@pytest.fixture
def rng():
    return random.Random(12345)


def random_valid_genome(rng, n_i=4, n_o=4, n_r=3, n_c=3, levels_back=None):
    params = gn.CgpParams(n_i=n_i, n_o=n_o, n_r=n_r, n_c=n_c,
                          levels_back=levels_back)
    return gn.random_genome(params, rng)


@pytest.fixture
def small_genome(rng):
    return random_valid_genome(rng)
