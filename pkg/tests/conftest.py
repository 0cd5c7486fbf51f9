import os
from pathlib import Path

import numpy as np
import pytest

from sdidlab.panel import design_from_matrix

CANONICAL_ENV = "SDIDLAB_PROP99"
CANONICAL_DEFAULT = Path(__file__).parent / "data" / "california_prop99.csv"


def canonical_prop99_path():
    """Path to the canonical 39-state tobacco panel, if the user supplied it.

    The file itself is not redistributable with this package; see README for
    the expected long format (unit,time,outcome,treated; 39 states, 31 years).
    """
    env = os.environ.get(CANONICAL_ENV)
    if env:
        return Path(env)
    return CANONICAL_DEFAULT


def require_prop99():
    path = canonical_prop99_path()
    if not path.exists():
        pytest.skip(
            f"canonical tobacco panel not found at {path}; "
            f"set {CANONICAL_ENV} to run replication checks"
        )
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20240809)


def random_block_design(rng, n=8, t=7, n_co=None, t_pre=None, scale=1.0):
    n_co = n_co if n_co is not None else n - max(2, n // 3)
    t_pre = t_pre if t_pre is not None else t - max(2, t // 3)
    y = rng.normal(scale=scale, size=(n, t))
    return design_from_matrix(y, n_co, t_pre)


@pytest.fixture
def block_design(rng):
    return random_block_design(rng)
