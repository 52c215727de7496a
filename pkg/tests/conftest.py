import numpy as np
import pytest

from gemsim.core import load_config


def two_level_cfg(beta=1.0, tau=6.0, T_total=13.0, center=3.0, width=0.5, etaL=16.0, **extra):
    raw = {
        "ensemble": {"level_scheme": "two_level", "beta": beta},
        "gradient": {"etaL": etaL},
        "pulse": {"centers": [center], "widths": [width]},
        "grid": {"T_total": T_total},
        "protocol": {"tau": tau},
    }
    for key, val in extra.items():
        raw.setdefault(key, {}).update(val)
    return load_config(raw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
