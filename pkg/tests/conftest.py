import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from autoscale_lab.config import load_config
from autoscale_lab.experiment import build_scenario

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def benchmark_scenario():
    """The default synthetic benchmark with its trained forecaster (built once)."""
    return build_scenario(load_config(None))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


SMALL_CONFIG = {
    "traces": {"days": 4.0},
    "model": {"C": 120, "H": 60, "d_model": 4, "periods": [1440], "orders": [3], "epochs": 1,
              "stride": 120},
    "ground_truth": {"warmup_days": 1.0},
    "train_days": 2.5,
    "eval_days": 0.5,
    "repeats": 2,
}


@pytest.fixture
def small_config(tmp_path):
    """A config file small enough for every CLI command to run in seconds."""
    import json

    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return path
