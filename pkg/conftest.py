import os

import numpy as np
import pytest

from palp_lab.denoiser import ModelState, init_params, init_table, save_base
from palp_lab.diffusion import build_schedule
from palp_lab.models.config import PretrainConfig, TrainConfig
from palp_lab.prompts import base_vocabulary
from palp_lab.trainer import SubjectSet, pretrain

TINY_T = 10
TINY_BETAS = (1e-3, 0.2)
SLOW_ENV = "PALP_LAB_SLOW"


def pytest_configure(config):
    config.addinivalue_line("markers", f"slow: measured-trend checks, run only with {SLOW_ENV}=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv(SLOW_ENV) == "1":
        return
    skip = pytest.mark.skip(reason=f"set {SLOW_ENV}=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def tiny_schedule():
    return build_schedule(TINY_T, *TINY_BETAS)


@pytest.fixture
def tiny_base():
    """Untrained 16x16 denoiser, small enough for per-step tests."""
    rng = np.random.default_rng(0)
    params = init_params((16, 16), (8,), 4, 4, rng)
    return ModelState(params, init_table(base_vocabulary(), 4, rng))


@pytest.fixture
def toy_subject():
    return SubjectSet.toy(2, seed=0)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(steps=2, batch=2, eval_samples=2, early_stop_grid=(1, 2), progress=False)


@pytest.fixture
def base_checkpoint(tmp_path, tiny_base):
    schedule = {"T": TINY_T, "beta_min": TINY_BETAS[0], "beta_max": TINY_BETAS[1]}
    return save_base(tiny_base, tmp_path / "base" / "checkpoint.bin", {"schedule": schedule})


@pytest.fixture(scope="session")
def pretrained():
    """Full-size pretraining, shared by every slow test of the session."""
    return pretrain(PretrainConfig(progress=False))
