"""
Shared fixtures for the SliceSim test suite.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core.schema import SliceSimConfig  # noqa: E402
from src.agents.policy import MultiAgentPolicy  # noqa: E402


SLOW = os.getenv("SLICESIM_SLOW") == "1"

slow = pytest.mark.skipif(not SLOW, reason="set SLICESIM_SLOW=1 to run training acceptance checks")


def small_config_dict() -> dict:
    """A cell small enough that a rollout takes well under a second."""
    return {
        "seed": 3,
        "seeds": [3, 5],
        "sim": {"episode_ticks": 60},
        "policy": {"hidden_size": 8, "history_window": 3, "key_dim": 4},
        "train": {
            "rollout_length": 16,
            "iterations": 1,
            "n_envs": 2,
            "epochs": 1,
            "minibatch_size": 8,
        },
        "scenario": {
            "spikes": [
                {"trigger_tick": 10, "target_slice": "URLLC", "mechanism": "buffer_surge",
                 "magnitude": 2.0, "duration_ticks": 3},
                {"trigger_tick": 10, "target_slice": "URLLC", "mechanism": "interference_surge",
                 "magnitude": 3.0, "duration_ticks": 8},
            ],
            "horizon": 40,
            "sustain_ticks": 3,
            "eval_horizon": 20,
            "n_eval_seeds": 2,
        },
    }


@pytest.fixture
def small_config() -> SliceSimConfig:
    return SliceSimConfig.model_validate(small_config_dict())


@pytest.fixture
def policy(small_config) -> MultiAgentPolicy:
    return MultiAgentPolicy(small_config.policy, seed=11)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
