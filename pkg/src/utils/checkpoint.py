"""
Policy checkpoints for SliceSim
Versioned JSON manifest naming every tensor with its shape and row-major float64 data.
"""

import json
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.core.schema import PolicyConfig
from src.core.errors import ConfigError
from src.agents.policy import MultiAgentPolicy


logger = logging.getLogger("SliceSim.Checkpoint")

FORMAT_VERSION = 1


def save_checkpoint(policy: MultiAgentPolicy, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "policy_config": policy.config.model_dump(mode="json"),
        "tensors": {
            name: {"shape": list(value.shape), "data": value.ravel().tolist()}
            for name, value in policy.named_parameters().items()
        },
        "normalizer": policy.normalizer.state_dict(),
    }
    path.write_text(json.dumps(payload))
    logger.info(f"💾 Saved checkpoint {path} ({len(payload['tensors'])} tensors)")
    return path


def load_checkpoint(path: Union[str, Path], nan_snapshot_path: Optional[str] = None) -> MultiAgentPolicy:
    """
    Rebuild a policy from a checkpoint.

    Raises:
        ConfigError: on a missing file, unknown version or tensor mismatch.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    payload = json.loads(path.read_text())
    if payload.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    config = PolicyConfig.model_validate(payload["policy_config"])
    policy = MultiAgentPolicy(config, seed=0, nan_snapshot_path=nan_snapshot_path)
    named = policy.named_parameters()
    tensors = payload["tensors"]
    if set(tensors) != set(named):
        raise ConfigError(f"{path}: tensor names do not match the policy layout")
    for name, target in named.items():
        entry = tensors[name]
        if tuple(entry["shape"]) != target.shape:
            raise ConfigError(f"{path}: tensor {name} has shape {entry['shape']}, expected {list(target.shape)}")
        target[...] = np.asarray(entry["data"], dtype=np.float64).reshape(target.shape)
    policy.normalizer.load_state_dict(payload["normalizer"])
    logger.info(f"📂 Loaded checkpoint {path}")
    return policy
