"""
Trace replay for SliceSim
Recomputes utilities, rewards and attention digests from a run directory.
"""

import json
import math
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from src.core.schema import SliceSimConfig, QosAchieved, SLICE_ORDER
from src.core.errors import ReplaySchemaError
from src.core.utility import (
    violation_terms, satisfaction_terms, efficiency_utility, slice_utility, total_utility
)
from src.agents.explain import attention_digest
from src.agents.controller import shaped_reward
from src.utils.event_log import TRACE_FILE, EXPLANATIONS_FILE, read_trace, read_explanations


logger = logging.getLogger("SliceSim.Replay")

REPLAY_TOLERANCE = 1e-9
CONFIG_FILE = "config.json"


@dataclass
class ReplayResult:
    passed: bool
    rows_checked: int = 0
    explanations_checked: int = 0
    failures: List[str] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"


def _close(logged: float, recomputed: float, tolerance: float) -> bool:
    if math.isnan(logged) and math.isnan(recomputed):
        return True
    return abs(logged - recomputed) <= tolerance


def load_run_config(run_dir: Union[str, Path]) -> SliceSimConfig:
    path = Path(run_dir) / CONFIG_FILE
    if not path.is_file():
        raise ReplaySchemaError(f"run config not found: {path}")
    try:
        return SliceSimConfig.model_validate(json.loads(path.read_text()))
    except ValueError as e:
        raise ReplaySchemaError(f"{path}: not a valid SliceSim config ({e})") from e


def _success_rate(value: object) -> Optional[float]:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return float(value)


def replay_trace(
    frame: pd.DataFrame, config: SliceSimConfig, tolerance: float = REPLAY_TOLERANCE
) -> ReplayResult:
    """Recompute every utility column and the reward of each trace row."""
    weights = config.utility
    targets = {s.slice_id.value: s.targets for s in config.sim.slices}
    index = {slice_id.value: n for n, slice_id in enumerate(SLICE_ORDER)}
    result = ReplayResult(passed=True)

    for tick, group in frame.groupby("tick", sort=True):
        slice_values = [0.0] * len(SLICE_ORDER)
        recomputed_rows = []
        for row_number, row in group.iterrows():
            slice_id = row["slice"]
            if slice_id not in index:
                raise ReplaySchemaError(f"row {row_number}: unknown slice {slice_id!r}")
            n = index[slice_id]
            achieved = QosAchieved(
                latency_ms=row["latency_ms"], reliability=row["reliability"],
                throughput_mbps=row["throughput_mbps"], power_used_w=row["power_used_w"],
                power_per_device_mw=row["power_per_device_mw"],
                latency_success_rate=_success_rate(row["latency_success_rate"]),
            )
            terms = satisfaction_terms(violation_terms(achieved, targets[slice_id]), weights.penalty_rates)
            u_qos = float(np.prod(terms))
            u_eff = efficiency_utility((row["util_power"], row["util_prb"], row["util_compute"]), (1.0, 1.0, 1.0))
            u_fair = float(np.mean([1.0 - row["gini_power"], 1.0 - row["gini_prb"], 1.0 - row["gini_compute"]]))
            alpha, beta, gamma = weights.slice_mix[n]
            u_slice = min(1.0, max(0.0, slice_utility(u_qos, u_eff, u_fair, alpha, beta, gamma)))
            slice_values[n] = u_slice
            recomputed_rows.append((row_number, row, {
                "u_latency": terms[0], "u_reliability": terms[1], "u_throughput": terms[2], "u_power": terms[3],
                "u_qos": u_qos, "u_eff": u_eff, "u_fair": u_fair, "u_slice": u_slice,
            }))

        u_total = min(1.0, max(0.0, total_utility(slice_values, weights.slice_weights)))
        for row_number, row, values in recomputed_rows:
            parts = shaped_reward(u_total, row["E"], weights.w_xrl, int(row["clamp_events"]),
                                  config.train.clamp_penalty)
            values.update({"u_total": u_total, "penalty": parts.penalty, "reward": parts.total})
            for column, recomputed in values.items():
                logged = float(row[column])
                if not _close(logged, recomputed, tolerance):
                    result.passed = False
                    result.failures.append(
                        f"row {row_number} (tick {tick}, {row['slice']}): {column} logged {logged!r}, "
                        f"recomputed {recomputed!r}"
                    )
            result.rows_checked += 1
    return result


def replay(run_dir: Union[str, Path], tolerance: float = REPLAY_TOLERANCE) -> ReplayResult:
    """
    Verify a run directory: trace utilities, rewards and attention digests.

    Raises:
        ReplaySchemaError: when trace, explanations or config are missing or malformed.
    """
    run_dir = Path(run_dir)
    config = load_run_config(run_dir)
    frame = read_trace(run_dir / TRACE_FILE)
    result = replay_trace(frame, config, tolerance)

    explanations_path = run_dir / EXPLANATIONS_FILE
    records = read_explanations(explanations_path) if explanations_path.is_file() else []
    logged_digests = frame.groupby("tick")["attention_sha256"].first().to_dict()
    for record in records:
        digest = attention_digest(np.asarray(record.attention, dtype=np.float64))
        if digest != record.attention_sha256:
            result.passed = False
            result.failures.append(f"explanation tick {record.tick}: attention does not match its sha256")
        elif logged_digests.get(record.tick) not in (None, digest):
            result.passed = False
            result.failures.append(f"explanation tick {record.tick}: sha256 differs from trace row")
        result.explanations_checked += 1

    if result.passed:
        logger.info(f"✅ Replay PASS: {result.rows_checked} rows, {result.explanations_checked} explanations")
    else:
        logger.warning(f"❌ Replay FAIL: {len(result.failures)} mismatches, first: {result.failures[0]}")
    return result
