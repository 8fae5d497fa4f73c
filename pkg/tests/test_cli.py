"""
End-to-end tests of the command-line surface, replay verification and checkpoints.
"""

import json
import os

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import small_config_dict, slow
from main import main, MANIFEST_FILE, CONFIG_FILE, CHECKPOINT_FILE, REPORT_FILE, TIMELINE_FILE, REPORT_TEXT_FILE
from src.core.config import load_config
from src.core.schema import ControllerConfig
from src.core.errors import ConfigError
from src.core.env import STATE_DIM
from src.core.replay import replay
from src.agents.policy import MultiAgentPolicy
from src.utils.checkpoint import save_checkpoint, load_checkpoint
from src.utils.event_log import TRACE_FILE, EXPLANATIONS_FILE, EVENTS_FILE, read_trace


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(small_config_dict()))
    return path


@pytest.fixture
def case_dir(tmp_path, config_path):
    out = tmp_path / "case"
    code = main(["--plain-logs", "case-study", "--config", str(config_path), "--out", str(out)])
    assert code in (0, 3)
    return out


def rewrite_trace(run_dir, edit):
    path = run_dir / TRACE_FILE
    frame = read_trace(path)
    frame = edit(frame)
    frame.to_csv(path, index=False, float_format="%.17g")


# =============================================================================
# CONFIG
# =============================================================================

def test_validate_config(config_path, tmp_path):
    out = tmp_path / "validated"
    assert main(["--plain-logs", "validate-config", "--config", str(config_path), "--out", str(out)]) == 0
    manifest = json.loads((out / MANIFEST_FILE).read_text())
    assert manifest["command"] == "validate-config"
    assert manifest["seeds"] == [3, 5]


def test_missing_config_exits_with_one(tmp_path, capsys):
    missing = tmp_path / "missing.json"
    assert main(["--plain-logs", "validate-config", "--config", str(missing)]) == 1
    assert "missing.json" in capsys.readouterr().err.replace("\n", "")


def test_bad_seeds_exit_with_one(config_path):
    assert main(["--plain-logs", "validate-config", "--config", str(config_path), "--seeds", "7,x"]) == 1


def test_shipped_configs_validate():
    for name in ("default.json", "smoke.json"):
        config = load_config(os.path.join(os.path.dirname(os.path.dirname(__file__)), "configs", name))
        assert config.sim.slices[0].targets.latency_target_ms == 1.0


def test_predictive_step_capped_at_five_percent(tmp_path):
    assert ControllerConfig(predictive_delta=0.05).predictive_delta == 0.05
    with pytest.raises(ValidationError):
        ControllerConfig(predictive_delta=0.1)

    document = small_config_dict()
    document["controller"] = {"predictive_delta": 0.08}
    path = tmp_path / "greedy.json"
    path.write_text(json.dumps(document))
    assert main(["--plain-logs", "validate-config", "--config", str(path)]) == 1


# =============================================================================
# CASE STUDY AND REPLAY
# =============================================================================

def test_case_study_writes_run_directory(case_dir):
    names = [MANIFEST_FILE, CONFIG_FILE, EVENTS_FILE, TRACE_FILE, EXPLANATIONS_FILE,
             REPORT_FILE, TIMELINE_FILE, REPORT_TEXT_FILE]
    for name in names:
        assert (case_dir / name).is_file(), name
    manifest_time = (case_dir / MANIFEST_FILE).stat().st_mtime_ns
    assert all(manifest_time <= (case_dir / name).stat().st_mtime_ns for name in names)
    report = json.loads((case_dir / REPORT_FILE).read_text())
    assert report["verdict"] in ("PASSED", "FAILED")


def test_replay_passes_on_untouched_run(case_dir):
    assert main(["--plain-logs", "replay", str(case_dir)]) == 0
    result = replay(case_dir)
    assert result.passed
    assert result.rows_checked == 3 * small_config_dict()["scenario"]["horizon"]
    assert result.explanations_checked == small_config_dict()["scenario"]["horizon"]


def test_replay_names_tampered_row(case_dir):
    def bump(frame):
        frame.loc[4, "reward"] = frame.loc[4, "reward"] + 0.01
        return frame

    rewrite_trace(case_dir, bump)
    assert main(["--plain-logs", "replay", str(case_dir)]) == 3
    result = replay(case_dir)
    assert not result.passed
    assert result.failures[0].startswith("row 4 ")
    assert "reward" in result.failures[0]


def test_replay_detects_tampered_attention(case_dir):
    path = case_dir / EXPLANATIONS_FILE
    lines = path.read_text().splitlines()
    record = json.loads(lines[0])
    record["attention"][0][0] += 1e-3
    lines[0] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n")
    result = replay(case_dir)
    assert not result.passed
    assert "sha256" in result.failures[0]


def test_replay_missing_column_exits_with_one(case_dir):
    rewrite_trace(case_dir, lambda frame: frame.drop(columns=["u_eff"]))
    assert main(["--plain-logs", "replay", str(case_dir)]) == 1


# =============================================================================
# CHECKPOINTS
# =============================================================================

def test_checkpoint_round_trip(tmp_path, small_config):
    policy = MultiAgentPolicy(small_config.policy, seed=21)
    policy.normalizer.update(np.random.default_rng(0).normal(size=(5, STATE_DIM)))
    path = save_checkpoint(policy, tmp_path / "ckpt.json")
    loaded = load_checkpoint(path)
    for name, value in policy.named_parameters().items():
        np.testing.assert_array_equal(loaded.named_parameters()[name], value)
    np.testing.assert_array_equal(loaded.normalizer.mean, policy.normalizer.mean)
    shares = np.array([s.initial_shares for s in small_config.sim.slices])
    obs = np.linspace(-1.0, 1.0, STATE_DIM)
    a = policy.act(obs, policy.empty_history(), shares, greedy=True)
    b = loaded.act(obs, loaded.empty_history(), shares, greedy=True)
    assert a.attention_sha256 == b.attention_sha256


def test_checkpoint_version_and_missing_file(tmp_path, small_config):
    path = save_checkpoint(MultiAgentPolicy(small_config.policy), tmp_path / "ckpt.json")
    payload = json.loads(path.read_text())
    payload["format_version"] = 99
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigError):
        load_checkpoint(path)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "absent.json")


def test_train_then_case_study_with_checkpoint(tmp_path, config_path):
    train_dir = tmp_path / "train"
    assert main(["--plain-logs", "train", "--config", str(config_path), "--out", str(train_dir)]) == 0
    checkpoint = train_dir / CHECKPOINT_FILE
    assert checkpoint.is_file()
    assert (train_dir / "metrics.csv").is_file()
    case = tmp_path / "case"
    code = main(["--plain-logs", "case-study", "--config", str(config_path),
                 "--checkpoint", str(checkpoint), "--out", str(case)])
    assert code in (0, 3)
    manifest = json.loads((case / MANIFEST_FILE).read_text())
    assert manifest["checkpoint"] == str(checkpoint)


def test_mismatched_checkpoint_is_a_config_error(tmp_path, config_path):
    other = MultiAgentPolicy(load_config(config_path).policy.model_copy(update={"hidden_size": 5}))
    checkpoint = save_checkpoint(other, tmp_path / "other.json")
    code = main(["--plain-logs", "evaluate", "--config", str(config_path),
                 "--checkpoint", str(checkpoint), "--out", str(tmp_path / "eval")])
    assert code == 1


# =============================================================================
# TRAINING ACCEPTANCE
# =============================================================================

@slow
def test_training_improves_utility_over_random_policy(tmp_path):
    """Smoke-config training lifts mean U_total above an untrained policy."""
    from src.core.schema import SliceSimConfig
    from src.core.scenario import evaluate
    from src.agents.trainer import MAPPOTrainer

    raw = small_config_dict()
    raw["train"].update({"iterations": 30, "rollout_length": 128, "minibatch_size": 64, "epochs": 2})
    config = SliceSimConfig.model_validate(raw)
    baseline = evaluate(config, MultiAgentPolicy(config.policy, seed=config.seed), [3, 5])
    trainer = MAPPOTrainer(config)
    trainer.train()
    trained = evaluate(config, trainer.policy, [3, 5])
    assert trained.aggregate["mean_u_total"].mean >= baseline.aggregate["mean_u_total"].mean
