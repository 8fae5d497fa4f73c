"""
SliceSim: explainable multi-agent RAN slicing
Main Orchestration Module

Command-line entry point: train, evaluate, case-study, replay, validate-config.
"""

import sys
import json
import logging
import argparse
from pathlib import Path
from typing import List, Optional, Sequence

from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel

from src import __version__
from src.core.schema import SliceSimConfig, RunManifest, Verdict
from src.core.errors import SliceSimError, ConfigError, ReplaySchemaError
from src.core.config import load_config, canonical_json, config_hash, apply_ablation, DEFAULT_CONFIG_PATH
from src.core.scenario import run_spike_case_study, evaluate, compare_ablation, write_report, trace_frame
from src.core.replay import replay
from src.agents.policy import MultiAgentPolicy
from src.agents.trainer import MAPPOTrainer
from src.utils.event_log import EventLog, TRACE_FILE, EXPLANATIONS_FILE, write_trace, write_explanations
from src.utils.checkpoint import save_checkpoint, load_checkpoint
from src.ui.report_view import (
    case_study_tables, evaluation_table, ablation_table, render_text, plot_timeline
)


# =============================================================================
# RICH CONSOLE SETUP
# =============================================================================

console = Console()
err_console = Console(stderr=True)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_FAILED = 3

MANIFEST_FILE = "manifest.json"
CONFIG_FILE = "config.json"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.json"
REPORT_FILE = "report.json"
REPORT_TEXT_FILE = "report.txt"
TIMELINE_FILE = "timeline.png"


def setup_logging(level: int = logging.INFO, rich_output: bool = True) -> None:
    """Configure logging with rich formatting when attached to a terminal."""
    if rich_output:
        logging.basicConfig(
            level=level, format="%(name)-20s | %(message)s", datefmt="%H:%M:%S",
            handlers=[RichHandler(console=err_console, show_path=False)], force=True,
        )
    else:
        logging.basicConfig(
            level=level,
            format="%(asctime)s | %(name)-20s | %(levelname)-8s | %(message)s",
            datefmt="%H:%M:%S", force=True,
        )


def print_banner() -> None:
    banner = """
    ╔══════════════════════════════════════════════════════════════════╗
    ║   📡 SliceSim                                                    ║
    ║   Explainable multi-agent resource slicing (URLLC / eMBB / mMTC) ║
    ╚══════════════════════════════════════════════════════════════════╝
    """
    console.print(banner, style="bold cyan")


# =============================================================================
# RUN DIRECTORY
# =============================================================================

def prepare_run(command: str, config: SliceSimConfig, seeds: List[int], out: Path,
                checkpoint: Optional[str], ablation: bool) -> None:
    """Write the manifest, then the resolved config. Nothing else may precede them."""
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        command=command, config_hash=config_hash(config), seeds=seeds,
        code_version=__version__, checkpoint=checkpoint, ablation=ablation,
    )
    (out / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2))
    (out / CONFIG_FILE).write_text(canonical_json(config))


def parse_seeds(raw: Optional[str], config: SliceSimConfig) -> List[int]:
    if not raw:
        return list(config.seeds)[: config.scenario.n_eval_seeds]
    try:
        seeds = [int(s) for s in raw.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds must be a comma-separated list of integers, got {raw!r}") from e
    if not seeds or any(s < 0 for s in seeds):
        raise ConfigError(f"--seeds must list nonnegative integers, got {raw!r}")
    return seeds


def resolve_policy(args: argparse.Namespace, config: SliceSimConfig, out: Path, warn: bool = True) -> MultiAgentPolicy:
    snapshot = str(out / config.train.nan_snapshot_path)
    if args.checkpoint:
        policy = load_checkpoint(args.checkpoint, nan_snapshot_path=snapshot)
        if policy.config != config.policy:
            raise ConfigError(f"{args.checkpoint}: policy layout differs from the config's policy section")
        return policy
    if warn:
        logging.getLogger("SliceSim.CLI").warning("No --checkpoint given; using a freshly initialized policy")
    return MultiAgentPolicy(config.policy, seed=config.seed, nan_snapshot_path=snapshot)


def write_text_report(renderables: Sequence[object], out: Path) -> None:
    for item in renderables:
        console.print(item)
    (out / REPORT_TEXT_FILE).write_text(render_text(renderables))


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_validate_config(args: argparse.Namespace, config: SliceSimConfig) -> int:
    seeds = parse_seeds(args.seeds, config)
    if args.out:
        prepare_run("validate-config", config, seeds, Path(args.out), None, args.ablation)
    console.print(Panel(
        f"Config: {args.config}\nHash: {config_hash(config)}\n"
        f"Slices: {', '.join(s.slice_id.value for s in config.sim.slices)}\nSeeds: {seeds}",
        title="✅ Configuration valid", style="bold green",
    ))
    return EXIT_OK


def cmd_train(args: argparse.Namespace, config: SliceSimConfig) -> int:
    seeds = parse_seeds(args.seeds, config)
    config = config.model_copy(update={"seed": seeds[0]})
    out = Path(args.out)
    prepare_run("train", config, seeds, out, args.checkpoint, args.ablation)

    event_log = EventLog(out)
    trainer = MAPPOTrainer(config, policy=resolve_policy(args, config, out, warn=False), event_log=event_log)

    console.print(f"\n🏋️ Training {config.train.iterations} iterations "
                  f"({config.train.rollout_length} ticks, {config.train.n_envs} envs)", style="bold")
    try:
        trainer.train()
    finally:
        trainer.write_metrics(out / METRICS_FILE)
    save_checkpoint(trainer.policy, out / CHECKPOINT_FILE)

    last = trainer.metrics[-1] if trainer.metrics else {}
    console.print(Panel(
        "\n".join(f"{k}: {v:.4f}" for k, v in last.items() if isinstance(v, float)) or "no iterations run",
        title="🏁 Training complete", style="bold green",
    ))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace, config: SliceSimConfig) -> int:
    seeds = parse_seeds(args.seeds, config)
    out = Path(args.out)
    prepare_run("evaluate", config, seeds, out, args.checkpoint, args.ablation)
    policy = resolve_policy(args, config, out)

    summary = evaluate(config, policy, seeds)
    payload = {"evaluation": summary.model_dump(mode="json")}
    renderables: List[object] = [evaluation_table(summary)]
    if args.compare:
        baseline = load_checkpoint(args.compare, nan_snapshot_path=str(out / config.train.nan_snapshot_path))
        comparison = compare_ablation(config, policy, baseline, seeds)
        payload["ablation"] = comparison.model_dump(mode="json")
        renderables.append(ablation_table(comparison))
    (out / REPORT_FILE).write_text(json.dumps(payload, indent=2))
    write_text_report(renderables, out)
    return EXIT_OK


def cmd_case_study(args: argparse.Namespace, config: SliceSimConfig) -> int:
    seeds = parse_seeds(args.seeds, config)
    out = Path(args.out)
    prepare_run("case-study", config, seeds, out, args.checkpoint, args.ablation)
    policy = resolve_policy(args, config, out)
    event_log = EventLog(out)

    report, trajectory = run_spike_case_study(config, policy, seeds[0], event_log=event_log)
    write_trace(trajectory.trace_rows, out / TRACE_FILE)
    write_explanations(trajectory.explanations, out / EXPLANATIONS_FILE)
    write_report(report, out / REPORT_FILE)
    urllc_target = config.sim.slices[0].targets.latency_target_ms
    plot_timeline(trace_frame(trajectory), trajectory.meta_weights, out / TIMELINE_FILE,
                  urllc_target, report.detection_tick, report.resolution_tick)
    write_text_report(case_study_tables(report), out)
    return EXIT_OK if report.verdict == Verdict.PASSED else EXIT_FAILED


def cmd_replay(args: argparse.Namespace) -> int:
    result = replay(args.run_dir)
    if result.passed:
        console.print(Panel(
            f"{result.rows_checked} trace rows and {result.explanations_checked} explanations match",
            title="✅ Replay PASS", style="bold green",
        ))
        return EXIT_OK
    shown = result.failures[:10]
    more = len(result.failures) - len(shown)
    err_console.print(Panel(
        "\n".join(shown) + (f"\n... {more} more" if more > 0 else ""),
        title="❌ Replay FAIL", style="bold red",
    ))
    return EXIT_FAILED


# =============================================================================
# ENTRY POINT
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicesim", description="Explainable multi-agent RAN slicing")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("--plain-logs", action="store_true", help="Plain log format instead of rich")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_default: Optional[str]) -> None:
        p.add_argument("--config", default=str(DEFAULT_CONFIG_PATH), help="Config JSON path")
        p.add_argument("--seeds", default=None, help="Comma-separated seeds (overrides config)")
        p.add_argument("--out", default=out_default, help="Output directory")
        p.add_argument("--checkpoint", default=None, help="Policy checkpoint JSON")
        p.add_argument("--ablation", action="store_true", help="Plain MAPPO: alpha_xrl = w_xrl = 0")

    common(sub.add_parser("train", help="Train the multi-agent policy"), "runs/train")
    evaluate_p = sub.add_parser("evaluate", help="Greedy multi-seed evaluation")
    common(evaluate_p, "runs/evaluate")
    evaluate_p.add_argument("--compare", default=None,
                            help="Ablation checkpoint to compare against (full minus ablation deltas)")
    common(sub.add_parser("case-study", help="Latency-spike case study"), "runs/case-study")
    common(sub.add_parser("validate-config", help="Validate a config document"), None)
    replay_p = sub.add_parser("replay", help="Verify a run directory's trace and explanations")
    replay_p.add_argument("run_dir", help="Directory holding trace.csv, explanations.jsonl and config.json")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO, rich_output=not args.plain_logs)

    try:
        if args.command == "replay":
            return cmd_replay(args)
        print_banner()
        config = load_config(args.config)
        if args.ablation:
            config = apply_ablation(config)
        handler = {
            "validate-config": cmd_validate_config,
            "train": cmd_train,
            "evaluate": cmd_evaluate,
            "case-study": cmd_case_study,
        }[args.command]
        return handler(args, config)
    except (ConfigError, ReplaySchemaError) as e:
        err_console.print(f"❌ {e}", style="bold red")
        return EXIT_CONFIG
    except SliceSimError as e:
        err_console.print(f"💥 {type(e).__name__}: {e}", style="bold red")
        return EXIT_RUNTIME
    except Exception as e:
        logging.getLogger("SliceSim.CLI").exception("Unexpected failure")
        err_console.print(f"💥 {type(e).__name__}: {e}", style="bold red")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
