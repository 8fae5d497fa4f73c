"""
Report rendering for SliceSim
Rich tables for the console and text reports, matplotlib recovery timeline.
"""

import io
from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich import box

from src.core.schema import CaseStudyReport, EvaluationSummary, AblationComparison, SLICE_ORDER, RESOURCE_ORDER
from src.agents.policy import HEAD_NAMES


def case_study_tables(report: CaseStudyReport) -> List[object]:
    """Renderables for a case-study report."""
    style = "bold green" if report.verdict.value == "PASSED" else "bold red"
    header = Panel(
        f"Verdict: {report.verdict.value}   seed {report.seed}   config {report.config_hash[:12]}\n"
        f"Detected at tick {report.detection_tick}, resolved at tick {report.resolution_tick}"
        f" ({report.resolution_ticks} ticks)\n"
        f"Decision time mean {report.decision_wall_ms:.2f} ms, p99 {report.decision_wall_p99_ms:.2f} ms\n"
        f"Reference: manual troubleshooting {report.reference_context.get('manual_troubleshooting_min', 0):g} min, "
        f"reported automated resolution {report.reference_context.get('reference_resolution_min', 0):g} min",
        title="⚡ Latency Spike Case Study", style=style,
    )

    alloc = Table(title="📊 Resource Allocation", box=box.ROUNDED)
    alloc.add_column("Slice", style="cyan")
    for r in RESOURCE_ORDER:
        alloc.add_column(f"{r.value} before", justify="right")
        alloc.add_column(f"{r.value} after", justify="right")
    for slice_id, row in report.allocation_table.items():
        alloc.add_row(slice_id, *[
            f"{row[f'{r.value}_{when}'] * 100:.1f}%" for r in RESOURCE_ORDER for when in ("before", "after")
        ])

    qos = Table(title="📶 QoS", box=box.ROUNDED)
    qos.add_column("Slice", style="cyan")
    for col in ("Latency (ms)", "Reliability", "Throughput (Mbps)"):
        qos.add_column(f"{col} before", justify="right")
        qos.add_column(f"{col} after", justify="right")
    for slice_id, row in report.qos_table.items():
        qos.add_row(
            slice_id,
            f"{row['latency_ms_before']:.3f}", f"{row['latency_ms_after']:.3f}",
            f"{row['reliability_before']:.6f}", f"{row['reliability_after']:.6f}",
            f"{row['throughput_mbps_before']:.2f}", f"{row['throughput_mbps_after']:.2f}",
        )

    sla = Table(title="✅ SLA Verdicts", box=box.ROUNDED)
    sla.add_column("Metric", style="cyan")
    sla.add_column("Target")
    sla.add_column("Achieved", justify="right")
    sla.add_column("Status", justify="center")
    for v in report.sla_verdicts:
        sla.add_row(v.metric, v.target, v.achieved, "✅" if v.passed else "❌")

    chain = Table(title="🧠 Explanation Chain", box=box.ROUNDED)
    chain.add_column("Stage", style="magenta")
    chain.add_column("Tick", justify="right")
    chain.add_column("Summary")
    for entry in report.attention_trace:
        chain.add_row(str(entry["stage"]), str(entry["tick"]), str(entry["summary"]))

    renderables: List[object] = [header, alloc, qos, sla, chain]
    if report.notes:
        renderables.append(Panel("\n".join(report.notes), title="Notes"))
    return renderables


def evaluation_table(summary: EvaluationSummary) -> Table:
    table = Table(title=f"📈 Evaluation over seeds {summary.seeds}", box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    table.add_column("Mean", justify="right")
    table.add_column("95% CI", justify="right")
    for name, metric in summary.aggregate.items():
        table.add_row(name, f"{metric.mean:.4f}", f"[{metric.ci_low:.4f}, {metric.ci_high:.4f}]")
    return table


def ablation_table(comparison: AblationComparison) -> Table:
    table = Table(title="⚖️ Full minus ablation", box=box.ROUNDED)
    table.add_column("Metric", style="cyan")
    table.add_column("Mean delta", justify="right")
    table.add_column("+ / - / 0 / missing", justify="center")
    for name, mean in comparison.mean_deltas.items():
        counts = comparison.sign_counts[name]
        table.add_row(
            name, "n/a" if mean is None else f"{mean:+.4f}",
            f"{counts['positive']} / {counts['negative']} / {counts['zero']} / {counts['missing']}",
        )
    return table


def render_text(renderables: Sequence[object], width: int = 120) -> str:
    """Plain-text export of rich renderables."""
    console = Console(record=True, width=width, file=io.StringIO())
    for item in renderables:
        console.print(item)
    return console.export_text()


def plot_timeline(
    frame: pd.DataFrame,
    meta_weights: Sequence[np.ndarray],
    path: Union[str, Path],
    latency_target_ms: float,
    detection_tick: Optional[int] = None,
    resolution_tick: Optional[int] = None,
) -> Path:
    """URLLC latency and URLLC-agent head weights around the spike."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    urllc = frame[frame["slice"] == SLICE_ORDER[0].value]
    fig, (ax_lat, ax_meta) = plt.subplots(2, 1, figsize=(10, 6), sharex=True)

    ax_lat.plot(urllc["tick"], urllc["latency_ms"], color="tab:red", label="URLLC latency")
    ax_lat.axhline(latency_target_ms, color="black", linestyle="--", linewidth=0.8, label="target")
    ax_lat.set_ylabel("latency (ms)")
    ax_lat.set_yscale("log")

    if len(meta_weights):
        meta = np.asarray([m[0] for m in meta_weights])
        ticks = urllc["tick"].to_numpy()[: len(meta)]
        ax_meta.stackplot(ticks, meta[: len(ticks)].T, labels=list(HEAD_NAMES))
    ax_meta.set_ylabel("head weight")
    ax_meta.set_xlabel("tick (10 ms)")
    ax_meta.legend(loc="upper right", fontsize="small", ncol=3)

    for ax in (ax_lat, ax_meta):
        if detection_tick is not None:
            ax.axvline(detection_tick, color="tab:orange", linewidth=0.8)
        if resolution_tick is not None:
            ax.axvline(resolution_tick, color="tab:green", linewidth=0.8)
    ax_lat.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
