"""
Event log and trace files for SliceSim
Run events as JSON lines, per-tick traces as CSV, explanations as JSON lines.
"""

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import pandas as pd

from src.core.errors import ReplaySchemaError
from src.core.schema import ExplanationRecord


EVENTS_FILE = "events.jsonl"
TRACE_FILE = "trace.csv"
EXPLANATIONS_FILE = "explanations.jsonl"

# Column order of trace.csv
TRACE_COLUMNS: List[str] = [
    "tick", "slice", "phase",
    "power_share", "prb_share", "compute_share",
    "latency_ms", "reliability", "throughput_mbps", "power_used_w", "power_per_device_mw",
    "latency_success_rate", "queue", "spike_active",
    "util_power", "util_prb", "util_compute",
    "gini_power", "gini_prb", "gini_compute",
    "u_latency", "u_reliability", "u_throughput", "u_power",
    "u_qos", "u_eff", "u_fair", "u_slice",
    "u_total", "E", "e_sparsity", "e_consistency", "e_faithfulness",
    "penalty", "clamp_events", "reward", "attention_sha256",
]


class EventType(str, Enum):
    """Types of events in a run."""
    SYSTEM = "SYSTEM"
    SPIKE = "SPIKE"
    TRADE = "TRADE"
    PREDICTIVE = "PREDICTIVE"
    TRAINING = "TRAINING"
    CHECKPOINT = "CHECKPOINT"
    SCENARIO = "SCENARIO"


@dataclass
class SimulationEvent:
    """A single event; stamped with the simulation tick, never with wall time."""
    event_type: EventType
    tick: Optional[int]
    title: str
    message: str
    slice_id: Optional[str] = None
    data: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "event_type": self.event_type.value,
            "tick": self.tick,
            "slice_id": self.slice_id,
            "title": self.title,
            "message": self.message,
            "data": self.data,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SimulationEvent":
        return cls(
            event_type=EventType(d["event_type"]),
            tick=d.get("tick"),
            slice_id=d.get("slice_id"),
            title=d["title"],
            message=d["message"],
            data=d.get("data", {}),
        )


class EventLog:
    """
    Thread-safe event log for one run.

    Events are kept in memory and, when an output directory is set, appended
    to events.jsonl as they arrive.
    """

    def __init__(self, out_dir: Optional[Union[str, Path]] = None):
        self.events: List[SimulationEvent] = []
        self.subscribers: List[Callable[[SimulationEvent], None]] = []
        self.log_file = Path(out_dir) / EVENTS_FILE if out_dir is not None else None
        self._lock = threading.Lock()
        if self.log_file is not None:
            self.log_file.parent.mkdir(parents=True, exist_ok=True)
            self.log_file.write_text("")

    def log(
        self,
        event_type: EventType,
        title: str,
        message: str,
        tick: Optional[int] = None,
        slice_id: Optional[str] = None,
        data: Optional[Dict[str, Any]] = None,
    ) -> SimulationEvent:
        """Log a new event."""
        event = SimulationEvent(
            event_type=event_type, tick=tick, title=title, message=message,
            slice_id=slice_id, data=data or {},
        )
        with self._lock:
            self.events.append(event)
            for subscriber in self.subscribers:
                subscriber(event)
            if self.log_file is not None:
                with self.log_file.open("a") as f:
                    f.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
        return event

    def get_events(self, event_type: Optional[EventType] = None, limit: Optional[int] = None) -> List[SimulationEvent]:
        """Get events with optional filtering."""
        with self._lock:
            events = self.events.copy()
        if event_type:
            events = [e for e in events if e.event_type == event_type]
        return events if limit is None else events[-limit:]

    def subscribe(self, callback: Callable[[SimulationEvent], None]) -> None:
        self.subscribers.append(callback)

    @classmethod
    def load_from_file(cls, filepath: Union[str, Path]) -> List[SimulationEvent]:
        path = Path(filepath)
        if not path.exists():
            return []
        return [SimulationEvent.from_dict(json.loads(line)) for line in path.read_text().splitlines() if line]


# =============================================================================
# TRACES
# =============================================================================

def write_trace(rows: List[Dict[str, Any]], path: Union[str, Path]) -> Path:
    """Write trace rows to CSV with round-trip float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_trace(path: Union[str, Path]) -> pd.DataFrame:
    """
    Load a trace CSV.

    Raises:
        ReplaySchemaError: when the file is missing or lacks trace columns.
    """
    path = Path(path)
    if not path.is_file():
        raise ReplaySchemaError(f"trace file not found: {path}")
    frame = pd.read_csv(path, keep_default_na=False, na_values=[""], dtype={"attention_sha256": str})
    missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
    if missing:
        raise ReplaySchemaError(f"{path}: missing trace columns {missing}")
    return frame


def write_explanations(records: List[ExplanationRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as f:
        for record in records:
            f.write(record.model_dump_json() + "\n")
    return path


def read_explanations(path: Union[str, Path]) -> List[ExplanationRecord]:
    path = Path(path)
    if not path.is_file():
        raise ReplaySchemaError(f"explanation file not found: {path}")
    records = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(ExplanationRecord.model_validate_json(line))
        except ValueError as e:
            raise ReplaySchemaError(f"{path}:{number}: malformed explanation record ({e})") from e
    return records
