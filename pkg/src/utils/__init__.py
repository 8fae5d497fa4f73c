"""
Utility Functions and Helpers
"""

from .event_log import (
    EventLog,
    EventType,
    write_trace,
    read_trace
)

__all__ = [
    "EventLog",
    "EventType",
    "write_trace",
    "read_trace"
]
