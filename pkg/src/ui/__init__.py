"""
Report Rendering (Console Tables & Timeline Figure)
"""

from .report_view import (
    case_study_tables,
    render_text,
    plot_timeline
)

__all__ = [
    "case_study_tables",
    "render_text",
    "plot_timeline"
]
