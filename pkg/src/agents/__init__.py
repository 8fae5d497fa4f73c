"""
Slice Agents: Policy, Explainability, Control and Training
"""

from .explain import ExplainabilityTracker, explainability_utility, render_explanation
from .policy import MultiAgentPolicy, AttentionBundle, JointDecision
from .controller import SliceController, Trajectory
from .trainer import MAPPOTrainer, gae, clipped_surrogate

__all__ = [
    "ExplainabilityTracker",
    "explainability_utility",
    "render_explanation",
    "MultiAgentPolicy",
    "AttentionBundle",
    "JointDecision",
    "SliceController",
    "Trajectory",
    "MAPPOTrainer",
    "gae",
    "clipped_surrogate"
]
