"""Pareto-optimal driving cycles of a two-level quantum-dot heat engine.

Exact extended-state dynamics, fast- and slow-driving analytics, a Monte-Carlo
trajectory sampler, and optimizers (soft actor-critic and a derivative-free
baseline) for the trade-off between power, power fluctuations and entropy
production.
"""

__version__ = "0.1.0"

from .engine import EngineParams, ExtendedState, Protocol, Segment, otto_protocol  # noqa: E402
from .limit_cycle import CycleMetrics, Normalization, Weights, cycle_metrics, figure_of_merit  # noqa: E402

__all__ = [
    "CycleMetrics",
    "EngineParams",
    "ExtendedState",
    "Normalization",
    "Protocol",
    "Segment",
    "Weights",
    "cycle_metrics",
    "figure_of_merit",
    "otto_protocol",
]
