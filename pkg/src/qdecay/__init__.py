"""Synchronous Q-learning with decay-to-zero learning-rate schedules and
tail-averaged inference."""

from .errors import (
    ConfigError,
    DegenerateMarginError,
    InvalidArgumentError,
    NumericFailureError,
    QDecayError,
)
from .gridworld import GridworldSpec, build_gridworld
from .mdp import Mdp, Policy, RewardNoise, exact_bellman, greedy_policy, solve_q_star
from .schedules import Schedule, admissible_eta_bound, parse_schedule, tail_window

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateMarginError",
    "InvalidArgumentError",
    "NumericFailureError",
    "QDecayError",
    "GridworldSpec",
    "build_gridworld",
    "Mdp",
    "Policy",
    "RewardNoise",
    "exact_bellman",
    "greedy_policy",
    "solve_q_star",
    "Schedule",
    "admissible_eta_bound",
    "parse_schedule",
    "tail_window",
]
