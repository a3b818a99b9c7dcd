"""Agents: the policy adapter plus random, rule, and behavior-cloning baselines."""

from .base import Agent, emit_action, mirror_position
from .hbc import BCPolicy, CloneAgent, HBCPolicy
from .simple import RandomAgent, RuleAgent

__all__ = [
    "Agent",
    "BCPolicy",
    "CloneAgent",
    "HBCPolicy",
    "RandomAgent",
    "RuleAgent",
    "emit_action",
    "mirror_position",
]
