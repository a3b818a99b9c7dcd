"""Offline imitation of turn-based badminton rallies.

Subpackages: data model and synthetic generator, experience retrieval,
the latent-SDE policy and baseline agents, the rally rollout engine, and
the evaluation harness with its metric kernels.
"""

__version__ = "0.1.0"
