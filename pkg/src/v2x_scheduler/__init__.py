"""V2X link scheduling for collaborative perception.

This package simulates correlated-fading vehicular links feeding an ego vehicle,
confidence-map driven feature selection and fusion, and trains a deep Q-network
scheduler that is compared against classical baselines. One episode is a rollout of
the graph defined in :mod:`v2x_scheduler.graph`.
"""

from v2x_scheduler.graph import graph, run_episode

__all__ = ["graph", "run_episode"]
