"""Define the state structures for the environment, the learner and the rollout graph."""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from typing_extensions import Annotated

FEATURES_PER_LINK = 4


@dataclass(frozen=True)
class EnvState:
    """Observation the scheduler sees at the start of a slot.

    The raw per-collaborator features are kept next to the normalized vector that is
    fed to the Q-network. ``np.asarray(state)`` returns that vector.
    """

    sum_r2: np.ndarray
    max_r2: np.ndarray
    alpha_linear: np.ndarray
    h_mag2: np.ndarray
    vector: np.ndarray = field(repr=False)
    t: int = 0

    def __post_init__(self) -> None:
        """Check the feature invariants."""
        n = len(self.sum_r2)
        if not (len(self.max_r2) == len(self.alpha_linear) == len(self.h_mag2) == n):
            raise ValueError("per-collaborator feature arrays must share one length")
        if self.vector.shape != (FEATURES_PER_LINK * n,):
            raise ValueError(f"state vector must have length {FEATURES_PER_LINK * n}, got {self.vector.shape}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("state vector must be finite")

    def __array__(self, dtype: Any = None, copy: Any = None) -> np.ndarray:
        """Return the normalized observation vector."""
        return self.vector if dtype is None else self.vector.astype(dtype)

    def __len__(self) -> int:
        """Length of the observation vector."""
        return len(self.vector)

    @property
    def n_collaborators(self) -> int:
        """Number of collaborators described by this state."""
        return len(self.sum_r2)


@dataclass(frozen=True)
class Transition:
    """One replay record."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class InputState:
    """Input of the rollout graph, a narrower interface to the outside world."""

    episode: int = 0
    """Episode index, copied into every trace row."""


@dataclass
class RolloutState(InputState):
    """Complete state of one rollout through the scheduling graph."""

    observation: Optional[EnvState] = None
    action: Optional[int] = None
    t: int = 0
    done: bool = False
    episode_return: float = 0.0
    trace: Annotated[List[Dict[str, Any]], operator.add] = field(default_factory=list)
    """
    One row per scheduling slot. The ``operator.add`` reducer appends the rows returned
    by the environment node instead of replacing the list.
    """
    ego_maps: Annotated[List[np.ndarray], operator.add] = field(default_factory=list)
    """Ego confidence map before every slot and after the last one, when recorded."""
