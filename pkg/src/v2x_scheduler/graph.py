"""Define the rollout graph of one scheduling episode.

The graph alternates a ``scheduler`` node (the policy picks a link) and an
``environment`` node (one scheduling slot is simulated) until the sensing interval ends.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, Literal, Optional, Protocol

from langgraph.graph import StateGraph
from langgraph.runtime import Runtime

from v2x_scheduler.env import SchedulingEnv, SideInfo
from v2x_scheduler.scenario import ScenarioFrame, ScenarioWorld
from v2x_scheduler.state import EnvState, InputState, RolloutState


class Policy(Protocol):
    """A scheduling rule."""

    name: str

    def select(self, state: EnvState, info: SideInfo) -> int:
        """Return the collaborator index to schedule."""
        ...


@dataclass(kw_only=True)
class RolloutContext:
    """Runtime objects a rollout works on.

    The environment and the policy are live Python objects, so they travel in the
    runtime context rather than in the graph state.
    """

    env: SchedulingEnv
    policy: Policy
    frame: Optional[ScenarioFrame | ScenarioWorld] = None
    seed: Optional[int] = None
    record_maps: bool = False


def reset(state: RolloutState, runtime: Runtime[RolloutContext]) -> Dict[str, Any]:
    """Start the episode on the context's frame and seed.

    Builds every unit's confidence map and draws the link state through
    ``SchedulingEnv.reset``.

    Args:
        state (RolloutState): The state handed in by the caller; only ``episode`` is set.
        runtime (Runtime[RolloutContext]): Holds the environment and the recording flag.

    Returns:
        dict: The first observation, a zero slot counter and return, and the initial
        ego map when maps are recorded.
    """
    ctx = runtime.context
    observation = ctx.env.reset(ctx.frame, ctx.seed)
    update: Dict[str, Any] = {"observation": observation, "t": 0, "done": False, "episode_return": 0.0}
    if ctx.record_maps:
        update["ego_maps"] = [ctx.env.tau_e.copy()]
    return update


def scheduler(state: RolloutState, runtime: Runtime[RolloutContext]) -> Dict[str, Any]:
    """Ask the policy for this slot's link.

    The policy sees the normalized observation and the side information the
    baselines rely on (distances, slot-start rates, remaining scores).

    Args:
        state (RolloutState): The current rollout state.
        runtime (Runtime[RolloutContext]): Holds the policy and the environment.

    Returns:
        dict: The chosen action.
    """
    ctx = runtime.context
    if state.observation is None:
        raise ValueError("scheduler reached before the environment was reset")
    return {"action": int(ctx.policy.select(state.observation, ctx.env.side_info()))}


def environment(state: RolloutState, runtime: Runtime[RolloutContext]) -> Dict[str, Any]:
    """Simulate one slot with the chosen link.

    Args:
        state (RolloutState): The current rollout state; ``action`` must be set.
        runtime (Runtime[RolloutContext]): Holds the environment.

    Returns:
        dict: The next observation, the advanced slot counter and return, and one
        trace row appended to ``trace``.
    """
    ctx = runtime.context
    if state.action is None:
        raise ValueError("environment reached without an action")
    observation, reward, done, info = ctx.env.step(state.action)
    row = {"episode": state.episode, "policy": ctx.policy.name, **info.as_dict()}
    update: Dict[str, Any] = {
        "observation": observation,
        "t": state.t + 1,
        "done": done,
        "episode_return": state.episode_return + reward,
        "trace": [row],
    }
    # The reducer on ego_maps appends, so only the new map is returned.
    if ctx.record_maps:
        update["ego_maps"] = [ctx.env.tau_e.copy()]
    return update


# Define a new graph

builder = StateGraph(RolloutState, input_schema=InputState, context_schema=RolloutContext)

# One node to start the episode, then the decide / simulate pair that repeats per slot
builder.add_node(reset)
builder.add_node(scheduler)
builder.add_node(environment)

# Set the entrypoint as `reset`
builder.add_edge("__start__", "reset")
builder.add_edge("reset", "scheduler")

# Every decision is simulated straight away
builder.add_edge("scheduler", "environment")


def route_slot(state: RolloutState) -> Literal["__end__", "scheduler"]:
    """Determine whether another slot follows.

    Args:
        state (RolloutState): The state after the ``environment`` node.

    Returns:
        str: ``"__end__"`` once ``t_slots`` slots have run, otherwise ``"scheduler"``.
    """
    return "__end__" if state.done else "scheduler"


# After a slot either loop back to the scheduler or finish the interval
builder.add_conditional_edges("environment", route_slot)

# Compile the builder into an executable graph
graph = builder.compile(name="Scheduling Rollout")


def run_episode(
    env: SchedulingEnv,
    policy: Policy,
    frame: Optional[ScenarioFrame | ScenarioWorld] = None,
    seed: Optional[int] = None,
    episode: int = 0,
    record_maps: bool = False,
) -> Dict[str, Any]:
    """Roll out one episode through the graph and return its final state values.

    The recursion limit is raised to cover two node visits per slot.
    """
    context = RolloutContext(env=env, policy=policy, frame=frame, seed=seed, record_maps=record_maps)
    return graph.invoke(
        {"episode": episode},
        context=context,
        config={"recursion_limit": 2 * env.cfg.t_slots + 10},
    )
