"""Desk-scale driving environments and demonstration generation."""
from .base import (
    DemoSet,
    EnvSpec,
    ObservationModel,
    Trajectory,
    env_step,
    generate_demos,
    obs_log_density,
    rollout,
    split_seeds,
)
from .merge import Merge, MergeParams
from .stopsign import StopSign, StopSignParams

ENVS = {"ss": StopSign, "mg": Merge}


def get_env(name: str, params=None) -> EnvSpec:
    try:
        cls = ENVS[name]
    except KeyError:
        raise KeyError(f"unknown env {name!r}; choose from {', '.join(ENVS)}") from None
    return cls(params)
