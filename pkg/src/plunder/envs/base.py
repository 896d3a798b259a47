"""Shared environment machinery: observation models, trajectories, demo generation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..pdsl import Domain, Policy, sample_next_action


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Per-action Gaussian observation model with diagonal noise.

    ``mean_fn(action, state)`` returns an array whose last axis runs over
    channels; ``state`` may hold scalars or column arrays.
    """

    domain: Domain
    channels: tuple
    sigma: tuple
    mean_fn: Callable[[str, Mapping], np.ndarray]
    # nats between the noise-only expectation and the convergence threshold
    gamma_margin: float = 0.1

    def __post_init__(self):
        if len(self.sigma) != len(self.channels) or min(self.sigma) <= 0:
            raise ValueError("need one positive sigma per channel")

    def mean(self, action: str, state: Mapping) -> np.ndarray:
        return np.asarray(self.mean_fn(action, state), dtype=float)

    @property
    def peak_log_density(self) -> float:
        """Per-step log density at the mean, the noiseless upper bound."""
        return float(-np.sum(np.log(np.asarray(self.sigma) * math.sqrt(2 * math.pi))))

    def log_density(self, z, action: str, state: Mapping) -> float:
        sig = np.asarray(self.sigma)
        r = (np.asarray(z, dtype=float) - self.mean(action, state)) / sig
        return float(self.peak_log_density - 0.5 * np.sum(r * r))

    def log_density_matrix(self, obs: np.ndarray, columns: Mapping) -> np.ndarray:
        """``L[t, a] = log P(z_t | a, s_t)`` for a whole trajectory."""
        obs = np.asarray(obs, dtype=float)
        sig = np.asarray(self.sigma)
        out = np.empty((obs.shape[0], self.domain.n_actions))
        for i, a in enumerate(self.domain.actions):
            mu = np.broadcast_to(self.mean(a, columns), obs.shape)
            r = (obs - mu) / sig
            out[:, i] = self.peak_log_density - 0.5 * np.sum(r * r, axis=1)
        return out


def obs_log_density(model: ObservationModel, z, action: str, state: Mapping) -> float:
    return model.log_density(z, action, state)


@dataclass
class Trajectory:
    """One demonstration: per-step states (columnar), observations, optional labels."""

    columns: dict
    obs: np.ndarray
    gt_actions: Optional[list] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        n = len(self.obs)
        if any(len(v) != n for v in self.columns.values()):
            raise ValueError("state columns and observations differ in length")
        if self.gt_actions is not None and len(self.gt_actions) != n:
            raise ValueError("gt_actions length differs from observations")

    def __len__(self) -> int:
        return len(self.obs)

    def state(self, t: int) -> dict:
        return {k: float(v[t]) for k, v in self.columns.items()}

    @property
    def states(self) -> list:
        return [self.state(t) for t in range(len(self))]


@dataclass
class DemoSet:
    env: str
    demos: list
    sigma_act: tuple
    seed: int
    split: str = "train"

    def __post_init__(self):
        if not self.demos:
            raise ValueError("a demo set needs at least one trajectory")

    def __len__(self):
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)

    def to_json(self) -> dict:
        return {
            "env": self.env,
            "seed": self.seed,
            "split": self.split,
            "sigma_act": list(self.sigma_act),
            "demos": [
                {
                    "seed": d.seed,
                    "states": d.states,
                    "obs": d.obs.tolist(),
                    "gt_actions": d.gt_actions,
                }
                for d in self.demos
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> DemoSet:
        demos = []
        for d in doc["demos"]:
            names = list(d["states"][0]) if d["states"] else []
            cols = {n: [s[n] for s in d["states"]] for n in names}
            demos.append(Trajectory(cols, np.asarray(d["obs"]), d.get("gt_actions"), d.get("seed")))
        return cls(doc["env"], demos, tuple(doc["sigma_act"]), doc["seed"], doc.get("split", "train"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=None) + "\n")

    @classmethod
    def load(cls, path) -> DemoSet:
        return cls.from_json(json.loads(Path(path).read_text()))


class EnvSpec:
    """Base class for the built-in environments.

    Subclasses define ``name``, ``actions``, ``signature``, ``extractors``,
    ``channels`` and implement the dynamics, observation means, initial
    state sampler, success predicate and hand-written policy.
    """

    name: str = ""
    actions: tuple = ()
    signature: dict = {}
    extractors: tuple = ()
    channels: tuple = ()
    initial_action: str = ""

    def __init__(self, params=None):
        self.params = params if params is not None else self.default_params()
        if self.params.dt <= 0:
            raise ValueError("dt must be positive")
        from ..pdsl import make_domain

        self.domain = make_domain(self.name, self.actions, self.signature, self.extractors)

    @classmethod
    def default_params(cls):
        raise NotImplementedError

    @property
    def dt(self) -> float:
        return self.params.dt

    @property
    def horizon(self) -> int:
        return self.params.horizon

    @property
    def default_sigma_act(self) -> tuple:
        return tuple(self.params.sigma_act for _ in self.channels)

    def observation_model(self, noise_mult: float = 1.0) -> ObservationModel:
        """The model's width grows with the demo noise above the default
        level, so it never claims to be sharper than the data."""
        scale = max(1.0, float(noise_mult))
        sig = tuple(self.params.sigma_obs * scale for _ in self.channels)
        return ObservationModel(self.domain, tuple(self.channels), sig, self.obs_mean, self.params.gamma_margin)

    def noise_mult(self, sigma_act) -> float:
        """Multiplier of the default actuation noise behind ``sigma_act``."""
        ratios = np.asarray(sigma_act, dtype=float) / np.asarray(self.default_sigma_act)
        return float(np.max(ratios))

    def obs_mean(self, action: str, state: Mapping) -> np.ndarray:
        raise NotImplementedError

    def initial_state(self, rng: np.random.Generator) -> dict:
        raise NotImplementedError

    def step(self, state: Mapping, z) -> dict:
        raise NotImplementedError

    def task_success(self, traj: Trajectory) -> bool:
        raise NotImplementedError

    def gt_policy(self) -> Policy:
        raise NotImplementedError


def env_step(env: EnvSpec, state: Mapping, z) -> dict:
    return env.step(state, z)


def _as_sigma(sigma_act, n_channels) -> np.ndarray:
    sig = np.broadcast_to(np.asarray(sigma_act, dtype=float), (n_channels,))
    if np.any(sig < 0):
        raise ValueError("actuation noise must be non-negative")
    return sig


def rollout(
    env: EnvSpec,
    policy: Policy,
    model: ObservationModel,
    horizon: int,
    sigma_act,
    rng: np.random.Generator,
    seed: Optional[int] = None,
) -> Trajectory:
    """Closed-loop execution: sample an action, emit its mean plus noise, step."""
    sig = _as_sigma(sigma_act, len(model.channels))
    state = env.initial_state(rng)
    a_prev = env.initial_action
    states, obs, acts = [], [], []
    for _ in range(horizon):
        a = sample_next_action(policy, a_prev, state, rng)
        z = model.mean(a, state) + sig * rng.standard_normal(len(sig))
        states.append(state)
        obs.append(z)
        acts.append(a)
        state = env.step(state, z)
        a_prev = a
    cols = {k: [s[k] for s in states] for k in env.signature}
    return Trajectory(cols, np.asarray(obs), acts, seed)


def demo_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def generate_demos(
    env: EnvSpec,
    policy: Policy,
    model: ObservationModel,
    n: int,
    horizon: int,
    sigma_act,
    seed: int,
    split: str = "train",
) -> DemoSet:
    """Roll out ``policy`` ``n`` times; demo ``i`` uses the seed pair ``(seed, i)``."""
    if n < 1 or horizon < 1:
        raise ValueError("need n >= 1 and horizon >= 1")
    sig = tuple(float(s) for s in _as_sigma(sigma_act, len(model.channels)))
    demos = []
    for i in range(n):
        rng = np.random.default_rng(demo_seed(seed, i))
        demos.append(rollout(env, policy, model, horizon, sig, rng, seed=i))
    return DemoSet(env.name, demos, sig, int(seed), split)


def split_seeds(seed: int) -> tuple:
    """Disjoint train/test generation seeds derived from one experiment seed."""
    ss = np.random.SeedSequence(int(seed))
    a, b = ss.spawn(2)
    return int(a.generate_state(1)[0]), int(b.generate_state(1)[0])
