"""Stop-Sign: accelerate to a cruising speed, then brake to a stop at a sign."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..pdsl import (
    ACCELERATION,
    DIST_TRV,
    LENGTH,
    TIME_TO_STP,
    VELOCITY,
    Policy,
    Rule,
    Var,
    lgs,
    minus,
)
from ..pdsl.nodes import FuncApp
from .base import EnvSpec, Trajectory


@dataclass(frozen=True)
class StopSignParams:
    dt: float = 0.1
    horizon: int = 150
    a_acc: float = 4.0
    a_max: float = 13.0
    a_min: float = -20.0
    # DEC mean never rises above -dec_floor, so DEC stays distinct from CON at rest
    dec_floor: float = 0.1
    # within min_gap of the sign, braking switches to -v / halt_time
    min_gap: float = 0.5
    halt_time: float = 0.25
    v_max_range: tuple = (9.0, 13.0)
    a_dec_range: tuple = (-5.0, -3.0)
    stop_range: tuple = (60.0, 80.0)
    # the observation model is wider than the demo noise
    sigma_obs: float = 1.5
    sigma_act: float = 0.5
    gamma_margin: float = 0.04
    success_dist: float = 2.0
    success_speed: float = 0.5


class StopSign(EnvSpec):
    name = "ss"
    actions = ("ACC", "CON", "DEC")
    signature = {
        "pos": LENGTH,
        "v": VELOCITY,
        "v_max": VELOCITY,
        "a_min": ACCELERATION,
        "a_max": ACCELERATION,
        "a_dec": ACCELERATION,
        "d_stop": LENGTH,
    }
    extractors = (DIST_TRV, TIME_TO_STP)
    channels = ("acc",)
    initial_action = "ACC"

    @classmethod
    def default_params(cls):
        return StopSignParams()

    def obs_mean(self, action, state):
        p = self.params
        v = np.asarray(state["v"], dtype=float)
        if action == "ACC":
            mu = np.minimum(np.asarray(state["a_max"], dtype=float), p.a_acc) + 0 * v
        elif action == "CON":
            mu = np.zeros_like(v)
        elif action == "DEC":
            d = np.asarray(state["d_stop"], dtype=float)
            a_min = np.asarray(state["a_min"], dtype=float)
            far = d > p.min_gap
            need = np.where(far, -np.square(v) / (2.0 * np.where(far, d, 1.0)), -v / p.halt_time)
            mu = np.clip(need, a_min, -p.dec_floor)
        else:
            raise KeyError(action)
        return mu[..., None]

    def initial_state(self, rng):
        p = self.params
        return {
            "pos": 0.0,
            "v": 0.0,
            "v_max": float(rng.uniform(*p.v_max_range)),
            "a_min": p.a_min,
            "a_max": p.a_max,
            "a_dec": float(rng.uniform(*p.a_dec_range)),
            "d_stop": float(rng.uniform(*p.stop_range)),
        }

    def step(self, state, z):
        acc = float(np.clip(np.ravel(z)[0], state["a_min"], state["a_max"]))
        v, dt = state["v"], self.params.dt
        out = dict(state)
        out["v"] = max(0.0, v + acc * dt)
        out["pos"] = state["pos"] + v * dt
        out["d_stop"] = state["d_stop"] - v * dt
        return out

    def task_success(self, traj: Trajectory) -> bool:
        p = self.params
        last = traj.state(len(traj) - 1)
        return abs(last["d_stop"]) <= p.success_dist and last["v"] <= p.success_speed

    def gt_policy(self) -> Policy:
        v, v_max, a_dec, d_stop = Var("v"), Var("v_max"), Var("a_dec"), Var("d_stop")
        braking = minus(FuncApp("distTrv", (v, a_dec)), d_stop)
        rules = (
            Rule("ACC", lgs(minus(v, v_max), -0.5, 3.0), "CON"),
            Rule("CON", lgs(braking, 2.8, 0.8), "DEC"),
        )
        return Policy(rules, self.domain)
