"""Simplified three-lane merge: wait for a gap in the rightmost lane, then change lanes.

Traffic runs only in the target lane, as a regularly spaced platoon at
constant speed.  The ego tracks the two target-lane vehicles that bracket
it longitudinally: ``r_x`` (ahead) and ``rb_x`` (behind).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..pdsl import LENGTH, VELOCITY, Policy, Rule, Var, lgs, minus
from ..pdsl.nodes import And
from .base import EnvSpec, Trajectory


@dataclass(frozen=True)
class MergeParams:
    dt: float = 0.1
    horizon: int = 100
    lane_width: float = 4.0
    n_lanes: int = 3
    acc: float = 2.0
    v_lat: float = 4.0
    keep_gain: float = 1.0
    track_limit: float = 3.0
    center_gain: float = 2.0
    v_cap: float = 35.0
    v0_range: tuple = (18.0, 22.0)
    v_max_range: tuple = (24.0, 28.0)
    v_r_range: tuple = (16.0, 20.0)
    spacing_range: tuple = (28.0, 40.0)
    # the ego starts just behind a target-lane vehicle and has to overtake it
    lead_range: tuple = (0.0, 6.0)
    car_length: float = 4.5
    car_width: float = 2.0
    sigma_obs: float = 0.5
    sigma_act: float = 0.5
    gamma_margin: float = 0.12
    success_offset: float = 1.0


class Merge(EnvSpec):
    name = "mg"
    actions = ("FASTER", "SLOWER", "LANE_RIGHT", "KEEP")
    signature = {
        "x": LENGTH,
        "v": VELOCITY,
        "v_max": VELOCITY,
        "v_r": VELOCITY,
        "d_right": LENGTH,
        "r_x": LENGTH,
        "rb_x": LENGTH,
    }
    extractors = ()
    channels = ("acc", "lat")
    initial_action = "FASTER"

    @classmethod
    def default_params(cls):
        return MergeParams()

    @property
    def start_offset(self) -> float:
        p = self.params
        return p.lane_width * (p.n_lanes - 1)

    def obs_mean(self, action, state):
        p = self.params
        v = np.asarray(state["v"], dtype=float)
        track = np.clip(p.keep_gain * (np.asarray(state["v_r"], dtype=float) - v), -p.track_limit, p.track_limit)
        zero = np.zeros_like(v)
        if action == "FASTER":
            acc, lat = zero + p.acc, zero
        elif action == "SLOWER":
            acc, lat = zero - p.acc, zero
        elif action == "LANE_RIGHT":
            acc, lat = track, zero + p.v_lat
        elif action == "KEEP":
            # drift back toward the lane center
            d = np.asarray(state["d_right"], dtype=float)
            acc, lat = track, np.clip(p.center_gain * d, 0.0, p.v_lat)
        else:
            raise KeyError(action)
        return np.stack([acc, lat], axis=-1)

    def initial_state(self, rng):
        p = self.params
        spacing = float(rng.uniform(*p.spacing_range))
        r_x = float(rng.uniform(*p.lead_range))
        return {
            "x": 0.0,
            "v": float(rng.uniform(*p.v0_range)),
            "v_max": float(rng.uniform(*p.v_max_range)),
            "v_r": float(rng.uniform(*p.v_r_range)),
            "d_right": self.start_offset,
            "r_x": r_x,
            "rb_x": r_x - spacing,
        }

    def step(self, state, z):
        p = self.params
        acc, lat = (float(u) for u in np.ravel(z)[:2])
        out = dict(state)
        out["x"] = state["x"] + state["v"] * p.dt
        out["v"] = float(np.clip(state["v"] + acc * p.dt, 0.0, p.v_cap))
        out["d_right"] = float(np.clip(state["d_right"] - lat * p.dt, 0.0, self.start_offset))
        r_x = state["r_x"] + state["v_r"] * p.dt
        rb_x = state["rb_x"] + state["v_r"] * p.dt
        spacing = r_x - rb_x
        # keep the bracketing pair current as the ego overtakes or falls back
        while out["x"] > r_x:
            rb_x, r_x = r_x, r_x + spacing
        while out["x"] < rb_x:
            r_x, rb_x = rb_x, rb_x - spacing
        out["r_x"], out["rb_x"] = r_x, rb_x
        return out

    def collisions(self, traj: Trajectory) -> np.ndarray:
        p = self.params
        c = traj.columns
        lateral = c["d_right"] < p.car_width
        ahead = (c["r_x"] - c["x"]) < p.car_length
        behind = (c["x"] - c["rb_x"]) < p.car_length
        return lateral & (ahead | behind)

    def task_success(self, traj: Trajectory) -> bool:
        last = traj.state(len(traj) - 1)
        return last["d_right"] <= self.params.success_offset and not bool(np.any(self.collisions(traj)))

    def gt_policy(self) -> Policy:
        x, v, v_max = Var("x"), Var("v"), Var("v_max")
        gap = And(lgs(minus(Var("r_x"), x), 10.0, 1.5), lgs(minus(x, Var("rb_x")), 10.0, 1.5))
        rules = (
            Rule("FASTER", gap, "LANE_RIGHT"),
            Rule("FASTER", lgs(minus(v, v_max), 0.0, 2.0), "SLOWER"),
            Rule("SLOWER", gap, "LANE_RIGHT"),
            Rule("SLOWER", lgs(minus(v, v_max), -4.0, -2.0), "FASTER"),
            Rule("LANE_RIGHT", lgs(Var("d_right"), 0.3, -6.0), "KEEP"),
        )
        return Policy(rules, self.domain)
