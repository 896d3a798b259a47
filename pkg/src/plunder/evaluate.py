"""Metrics and the Greedy / OneShot baselines.

All metrics take an integer ``seed`` and derive one stream per demo or
trial from it, so different methods are scored on identical randomness.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .em import (
    PHASE_FILTER,
    PHASE_SYNTH,
    PHASE_TRACE,
    EmConfig,
    default_initial_policy,
    likelihood,
    phase_rng,
)
from .envs.base import EnvSpec, ObservationModel, rollout
from .pdsl import Policy
from .pfilter import map_lineage, marginal_argmax, run_filter, traceback_samples
from .synth import SynthConfig, synthesize


def predicted_labels(policy: Policy, demos: Sequence, model, n_particles: int, seed: int, method: str = "map") -> list:
    out = []
    for d, traj in enumerate(demos):
        fr = run_filter(traj, model, policy, n_particles, np.random.default_rng([int(seed), d]))
        out.append(map_lineage(fr) if method == "map" else marginal_argmax(fr, model.domain.n_actions))
    return out


def label_accuracy(pred: Sequence, demos: Sequence, domain) -> float:
    hits = total = 0
    for p, traj in zip(pred, demos):
        if traj.gt_actions is None:
            raise ValueError("demo has no ground-truth labels")
        gt = np.array([domain.action_index(a) for a in traj.gt_actions])
        hits += int(np.sum(np.asarray(p) == gt))
        total += len(gt)
    return hits / total


def action_accuracy(policy: Policy, demos: Sequence, model, n_particles: int = 2000, seed: int = 0, method: str = "map") -> float:
    """Fraction of timesteps where the filtered label sequence matches ground truth.

    ``method="map"`` scores the most frequent final lineage; ``"marginal"``
    the per-step argmax of the traced-back marginals.
    """
    if any(d.gt_actions is None for d in demos):
        raise ValueError("action accuracy needs ground-truth labels")
    return label_accuracy(predicted_labels(policy, demos, model, n_particles, seed, method), demos, model.domain)


def mean_obs_loglik(policy: Policy, demos: Sequence, model, n_particles: int = 2000, seed: int = 0) -> float:
    """Mean per-step log marginal likelihood; the same routine the EM loop uses."""
    return likelihood(list(demos), model, policy, n_particles, int(seed))


def success_rate(
    policy: Policy,
    env: EnvSpec,
    model: ObservationModel,
    trials: int = 100,
    horizon: Optional[int] = None,
    sigma_act=None,
    seed: int = 0,
) -> tuple:
    """Closed-loop success fraction and its binomial standard error."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    horizon = env.horizon if horizon is None else horizon
    sigma_act = env.default_sigma_act if sigma_act is None else sigma_act
    wins = 0
    for i in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        wins += bool(env.task_success(rollout(env, policy, model, horizon, sigma_act, rng)))
    rate = wins / trials
    return rate, math.sqrt(rate * (1 - rate) / trials)


# ---------------------------------------------------------------------------
# baselines


def greedy_labels(demos: Sequence, model: ObservationModel) -> list:
    """Per-step most likely action; ties go to the earlier action."""
    return [np.argmax(model.log_density_matrix(d.obs, d.columns), axis=1) for d in demos]


def _full(cfg: SynthConfig) -> SynthConfig:
    return replace(cfg, mode="full")


def run_greedy_baseline(demos: Sequence, model: ObservationModel, cfg: Optional[SynthConfig] = None, seed: int = 0) -> Policy:
    """Greedy labels, then one synthesis over the full sketch space."""
    cfg = SynthConfig() if cfg is None else cfg
    demos = list(demos)
    labels = [lab[None, :] for lab in greedy_labels(demos, model)]
    pi0 = default_initial_policy(model.domain)
    synth_seed = int(phase_rng(seed, 0, PHASE_SYNTH).integers(2**63))
    return synthesize(pi0, demos, labels, _full(cfg), synth_seed)


def run_oneshot_baseline(demos: Sequence, model: ObservationModel, cfg: Optional[EmConfig] = None) -> Policy:
    """Labels sampled by filtering under the initial coin-flip policy, then one full synthesis.

    Uses exactly the seeds of the EM loop's first iteration, so it equals
    ``plunder`` with one iteration, full enumeration and no early stop.
    """
    cfg = EmConfig() if cfg is None else cfg
    demos = list(demos)
    pi0 = default_initial_policy(model.domain)
    seqs = []
    for d, traj in enumerate(demos):
        fr = run_filter(traj, model, pi0, cfg.particles, phase_rng(cfg.seed, 0, PHASE_FILTER, d))
        seqs.append(traceback_samples(fr, cfg.samples, phase_rng(cfg.seed, 0, PHASE_TRACE, d)))
    synth_seed = int(phase_rng(cfg.seed, 0, PHASE_SYNTH).integers(2**63))
    return synthesize(pi0, demos, seqs, _full(cfg.synth), synth_seed)


# ---------------------------------------------------------------------------
# reporting


@dataclass
class MetricRow:
    method: str
    task: str
    metric: str
    value: float
    stderr: Optional[float]
    seed: int
    sigma_mult: Optional[float] = None


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    def add(self, *args, **kwargs) -> None:
        row = MetricRow(*args, **kwargs)
        if row.metric in ("accuracy", "success_rate") and not 0.0 <= row.value <= 1.0:
            raise ValueError(f"{row.metric} outside [0, 1]: {row.value}")
        if not math.isfinite(row.value):
            raise ValueError(f"non-finite {row.metric}")
        self.rows.append(row)

    def get(self, method: str, metric: str, sigma_mult=None) -> float:
        for r in self.rows:
            if r.method == method and r.metric == metric and r.sigma_mult == sigma_mult:
                return r.value
        raise KeyError((method, metric, sigma_mult))

    def to_csv(self, sweep: bool = False) -> str:
        buf = io.StringIO()
        cols = ["method", "task", "metric", "value", "stderr", "seed"] + (["sigma_mult"] if sweep else [])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            d = asdict(r)
            w.writerow(["" if d[c] is None else (repr(d[c]) if isinstance(d[c], float) else d[c]) for c in cols])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.rows], indent=2) + "\n"


def evaluate_policy(
    report: MetricsReport,
    method: str,
    policy: Policy,
    env: EnvSpec,
    model: ObservationModel,
    test_demos: Sequence,
    *,
    n_particles: int = 2000,
    trials: int = 100,
    sigma_act=None,
    seed: int = 0,
    sigma_mult=None,
    metrics=("accuracy", "loglik", "success_rate"),
) -> None:
    """Append accuracy, observation log-likelihood and success rate for one policy."""
    if "accuracy" in metrics:
        report.add(method, env.name, "accuracy", action_accuracy(policy, test_demos, model, n_particles, seed), None, seed, sigma_mult)
    if "loglik" in metrics:
        report.add(method, env.name, "loglik", mean_obs_loglik(policy, test_demos, model, n_particles, seed), None, seed, sigma_mult)
    if "success_rate" in metrics and trials > 0:
        rate, se = success_rate(policy, env, model, trials, env.horizon, sigma_act, seed)
        report.add(method, env.name, "success_rate", rate, se, seed, sigma_mult)
