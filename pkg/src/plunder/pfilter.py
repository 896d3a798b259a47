"""Particle filtering over latent action labels, plus exact small-instance oracles.

Time convention: states ``s_0 .. s_{T-1}``.  ``a_0`` is uniform over the
action set; for ``t >= 1`` ``a_t ~ pi(. | a_{t-1}, s_t)``.  Every step is
weighted by ``P(z_t | a_t, s_t)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .envs.base import ObservationModel, Trajectory
from .pdsl import Policy, transition_matrix


class DegenerateFilterError(RuntimeError):
    """Every particle received zero observation likelihood at some step."""


@dataclass(frozen=True)
class Particle:
    action: int
    parent: int
    log_weight: float


@dataclass
class FilterResult:
    """Per-step particle arrays, all shaped ``[T, M]``.

    ``parents[t, i]`` indexes generation ``t - 1`` (``-1`` at ``t = 0``);
    ``log_weights`` are the incremental (pre-resampling) log weights.
    ``final_indices`` is the resampled final generation used for traceback.
    """

    actions: np.ndarray
    parents: np.ndarray
    log_weights: np.ndarray
    step_log_means: np.ndarray
    log_marginal: float
    final_indices: np.ndarray

    @property
    def n_particles(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return self.actions.shape[0]

    @property
    def generations(self) -> list:
        return [
            [Particle(int(a), int(p), float(w)) for a, p, w in zip(*row)]
            for row in zip(self.actions, self.parents, self.log_weights)
        ]


def emission_matrix(traj: Trajectory, model: ObservationModel) -> np.ndarray:
    return model.log_density_matrix(traj.obs, traj.columns)


def policy_transitions(traj: Trajectory, policy: Policy) -> np.ndarray:
    return transition_matrix(policy, traj.columns, len(traj))


def resample_systematic(log_weights, rng: np.random.Generator, n: Optional[int] = None) -> np.ndarray:
    """Low-variance resampling: one uniform offset, ``n`` evenly spaced pointers."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or not np.any(np.isfinite(lw)) or np.any(np.isnan(lw)):
        raise DegenerateFilterError("cannot resample: no finite weights")
    n = lw.size if n is None else int(n)
    w = np.exp(lw - np.max(lw))
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    pos = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, pos, side="right"), lw.size - 1)


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverse CDF."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    return np.minimum((u[:, None] >= cdf).sum(axis=1), probs.shape[1] - 1)


def run_filter(
    traj: Trajectory,
    model: ObservationModel,
    policy: Policy,
    n_particles: int,
    rng: np.random.Generator,
    *,
    ess_threshold: Optional[float] = None,
    transitions: Optional[np.ndarray] = None,
    emissions: Optional[np.ndarray] = None,
) -> FilterResult:
    """Bootstrap particle filter over action labels.

    Resamples every step unless ``ess_threshold`` (a fraction of ``M``) is
    given, in which case resampling happens only when the effective sample
    size drops below it.
    """
    if n_particles < 2:
        raise ValueError("need at least 2 particles")
    M, T = int(n_particles), len(traj)
    A = model.domain.n_actions
    P = policy_transitions(traj, policy) if transitions is None else transitions
    L = emission_matrix(traj, model) if emissions is None else emissions

    actions = np.empty((T, M), dtype=np.int64)
    parents = np.full((T, M), -1, dtype=np.int64)
    log_weights = np.empty((T, M))
    step_log_means = np.empty(T)
    log_marginal = 0.0
    log_norm = np.full(M, -math.log(M))  # normalized log weights carried between steps

    current = rng.integers(A, size=M)
    for t in range(T):
        if t > 0:
            prev = actions[t - 1, idx]
            parents[t] = idx
            current = _sample_rows(P[t][prev], rng)
        actions[t] = current
        lw = L[t, current]
        log_weights[t] = lw
        combined = log_norm + lw
        inc = logsumexp(combined)
        if not np.isfinite(inc):
            raise DegenerateFilterError(f"all particle weights are zero at step {t}")
        step_log_means[t] = inc
        log_marginal += inc
        log_norm = combined - inc
        resampled = ess_threshold is None or 1.0 / np.sum(np.exp(2 * log_norm)) < ess_threshold * M
        if resampled:
            idx = resample_systematic(log_norm, rng)
            log_norm = np.full(M, -math.log(M))
        else:
            # weights carry over; ancestry is the identity
            idx = np.arange(M)
    final = idx if resampled else resample_systematic(log_norm, rng)
    return FilterResult(actions, parents, log_weights, step_log_means, float(log_marginal), final)


def _trace(fr: FilterResult, finals: np.ndarray) -> np.ndarray:
    T = len(fr)
    out = np.empty((len(finals), T), dtype=np.int64)
    idx = np.asarray(finals)
    for t in range(T - 1, -1, -1):
        out[:, t] = fr.actions[t, idx]
        idx = fr.parents[t, idx]
    return out


def traceback_samples(fr: FilterResult, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` label sequences (``[n, T]`` ints) from distinct final particles."""
    if n > fr.n_particles:
        raise ValueError("cannot draw more lineages than particles")
    pick = rng.choice(fr.n_particles, size=n, replace=False)
    return _trace(fr, fr.final_indices[np.sort(pick)])


def all_lineages(fr: FilterResult) -> np.ndarray:
    return _trace(fr, fr.final_indices)


def map_lineage(fr: FilterResult) -> np.ndarray:
    """The most frequent final lineage; ties go to the first encountered."""
    seqs = all_lineages(fr)
    counts: dict = {}
    first: dict = {}
    for i, row in enumerate(seqs):
        key = row.tobytes()
        counts[key] = counts.get(key, 0) + 1
        first.setdefault(key, i)
    best = max(counts, key=lambda k: (counts[k], -first[k]))
    return seqs[first[best]]


def marginal_argmax(fr: FilterResult, n_actions: int) -> np.ndarray:
    """Per-step argmax of the smoothed (traced-back) label marginals."""
    seqs = all_lineages(fr)
    counts = np.stack([(seqs == a).sum(axis=0) for a in range(n_actions)], axis=1)
    return counts.argmax(axis=1)


def labels(seqs: np.ndarray, actions: tuple) -> list:
    return [[actions[a] for a in row] for row in np.atleast_2d(seqs)]


# ---------------------------------------------------------------------------
# exact oracles


@dataclass
class ExactPosterior:
    marginals: np.ndarray  # [T, A] smoothing marginals
    log_marginal: float


def exact_posterior(
    traj: Trajectory,
    model: ObservationModel,
    policy: Policy,
    *,
    transitions: Optional[np.ndarray] = None,
    emissions: Optional[np.ndarray] = None,
) -> ExactPosterior:
    """Forward-backward smoothing in log space, ``O(T A^2)``."""
    P = policy_transitions(traj, policy) if transitions is None else transitions
    L = emission_matrix(traj, model) if emissions is None else emissions
    T, A = L.shape
    with np.errstate(divide="ignore"):
        logP = np.log(P)
    fwd = np.empty((T, A))
    fwd[0] = -math.log(A) + L[0]
    for t in range(1, T):
        fwd[t] = logsumexp(fwd[t - 1][:, None] + logP[t], axis=0) + L[t]
    bwd = np.zeros((T, A))
    for t in range(T - 2, -1, -1):
        bwd[t] = logsumexp(logP[t + 1] + (L[t + 1] + bwd[t + 1])[None, :], axis=1)
    log_z = float(logsumexp(fwd[-1]))
    marg = np.exp(fwd + bwd - log_z)
    return ExactPosterior(marg / marg.sum(axis=1, keepdims=True), log_z)


def brute_force_posterior(
    traj: Trajectory, model: ObservationModel, policy: Policy, limit: int = 10**6
) -> tuple:
    """Enumerate every label sequence.  Returns ``(ExactPosterior, {seq: prob})``."""
    P = policy_transitions(traj, policy)
    L = emission_matrix(traj, model)
    T, A = L.shape
    if A**T > limit:
        raise ValueError(f"{A}^{T} sequences exceeds the enumeration limit {limit}")
    seqs = list(itertools.product(range(A), repeat=T))
    logj = np.empty(len(seqs))
    for n, seq in enumerate(seqs):
        s = -math.log(A) + L[0, seq[0]]
        for t in range(1, T):
            p = P[t, seq[t - 1], seq[t]]
            s += (math.log(p) if p > 0 else -math.inf) + L[t, seq[t]]
        logj[n] = s
    log_z = float(logsumexp(logj))
    post = np.exp(logj - log_z)
    marg = np.zeros((T, A))
    for seq, p in zip(seqs, post):
        marg[np.arange(T), seq] += p
    return ExactPosterior(marg, log_z), dict(zip(seqs, post))
