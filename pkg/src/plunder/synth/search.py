"""The M-step: fit every candidate sketch per transition and pick the best policy."""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..pdsl import (
    ConstProb,
    Flip,
    Logistic,
    Policy,
    Rule,
    ast_size,
    guard_params,
    guard_size,
    iter_leaves,
    strip_params,
    transition_matrix,
)
from .enumerate import build_feature_pool, describe, enumerate_full, enumerate_neighborhood
from .examples import TransitionExamples, collect_examples
from .fit import fit_guard_params, loglik_and_grad

log = logging.getLogger(__name__)


class FitWarning(RuntimeWarning):
    """No optimizer restart reported convergence for some sketch."""


@dataclass
class SynthConfig:
    """Knobs for one synthesis call.

    ``negatives="ordered"`` trains rule ``j`` only on rows where it was
    actually evaluated under first-true semantics (stays and moves to later
    rules), which makes the per-rule scores add up to the policy
    log-likelihood.  ``"all"`` uses every other row from the same source.
    """

    lam: float = 1.0
    restarts: int = 4
    max_examples: Optional[int] = 2000
    depth: int = 2
    max_leaves: int = 3
    max_feature_depth: int = 2
    use_extractors: bool = True
    k_max: float = 100.0
    r_eps: float = 1e-3
    mutation_budget: Optional[int] = 256
    log_floor: float = -1e6
    mode: str = "neighborhood"
    negatives: str = "ordered"
    maxiter: int = 200
    threads: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.mode not in ("neighborhood", "full"):
            raise ValueError("mode must be 'neighborhood' or 'full'")
        if self.negatives not in ("ordered", "all"):
            raise ValueError("negatives must be 'ordered' or 'all'")


def policy_loglik(policy: Policy, ex: TransitionExamples, log_floor: float = -1e6) -> float:
    if len(ex) == 0:
        return 0.0
    P = transition_matrix(policy, ex.columns, len(ex))
    p = P[np.arange(len(ex)), ex.prev, ex.next]
    with np.errstate(divide="ignore"):
        lp = np.maximum(np.log(p), log_floor)
    return float(ex.weight @ lp)


def policy_log_posterior(policy: Policy, ex: TransitionExamples, lam: float, log_floor: float = -1e6) -> float:
    """Weighted transition log-likelihood minus ``lam`` times the AST size."""
    return policy_loglik(policy, ex, log_floor) - lam * ast_size(policy)


@dataclass
class Candidate:
    src: str
    dst: str
    guard: object
    provenance: str
    loglik: float
    score: float
    converged: bool = True


@dataclass
class SearchResult:
    policy: Policy
    score: float
    prev_score: float
    chosen: dict = field(default_factory=dict)
    candidates: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "score": self.score,
            "prev_score": self.prev_score,
            "candidates": [
                {
                    "transition": f"{c.src}->{c.dst}",
                    "guard": describe(c.guard),
                    "provenance": c.provenance,
                    "loglik": c.loglik,
                    "score": c.score,
                    "size": 0 if c.guard is None else 1 + guard_size(c.guard),
                }
                for c in sorted(self.candidates, key=lambda c: (c.src, c.dst, -c.score))
            ],
        }


def slot_order(policy: Policy) -> list:
    """Rule slots: the previous policy's order, then every other ordered pair."""
    out: dict = {}
    for r in policy.rules:
        out.setdefault((r.src, r.dst), None)
    acts = policy.domain.actions
    for a in acts:
        for b in acts:
            if a != b:
                out.setdefault((a, b), None)
    return list(out)


def _seed_of(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def _usable(values: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(values)) and np.ptp(values) > 0)


def search_policy(
    pi_prev: Policy, ex: TransitionExamples, cfg: SynthConfig, rng=0, pool=None
) -> SearchResult:
    """Per-transition sketch fitting followed by coupled ranking."""
    dom = pi_prev.domain
    seed = _seed_of(rng)
    if pool is None:
        pool = build_feature_pool(dom, cfg.max_feature_depth, cfg.use_extractors)
    slots = slot_order(pi_prev)
    prev_guards = {}
    for r in pi_prev.rules:
        prev_guards.setdefault((r.src, r.dst), r.guard)
    full = enumerate_full(pool, cfg.depth) if cfg.mode == "full" else None

    tasks, slot_info = [], {}
    for si, (a, b) in enumerate(slots):
        ia, ib = dom.action_index(a), dom.action_index(b)
        src_rows = ex.prev == ia
        if not np.any(src_rows):
            slot_info[(a, b)] = None  # no evidence: keep the previous guard
            continue
        later = [dom.action_index(d) for (s, d) in slots[si + 1 :] if s == a]
        pos = src_rows & (ex.next == ib)
        if cfg.negatives == "ordered":
            neg = src_rows & (np.isin(ex.next, later) | (ex.next == ia))
        else:
            neg = src_rows & (ex.next != ib)
        rows = pos | neg
        w_pos = float(ex.weight[pos].sum())
        slot_info[(a, b)] = (rows, pos[rows], ex.weight[rows], w_pos)
        if w_pos == 0:
            continue  # dropping the rule is optimal: zero loss, zero size
        prev = prev_guards.get((a, b))
        if cfg.mode == "full":
            structures = [(g, "full") for g in full] + [(Flip(ConstProb()), "reset")]
            if prev is not None:
                structures.insert(0, (strip_params(prev), "identity"))
        else:
            structures = enumerate_neighborhood(
                prev, pool, dom, max_leaves=cfg.max_leaves, budget=cfg.mutation_budget,
                rng=np.random.default_rng([seed, si, 0]),
            )
        seen = set()
        for gi, (g, tag) in enumerate(structures):
            if g in seen:
                continue
            seen.add(g)
            tasks.append((si, gi, a, b, g, tag, prev))

    sub_cache: dict = {}

    def feature_matrix(a, b, g):
        rows = slot_info[(a, b)][0]
        cols = []
        for leaf in iter_leaves(g):
            if isinstance(leaf, Logistic):
                key = (a, b, leaf.feature)
                if key not in sub_cache:
                    sub_cache[key] = ex.feature(leaf.feature)[rows]
                cols.append(sub_cache[key])
            else:
                cols.append(np.zeros(int(rows.sum())))
        return np.stack(cols, axis=1)

    def run(task):
        si, gi, a, b, g, tag, prev = task
        _, pos, w, _ = slot_info[(a, b)]
        F = feature_matrix(a, b, g)
        for col, leaf in zip(F.T, iter_leaves(g)):
            if isinstance(leaf, Logistic) and not _usable(col):
                return None
        warm = None
        if prev is not None and strip_params(prev) == g:
            warm = guard_params(prev)
        res = fit_guard_params(
            g, F, pos, w, restarts=cfg.restarts, k_max=cfg.k_max, r_eps=cfg.r_eps,
            maxiter=cfg.maxiter, rng=np.random.default_rng([seed, si, gi + 1]), warm=warm,
        )
        size = 1 + guard_size(res.guard)
        return Candidate(a, b, res.guard, tag, res.score, res.score - cfg.lam * size, res.converged)

    if cfg.threads > 1 and len(tasks) > 1:
        # fill the shared feature cache first so worker threads only read it
        for t in tasks:
            feature_matrix(t[2], t[3], t[4])
        with ThreadPoolExecutor(cfg.threads) as pool_exec:
            results = list(pool_exec.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    candidates = [c for c in results if c is not None]
    if any(not c.converged for c in candidates):
        n_bad = sum(not c.converged for c in candidates)
        warnings.warn(f"{n_bad} sketch fits did not converge on any restart", FitWarning, stacklevel=2)

    # best per slot; the exact previous guard and the empty rule always compete
    chosen = {}
    for a, b in slots:
        info = slot_info.get((a, b))
        prev = prev_guards.get((a, b))
        if info is None:
            chosen[(a, b)] = Candidate(a, b, prev, "no-evidence", 0.0, 0.0)
            continue
        rows, pos, w, w_pos = info
        opts = []
        if prev is not None:
            F = feature_matrix(a, b, prev)
            ll = loglik_and_grad(prev, guard_params(prev), F, pos, w)[0]
            opts.append(Candidate(a, b, prev, "previous", ll, ll - cfg.lam * (1 + guard_size(prev))))
        drop_ll = cfg.log_floor * w_pos
        opts.append(Candidate(a, b, None, "drop", drop_ll, drop_ll))
        opts += [c for c in candidates if (c.src, c.dst) == (a, b)]
        best = opts[0]
        for c in opts[1:]:
            if c.score > best.score:
                best = c
        chosen[(a, b)] = best

    def assemble(pick) -> Policy:
        return Policy(tuple(Rule(a, pick[(a, b)], b) for a, b in slots if pick[(a, b)] is not None), dom)

    assembled = assemble({k: c.guard for k, c in chosen.items()})
    policies = [pi_prev, assembled]
    for a, b in slots:
        pick = {k: prev_guards.get(k) for k in slots}
        pick[(a, b)] = chosen[(a, b)].guard
        policies.append(assemble(pick))

    prev_score = policy_log_posterior(pi_prev, ex, cfg.lam, cfg.log_floor)
    best_pi, best_score = pi_prev, prev_score
    for p in policies[1:]:
        s = policy_log_posterior(p, ex, cfg.lam, cfg.log_floor)
        if s > best_score:
            best_pi, best_score = p, s
    log.debug("synthesis: %d sketch fits, score %.3f -> %.3f", len(candidates), prev_score, best_score)
    return SearchResult(best_pi, best_score, prev_score, chosen, candidates)


def synthesize(
    pi_prev: Policy,
    trajectories: Sequence,
    sequences: Sequence,
    cfg: Optional[SynthConfig] = None,
    rng=0,
    detailed: bool = False,
):
    """Collect transition examples from sampled label sequences and search.

    Weights are divided by the number of sequences per demo, so scores are
    in nats per sampled sequence and ``lam`` does not depend on ``N``.
    """
    cfg = SynthConfig() if cfg is None else cfg
    if not sequences or any(len(np.atleast_2d(s)) == 0 for s in sequences):
        raise ValueError("need at least one sampled sequence per demo")
    seed = _seed_of(rng)
    n_samples = len(np.atleast_2d(sequences[0]))
    ex = collect_examples(pi_prev.domain, trajectories, sequences, cfg.max_examples, seed)
    ex = ex.scaled(1.0 / n_samples)
    res = search_policy(pi_prev, ex, cfg, seed)
    return res if detailed else res.policy
