"""The EM loop: alternate label sampling (E) and policy synthesis (M)."""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .envs.base import ObservationModel
from .pdsl import Domain, Policy, Rule, ast_size, flp, serialize_policy
from .pfilter import map_lineage, run_filter, traceback_samples
from .synth import SynthConfig, synthesize

log = logging.getLogger(__name__)

# phase tags for seed derivation
PHASE_FILTER, PHASE_TRACE, PHASE_SYNTH = 0, 1, 2


def phase_rng(master: int, iteration: int, phase: int, *extra) -> np.random.Generator:
    """Independent stream for ``(master, iteration, phase, ...)``."""
    return np.random.default_rng(np.random.SeedSequence([int(master), int(iteration), int(phase), *map(int, extra)]))


def default_initial_policy(domain: Domain, r: float = 0.1) -> Policy:
    """One ``flp(r)`` rule per ordered pair of distinct actions, in action order."""
    rules = [Rule(a, flp(r), b) for a in domain.actions for b in domain.actions if a != b]
    return Policy(tuple(rules), domain)


def default_gamma(model: ObservationModel, sigma_act, margin: Optional[float] = None) -> float:
    """Convergence threshold on the per-step log marginal.

    The expected per-step log density of the true labels under actuation
    noise ``sigma_act`` is ``peak - 0.5 * sum((sigma_act / sigma_obs)^2)``;
    the threshold sits ``margin`` nats below that (``model.gamma_margin``
    by default).  The margin has to cover the demonstrator's own switching
    entropy, which is task specific.
    """
    margin = model.gamma_margin if margin is None else margin
    ratio = np.broadcast_to(np.asarray(sigma_act, dtype=float), (len(model.sigma),)) / np.asarray(model.sigma)
    return float(model.peak_log_density - 0.5 * np.sum(ratio**2) - margin)


@dataclass
class EmConfig:
    gamma: Optional[float] = None  # None: default_gamma of the demo noise level
    max_iters: int = 15
    particles: int = 2000
    samples: int = 50
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0
    keep_best: bool = True
    keep_best_tol: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.samples > self.particles:
            raise ValueError("samples must not exceed particles")
        if isinstance(self.synth, dict):
            self.synth = SynthConfig(**self.synth)


@dataclass
class IterRecord:
    iteration: int
    policy: str
    size: int
    loglik: float
    accuracy: Optional[float]
    seconds: float
    converged: bool = False
    selected: bool = False


@dataclass
class EmTrace:
    records: list = field(default_factory=list)
    gamma: float = -math.inf
    converged: bool = False
    selected: int = 0
    kept_best: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def logliks(self) -> list:
        return [r.loglik for r in self.records]

    @property
    def iterations(self) -> int:
        """Index of the last evaluated iterate (number of M-steps run)."""
        return self.records[-1].iteration if self.records else 0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


def run_filters(demos: Sequence, model, policy: Policy, n_particles: int, rngs, threads: int = 1) -> list:
    def one(args):
        traj, rng = args
        return run_filter(traj, model, policy, n_particles, rng)

    jobs = list(zip(demos, rngs))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, jobs))
    return [one(j) for j in jobs]


def likelihood_from(results: Sequence, demos: Sequence) -> float:
    return float(sum(r.log_marginal for r in results) / sum(len(d) for d in demos))


def likelihood(demos: Sequence, model, policy: Policy, n_particles: int, rng, threads: int = 1) -> float:
    """Mean per-step log marginal observation likelihood over all demos."""
    if isinstance(rng, np.random.Generator):
        rngs = [np.random.default_rng(rng.integers(2**63)) for _ in demos]
    else:
        rngs = [np.random.default_rng([int(rng), d]) for d in range(len(demos))]
    return likelihood_from(run_filters(demos, model, policy, n_particles, rngs, threads), demos)


def _accuracy(results, demos, domain) -> Optional[float]:
    if any(d.gt_actions is None for d in demos):
        return None
    hits = total = 0
    for fr, d in zip(results, demos):
        pred = map_lineage(fr)
        gt = np.array([domain.action_index(a) for a in d.gt_actions])
        hits += int(np.sum(pred == gt))
        total += len(gt)
    return hits / total


def plunder(demos: Sequence, model: ObservationModel, pi0: Policy, cfg: Optional[EmConfig] = None, *, gamma=None):
    """Run EM from ``pi0``; returns ``(policy, EmTrace)``.

    Iterate ``k`` evaluates ``pi_k`` and stops when its likelihood exceeds
    the threshold or ``k == max_iters``; otherwise labels are sampled under
    ``pi_k`` (reusing the same filter runs) and ``pi_{k+1}`` synthesized.
    With ``keep_best`` the best iterate is returned when the last one fell
    more than ``keep_best_tol`` nats below it.  Without an explicit
    threshold, ``default_gamma`` of the demo set's actuation noise is used
    (``demos`` may be a ``DemoSet``).
    """
    cfg = EmConfig() if cfg is None else cfg
    sigma_act = getattr(demos, "sigma_act", model.sigma)
    demos = list(demos)
    if gamma is None:
        gamma = cfg.gamma
    if gamma is None:
        gamma = default_gamma(model, sigma_act)
    trace = EmTrace(gamma=float(gamma))
    domain = pi0.domain
    policy = pi0
    iterates = []
    for k in range(cfg.max_iters + 1):
        t0 = time.perf_counter()
        rngs = [phase_rng(cfg.seed, k, PHASE_FILTER, d) for d in range(len(demos))]
        results = run_filters(demos, model, policy, cfg.particles, rngs, cfg.threads)
        ll = likelihood_from(results, demos)
        done = ll > gamma
        rec = IterRecord(k, serialize_policy(policy), ast_size(policy), ll, _accuracy(results, demos, domain), 0.0, done)
        iterates.append((ll, policy))
        trace.records.append(rec)
        log.info("iter %d: loglik %.4f (gamma %.4f) size %d", k, ll, gamma, rec.size)
        if done or k == cfg.max_iters:
            rec.seconds = time.perf_counter() - t0
            trace.converged = done
            break
        seqs = [
            traceback_samples(fr, cfg.samples, phase_rng(cfg.seed, k, PHASE_TRACE, d))
            for d, fr in enumerate(results)
        ]
        synth_seed = int(phase_rng(cfg.seed, k, PHASE_SYNTH).integers(2**63))
        policy = synthesize(policy, demos, seqs, cfg.synth, synth_seed)
        rec.seconds = time.perf_counter() - t0

    selected = len(iterates) - 1
    if cfg.keep_best:
        best = max(range(len(iterates)), key=lambda i: (iterates[i][0], -i))
        if iterates[best][0] > iterates[selected][0] + cfg.keep_best_tol:
            selected = best
            trace.kept_best = True
    trace.selected = selected
    trace.records[selected].selected = True
    return iterates[selected][1], trace
