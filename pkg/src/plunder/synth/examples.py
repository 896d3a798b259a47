"""Transition examples harvested from sampled label sequences."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..pdsl import Domain, eval_feature


@dataclass
class TransitionExamples:
    """Weighted ``(state, prev -> next)`` rows, stored column-wise.

    Rows are unique per (demo, timestep, prev, next); ``weight`` holds the
    multiplicity across sampled sequences (possibly rescaled).
    """

    domain: Domain
    columns: dict
    prev: np.ndarray
    next: np.ndarray
    weight: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.prev)

    @property
    def total_weight(self) -> float:
        return float(self.weight.sum())

    def feature(self, f) -> np.ndarray:
        """Feature values on every row, cached by structure."""
        if f not in self._cache:
            with np.errstate(all="ignore"):
                val = eval_feature(f, self.columns, self.domain)
            self._cache[f] = np.broadcast_to(np.asarray(val, dtype=float), (len(self),))
        return self._cache[f]

    def subset(self, mask) -> TransitionExamples:
        cols = {k: v[mask] for k, v in self.columns.items()}
        return TransitionExamples(self.domain, cols, self.prev[mask], self.next[mask], self.weight[mask])

    def scaled(self, factor: float) -> TransitionExamples:
        return TransitionExamples(self.domain, self.columns, self.prev, self.next, self.weight * factor, self._cache)


def _as_index_array(seqs, domain: Domain) -> np.ndarray:
    arr = np.asarray(seqs)
    if arr.dtype.kind in "US" or arr.dtype == object:
        lut = {a: i for i, a in enumerate(domain.actions)}
        arr = np.vectorize(lambda a: lut[a], otypes=[np.int64])(arr)
    return np.atleast_2d(arr.astype(np.int64))


def collect_examples(
    domain: Domain,
    trajectories: Sequence,
    sequences: Sequence,
    cap: Optional[int] = 2000,
    seed: int = 0,
) -> TransitionExamples:
    """Harvest ``(s_t, a_{t-1} -> a_t)`` for ``t >= 1`` from every sampled sequence.

    ``sequences[d]`` holds the label samples for demo ``d``, shaped ``[N, T]``
    (action indices or names).  Identical rows merge into one weighted row.
    When more than ``cap`` distinct rows remain, a seeded uniform subsample
    is kept and weights are rescaled to preserve the total.
    """
    if len(trajectories) != len(sequences):
        raise ValueError("one set of label sequences per trajectory is required")
    A = domain.n_actions
    names = list(domain.signature)
    codes, offsets, offset = [], [], 0
    for traj, seqs in zip(trajectories, sequences):
        seqs = _as_index_array(seqs, domain)
        T = len(traj)
        if seqs.shape[1] != T:
            raise ValueError(f"label sequence length {seqs.shape[1]} != trajectory length {T}")
        if T > 1:
            t = np.arange(1, T)[None, :]
            codes.append((((offset + t) * A + seqs[:, :-1]) * A + seqs[:, 1:]).ravel())
        offsets.append(offset)
        offset += T
    stacked = {n: np.concatenate([np.asarray(tr.columns[n], dtype=float) for tr in trajectories]) for n in names}
    if codes:
        uniq, counts = np.unique(np.concatenate(codes), return_counts=True)
    else:
        uniq, counts = np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    weight = counts.astype(float)
    if cap is not None and len(uniq) > cap:
        total = weight.sum()
        keep = np.sort(np.random.default_rng(seed).choice(len(uniq), size=cap, replace=False))
        uniq, weight = uniq[keep], weight[keep]
        weight *= total / weight.sum()
    nxt = uniq % A
    prev = (uniq // A) % A
    row = uniq // (A * A)
    cols = {n: v[row] for n, v in stacked.items()}
    return TransitionExamples(domain, cols, prev.astype(np.int64), nxt.astype(np.int64), weight)
