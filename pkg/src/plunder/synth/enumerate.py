"""Sketch enumeration: feature pool, syntactic neighbourhood, full enumeration.

Sketches are per transition: a guard structure whose numeric parameters
are holes.  A guard of ``None`` stands for "no rule for this transition".
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..pdsl import (
    And,
    ConstProb,
    Domain,
    Flip,
    FuncApp,
    Logistic,
    Or,
    Var,
    check_dimensions,
    check_guard,
    feature_depth,
    iter_leaves,
    strip_params,
)
from ..pdsl.dims import DimensionError
from ..pdsl.semantics import DSLError
from ..pdsl.text import format_guard


@dataclass(frozen=True)
class Sketch:
    src: str
    dst: str
    guard: object  # guard with holes, or None to drop the rule
    provenance: str

    @property
    def key(self):
        return (self.src, self.dst, self.guard)


def build_feature_pool(domain: Domain, max_depth: int = 2, use_extractors: bool = True) -> tuple:
    """Dimension-legal features in a fixed order.

    Depth 0: state variables.  Depth 1: differences of same-dimension
    variables (signature order) and extractor calls on variables.  Depth 2:
    an extractor call minus a variable of the same dimension.
    """
    names = list(domain.signature)
    dims = {n: domain.signature[n] for n in names}
    pool: dict = {Var(n): None for n in names}
    if max_depth >= 1:
        for a, b in itertools.combinations(names, 2):
            if dims[a] == dims[b]:
                pool[FuncApp("-", (Var(a), Var(b)))] = None
        calls = []
        if use_extractors:
            builtin = {"+", "-", "*", "/"}
            for spec in domain.functions.values():
                if spec.name in builtin:
                    continue
                for args in itertools.product(names, repeat=spec.arity):
                    f = FuncApp(spec.name, tuple(Var(a) for a in args))
                    try:
                        check_dimensions(f, domain)
                    except (DimensionError, DSLError):
                        continue
                    calls.append(f)
                    pool[f] = None
        if max_depth >= 2:
            for f in calls:
                d = check_dimensions(f, domain)
                for n in names:
                    if dims[n] == d:
                        pool[FuncApp("-", (f, Var(n)))] = None
    return tuple(f for f in pool if feature_depth(f) <= max_depth)


def threshold(f) -> Flip:
    return Flip(Logistic(f))


def enumerate_full(pool, depth: int = 2) -> list:
    """All guards with at most ``depth`` thresholds (depth <= 2), joined by And/Or.

    Unordered pairs of distinct features only, so ``n`` features give
    ``n + 2 * C(n, 2)`` guards at depth 2.  An empty pool yields ``flp(?)``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    pool = list(pool)
    if not pool:
        return [Flip(ConstProb())]
    out = [threshold(f) for f in pool]
    if depth >= 2:
        for f, g in itertools.combinations(pool, 2):
            out.append(And(threshold(f), threshold(g)))
            out.append(Or(threshold(f), threshold(g)))
    return out


# ---------------------------------------------------------------------------
# neighbourhood


def _subtrees(g, path=()):
    yield path, g
    if isinstance(g, (And, Or)):
        yield from _subtrees(g.left, path + (0,))
        yield from _subtrees(g.right, path + (1,))


def _replace(g, path, new):
    if not path:
        return new
    if path[0] == 0:
        return type(g)(_replace(g.left, path[1:], new), g.right)
    return type(g)(g.left, _replace(g.right, path[1:], new))


def _n_leaves(g) -> int:
    return sum(1 for _ in iter_leaves(g))


def mutate_add(g, pool, max_leaves: int) -> list:
    out = []
    for path, node in _subtrees(g):
        if isinstance(node, Flip) and isinstance(node.prob, ConstProb):
            out += [_replace(g, path, threshold(f)) for f in pool]
    if _n_leaves(g) < max_leaves:
        for path, node in _subtrees(g):
            own = node.prob.feature if isinstance(node, Flip) and isinstance(node.prob, Logistic) else None
            for f in pool:
                if f == own:
                    continue
                out.append(_replace(g, path, And(node, threshold(f))))
                out.append(_replace(g, path, Or(node, threshold(f))))
    return out


def mutate_remove(g) -> list:
    out = []
    for path, node in _subtrees(g):
        if isinstance(node, (And, Or)):
            out += [_replace(g, path, node.left), _replace(g, path, node.right)]
    if isinstance(g, Flip) and isinstance(g.prob, Logistic):
        out.append(Flip(ConstProb()))
    return out


def mutate_swap(g) -> list:
    out = []
    for path, node in _subtrees(g):
        if isinstance(node, And):
            out.append(_replace(g, path, Or(node.left, node.right)))
        elif isinstance(node, Or):
            out.append(_replace(g, path, And(node.left, node.right)))
    return out


def _leaf_feature_edits(g, choices) -> list:
    out = []
    for path, node in _subtrees(g):
        if isinstance(node, Flip) and isinstance(node.prob, Logistic):
            for h in choices(node.prob.feature):
                out.append(_replace(g, path, threshold(h)))
    return out


def mutate_wrap(g, pool) -> list:
    """Replace a feature ``f`` by a pool feature that applies a function to ``f``."""
    return _leaf_feature_edits(
        g, lambda f: [h for h in pool if isinstance(h, FuncApp) and f in h.args and h != f]
    )


def mutate_strip(g, pool) -> list:
    """Replace a function application by one of its arguments."""
    members = set(pool)
    return _leaf_feature_edits(
        g, lambda f: [a for a in f.args if a in members] if isinstance(f, FuncApp) else []
    )


def base_sketches(pool) -> list:
    return [Flip(ConstProb())] + [threshold(f) for f in pool]


def enumerate_neighborhood(
    guard,
    pool,
    domain: Domain,
    *,
    max_leaves: int = 3,
    budget: Optional[int] = 256,
    rng: Optional[np.random.Generator] = None,
) -> list:
    """``(structure, provenance)`` pairs reachable from ``guard`` by one edit, plus resets.

    ``guard`` may be ``None`` (no rule yet): only the reset set applies.
    Each mutation's output is truncated to ``budget`` by a seeded shuffle.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    pool = list(pool)
    groups = []
    if guard is not None:
        g = strip_params(guard)
        groups = [
            ("identity", [g]),
            ("add", mutate_add(g, pool, max_leaves)),
            ("remove", mutate_remove(g)),
            ("swap", mutate_swap(g)),
            ("wrap", mutate_wrap(g, pool)),
            ("strip", mutate_strip(g, pool)),
        ]
    groups.append(("reset", base_sketches(pool)))
    out: dict = {}
    for tag, items in groups:
        if budget is not None and len(items) > budget and tag != "identity":
            order = rng.permutation(len(items))[:budget]
            items = [items[i] for i in sorted(order)]
        for s in items:
            if s in out:
                continue
            try:
                check_guard(s, domain)
            except (DimensionError, DSLError):
                continue
            out[s] = tag
    return list(out.items())


def describe(g) -> str:
    return "<drop>" if g is None else format_guard(g)
