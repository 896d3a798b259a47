"""Probability and sampling semantics of policies.

Every evaluator accepts a *state* mapping variable names to floats, or to
equal-length numpy arrays for vectorized evaluation over many states.
"""
from __future__ import annotations

import warnings
from typing import Mapping

import numpy as np
from scipy.special import expit

from .dims import Dimension, DimensionError
from .nodes import (
    And,
    Const,
    ConstProb,
    Domain,
    Feature,
    Flip,
    FuncApp,
    Guard,
    Logistic,
    Or,
    Policy,
    ProbExpr,
    Var,
    iter_features,
    iter_leaves,
)


class DSLError(ValueError):
    """Evaluation failure; ``subtree`` is the offending node."""

    def __init__(self, message, subtree=None):
        super().__init__(message)
        self.subtree = subtree


class NonFiniteFeatureWarning(RuntimeWarning):
    pass


def check_dimensions(f: Feature, domain: Domain) -> Dimension:
    """Return the unique dimension of ``f`` or raise ``DimensionError``."""
    if isinstance(f, Var):
        try:
            return domain.signature[f.name]
        except KeyError:
            raise DSLError(f"unknown variable {f.name!r}", f) from None
    if isinstance(f, Const):
        return f.dim
    spec = domain.functions.get(f.func)
    if spec is None:
        raise DSLError(f"unknown function {f.func!r}", f)
    if len(f.args) != spec.arity:
        raise DSLError(f"{f.func} takes {spec.arity} arguments, got {len(f.args)}", f)
    dims = [check_dimensions(a, domain) for a in f.args]
    try:
        return spec.dim_rule(*dims)
    except DimensionError as e:
        raise DimensionError(str(e), subtree=f, operands=e.operands) from None


def is_legal(f: Feature, domain: Domain) -> bool:
    try:
        check_dimensions(f, domain)
    except (DimensionError, DSLError):
        return False
    return True


def check_guard(g: Guard, domain: Domain) -> None:
    for leaf in iter_leaves(g):
        if isinstance(leaf, Logistic):
            check_dimensions(leaf.feature, domain)
        elif leaf.r is not None and not 0.0 <= leaf.r <= 1.0:
            raise DSLError(f"constant probability {leaf.r} outside [0, 1]", leaf)


def check_policy(policy: Policy) -> None:
    """Validate action labels and feature dimensions of every rule."""
    dom = policy.domain
    for rule in policy.rules:
        dom.action_index(rule.src)
        dom.action_index(rule.dst)
        check_guard(rule.guard, dom)


def eval_feature(f: Feature, state: Mapping, domain: Domain):
    if isinstance(f, Var):
        try:
            return state[f.name]
        except KeyError:
            raise DSLError(f"unknown variable {f.name!r}", f) from None
    if isinstance(f, Const):
        return f.value
    spec = domain.functions.get(f.func)
    if spec is None:
        raise DSLError(f"unknown function {f.func!r}", f)
    return spec.impl(*(eval_feature(a, state, domain) for a in f.args))


def logistic(f, x0: float, k: float):
    """``1 / (1 + exp(-k (f - x0)))`` with non-finite inputs saturated."""
    f = np.asarray(f, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        z = k * (f - x0)
    if not np.all(np.isfinite(f)):
        warnings.warn("non-finite feature value saturated", NonFiniteFeatureWarning, stacklevel=3)
        # nan has no sign and saturates to 0
        z = np.where(np.isnan(z), -np.inf, z)
    return expit(z)


def prob_expr_value(psi: ProbExpr, state: Mapping, domain: Domain, cache=None):
    if isinstance(psi, ConstProb):
        return psi.r
    fv = cache[psi.feature] if cache is not None else eval_feature(psi.feature, state, domain)
    return logistic(fv, psi.x0, psi.k)


def guard_probability(g: Guard, state: Mapping, domain: Domain, cache=None):
    """Probability that ``g`` holds, with leaves flipping independently."""
    if isinstance(g, Flip):
        return prob_expr_value(g.prob, state, domain, cache)
    p1 = guard_probability(g.left, state, domain, cache)
    p2 = guard_probability(g.right, state, domain, cache)
    if isinstance(g, And):
        return p1 * p2
    return p1 + p2 - p1 * p2


def transition_distribution(policy: Policy, a_prev: str, state: Mapping) -> dict:
    dom = policy.domain
    dom.action_index(a_prev)
    out = {a: 0.0 for a in dom.actions}
    remaining = 1.0
    for rule in policy.rules_from(a_prev):
        p = float(guard_probability(rule.guard, state, dom))
        out[rule.dst] += remaining * p
        remaining *= 1.0 - p
    out[a_prev] += remaining
    return out


def transition_matrix(policy: Policy, columns: Mapping, length: int | None = None) -> np.ndarray:
    """Transition probabilities ``P[t, prev, next]`` for every state in ``columns``.

    ``columns`` maps variable names to arrays of length T.
    """
    dom = policy.domain
    if length is None:
        length = len(next(iter(columns.values())))
    n = dom.n_actions
    P = np.zeros((length, n, n))
    cache = {}
    for i, a in enumerate(dom.actions):
        remaining = np.ones(length)
        for rule in policy.rules_from(a):
            for feat in _leaf_features(rule.guard):
                if feat not in cache:
                    cache[feat] = np.broadcast_to(
                        np.asarray(eval_feature(feat, columns, dom), dtype=float), (length,)
                    )
            p = np.broadcast_to(guard_probability(rule.guard, columns, dom, cache), (length,))
            P[:, i, dom.action_index(rule.dst)] += remaining * p
            remaining = remaining * (1.0 - p)
        P[:, i, i] += remaining
    return P


def _leaf_features(g: Guard):
    return [leaf.feature for leaf in iter_leaves(g) if isinstance(leaf, Logistic)]


def _sample_guard(g: Guard, state, domain, rng) -> bool:
    if isinstance(g, Flip):
        return rng.random() < float(prob_expr_value(g.prob, state, domain))
    left = _sample_guard(g.left, state, domain, rng)
    right = _sample_guard(g.right, state, domain, rng)
    return (left and right) if isinstance(g, And) else (left or right)


def sample_next_action(policy: Policy, a_prev: str, state: Mapping, rng: np.random.Generator) -> str:
    """Run the policy once: flip every coin of each rule in order, first success fires."""
    dom = policy.domain
    dom.action_index(a_prev)
    for rule in policy.rules_from(a_prev):
        if _sample_guard(rule.guard, state, dom, rng):
            return rule.dst
    return a_prev


def _feature_size(f: Feature) -> int:
    if isinstance(f, Const):
        return 2  # node + numeric value
    if isinstance(f, Var):
        return 1
    return 1 + sum(_feature_size(a) for a in f.args)


def guard_size(g: Guard) -> int:
    if isinstance(g, Flip):
        p = g.prob
        if isinstance(p, ConstProb):
            return 3  # flip, constprob, r
        return 2 + _feature_size(p.feature) + 2  # flip, lgs, feature, x0, k
    return 1 + guard_size(g.left) + guard_size(g.right)


def ast_size(policy: Policy) -> int:
    return sum(1 + guard_size(r.guard) for r in policy.rules)


def policy_features(policy: Policy) -> list:
    out = []
    for rule in policy.rules:
        for f in _leaf_features(rule.guard):
            out.extend(iter_features(f))
    return out
