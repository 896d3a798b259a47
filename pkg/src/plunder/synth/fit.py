"""Guard log-likelihood, its analytic gradient, and L-BFGS-B parameter fitting.

Every node carries ``(log p, log(1 - p))`` so that neither quantity is
ever formed by subtracting from one; gradients come from a reverse pass
over the same recursion:

* leaf ``sigmoid(z)``: ``d log p / dz = 1 - p`` and ``d log(1-p) / dz = -p``
* ``And``: ``p = p1 p2`` and ``1 - p = q1 + p1 q2``
* ``Or``:  ``1 - p = q1 q2`` and ``p = p1 + q1 p2``
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from ..pdsl import And, ConstProb, Flip, Logistic, Or, fill_params, guard_params, iter_leaves


def _values(g, params, F, cursor, tape):
    """Forward pass: ``(lp, lq)`` for node ``g``; records what the backward pass needs."""
    if isinstance(g, Flip):
        j, leaf = cursor
        if isinstance(g.prob, ConstProb):
            cursor[0] += 1
            cursor[1] += 1
            r = params[j]
            n = F.shape[0]
            lp, lq = np.full(n, np.log(r)), np.full(n, np.log1p(-r))
            tape[id(g), j, leaf] = ("r", r)
            return lp, lq
        cursor[0] += 2
        cursor[1] += 1
        x0, k = params[j], params[j + 1]
        diff = F[:, leaf] - x0
        z = k * diff
        # log sigmoid(+-z) from one softplus evaluation
        sp = np.log1p(np.exp(-np.abs(z)))
        lp = np.minimum(z, 0.0) - sp
        lq = np.minimum(-z, 0.0) - sp
        tape[id(g), j, leaf] = ("z", diff, np.exp(lp), np.exp(lq))
        return lp, lq
    key = (id(g), cursor[0], cursor[1])
    lpa, lqa = _values(g.left, params, F, cursor, tape)
    lpb, lqb = _values(g.right, params, F, cursor, tape)
    if isinstance(g, And):
        lp = lpa + lpb
        other = lpa + lqb
        lq = np.logaddexp(lqa, other)
        tape[key] = (np.exp(lqa - lq), np.exp(other - lq))
    else:
        lq = lqa + lqb
        other = lqa + lpb
        lp = np.logaddexp(lpa, other)
        tape[key] = (np.exp(lpa - lp), np.exp(other - lp))
    return lp, lq


def _adjoint(g, params, cursor, tape, adj_lp, adj_lq, grad):
    """Backward pass: push ``d objective / d (lp, lq)`` down to the parameters."""
    if isinstance(g, Flip):
        j, leaf = cursor
        cursor[1] += 1
        rec = tape[id(g), j, leaf]
        if rec[0] == "r":
            cursor[0] += 1
            r = rec[1]
            grad[j] += adj_lp.sum() / r - adj_lq.sum() / (1.0 - r)
            return
        cursor[0] += 2
        _, diff, p, q = rec
        # d lp / dz = q and d lq / dz = -p
        adj_z = adj_lp * q - adj_lq * p
        grad[j] += -params[j + 1] * adj_z.sum()
        grad[j + 1] += adj_z @ diff
        return
    wa, wb = tape[id(g), cursor[0], cursor[1]]
    if isinstance(g, And):
        # lp = lpa + lpb ; lq = log(e^lqa + e^(lpa + lqb))
        _adjoint(g.left, params, cursor, tape, adj_lp + adj_lq * wb, adj_lq * wa, grad)
        _adjoint(g.right, params, cursor, tape, adj_lp, adj_lq * wb, grad)
    else:
        # lq = lqa + lqb ; lp = log(e^lpa + e^(lqa + lpb))
        _adjoint(g.left, params, cursor, tape, adj_lp * wa, adj_lq + adj_lp * wb, grad)
        _adjoint(g.right, params, cursor, tape, adj_lp * wb, adj_lq, grad)


def guard_log_probs(guard, params, F):
    """``(log p, log(1-p))`` of the guard on each row of ``F``.

    ``F[:, i]`` holds the feature values of the ``i``-th leaf (ignored for
    constant-probability leaves); ``params`` follows ``guard_params`` order.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    return _values(guard, np.asarray(params, dtype=float), F, [0, 0], {})


def loglik_and_grad(guard, params, F, positive, weight=None):
    """Weighted ``sum_pos log p + sum_neg log(1 - p)`` and its gradient."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    params = np.asarray(params, dtype=float)
    tape: dict = {}
    lp, lq = _values(guard, params, F, [0, 0], tape)
    positive = np.asarray(positive, dtype=bool)
    w = np.ones(len(lp)) if weight is None else np.asarray(weight, dtype=float)
    w_pos = np.where(positive, w, 0.0)
    w_neg = w - w_pos
    value = float(w_pos @ lp + w_neg @ lq)
    grad = np.zeros(len(params))
    _adjoint(guard, params, [0, 0], tape, w_pos, w_neg, grad)
    return value, grad


def guard_loglik(guard, params, positives, negatives) -> float:
    F = np.vstack([np.atleast_2d(positives), np.atleast_2d(negatives)])
    pos = np.r_[np.ones(len(np.atleast_2d(positives)), bool), np.zeros(len(np.atleast_2d(negatives)), bool)]
    return loglik_and_grad(guard, params, F, pos)[0]


def grad_guard_loglik(guard, params, positives, negatives) -> np.ndarray:
    """Analytic gradient of the guard log-likelihood.

    ``positives`` and ``negatives`` are ``[n, n_leaves]`` arrays of leaf
    feature values for examples where the guard should hold / should not.
    """
    pos_rows = np.atleast_2d(np.asarray(positives, dtype=float))
    neg_rows = np.atleast_2d(np.asarray(negatives, dtype=float))
    F = np.vstack([pos_rows, neg_rows])
    pos = np.r_[np.ones(len(pos_rows), bool), np.zeros(len(neg_rows), bool)]
    return loglik_and_grad(guard, params, F, pos)[1]


@dataclass
class FitResult:
    guard: object
    score: float
    converged: bool
    n_evals: int = 0


def _leaf_kinds(guard) -> list:
    return [isinstance(leaf, Logistic) for leaf in iter_leaves(guard)]


def _standardize(F, w):
    mu = (w @ F) / w.sum()
    sd = np.sqrt((w @ (F - mu) ** 2) / w.sum())
    return mu, np.where(sd > 0, sd, 1.0)


def fit_guard_params(
    guard,
    F,
    positive,
    weight=None,
    *,
    restarts: int = 4,
    k_max: float = 100.0,
    r_eps: float = 1e-3,
    maxiter: int = 200,
    ftol: float = 1e-8,
    rng: Optional[np.random.Generator] = None,
    warm=None,
) -> FitResult:
    """Maximize the guard log-likelihood from ``restarts`` random starts.

    Logistic leaves are optimized in standardized coordinates
    ``x0 = mu + sd * u``, ``k = c / sd`` with ``|c| <= k_max``; constant
    probabilities are bounded to ``[r_eps, 1 - r_eps]``.  ``warm`` (natural
    parameters of the same structure) is tried as an extra start.
    """
    rng = np.random.default_rng() if rng is None else rng
    F = np.atleast_2d(np.asarray(F, dtype=float))
    n = F.shape[0]
    if n == 0:
        raise ValueError("need at least one example")
    positive = np.asarray(positive, dtype=bool)
    w = np.ones(n) if weight is None else np.asarray(weight, dtype=float)
    total = w.sum()
    kinds = _leaf_kinds(guard)
    if F.shape[1] < len(kinds):
        F = np.hstack([F, np.zeros((n, len(kinds) - F.shape[1]))])
    mu, sd = _standardize(F, w)
    G = (F - mu) / sd

    bounds = []
    for i, is_lgs in enumerate(kinds):
        if is_lgs:
            col = G[:, i]
            bounds += [(float(col.min()) - 1.0, float(col.max()) + 1.0), (-k_max, k_max)]
        else:
            bounds.append((r_eps, 1.0 - r_eps))

    def to_natural(theta):
        out, j = [], 0
        for i, is_lgs in enumerate(kinds):
            if is_lgs:
                out += [mu[i] + sd[i] * theta[j], theta[j + 1] / sd[i]]
                j += 2
            else:
                out.append(theta[j])
                j += 1
        return out

    def from_natural(nat):
        out, j = [], 0
        for i, is_lgs in enumerate(kinds):
            if is_lgs:
                out += [(nat[j] - mu[i]) / sd[i], nat[j + 1] * sd[i]]
                j += 2
            else:
                out.append(nat[j])
                j += 1
        return np.clip(out, [b[0] for b in bounds], [b[1] for b in bounds])

    def objective(theta):
        ll, g = loglik_and_grad(guard, theta, G, positive, w)
        return -ll / total, -g / total

    starts = []
    if warm is not None:
        starts.append(from_natural(np.asarray(warm, dtype=float)))
    for _ in range(restarts):
        theta = []
        for i, is_lgs in enumerate(kinds):
            if is_lgs:
                lo, hi = np.quantile(G[:, i], [0.05, 0.95])
                theta += [rng.uniform(lo, hi), rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 4.0)]
            else:
                theta.append(rng.uniform(0.05, 0.95))
        starts.append(np.asarray(theta))

    best, best_val, converged, evals = None, np.inf, False, 0
    for x0 in starts:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter, "ftol": ftol})
        evals += res.nfev
        converged = converged or bool(res.success)
        if np.isfinite(res.fun) and res.fun < best_val:
            best, best_val = res.x, float(res.fun)
    if best is None:
        best = starts[0]
        best_val = objective(best)[0]
    return FitResult(fill_params(guard, to_natural(best)), -best_val * total, converged, evals)
