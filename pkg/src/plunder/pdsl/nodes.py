"""AST of the probabilistic policy language.

Numeric parameters set to ``None`` are holes; a guard with holes is a sketch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Optional, Union

import numpy as np

from .dims import ACCELERATION, DIMENSIONLESS, LENGTH, TIME, VELOCITY, Dimension, DimensionError


# ---------------------------------------------------------------------------
# features


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    value: float
    dim: Dimension = DIMENSIONLESS


@dataclass(frozen=True)
class FuncApp:
    func: str
    args: tuple


Feature = Union[Var, Const, FuncApp]


# ---------------------------------------------------------------------------
# probabilities and guards


@dataclass(frozen=True)
class ConstProb:
    r: Optional[float] = None


@dataclass(frozen=True)
class Logistic:
    feature: Feature
    x0: Optional[float] = None
    k: Optional[float] = None


ProbExpr = Union[ConstProb, Logistic]


@dataclass(frozen=True)
class Flip:
    prob: ProbExpr


@dataclass(frozen=True)
class And:
    left: "Guard"
    right: "Guard"


@dataclass(frozen=True)
class Or:
    left: "Guard"
    right: "Guard"


Guard = Union[Flip, And, Or]


@dataclass(frozen=True)
class Rule:
    src: str
    guard: Guard
    dst: str


# ---------------------------------------------------------------------------
# functions and domains


@dataclass(frozen=True)
class FunctionSpec:
    """A feature function: arity, dimension rule and numpy implementation."""

    name: str
    arity: int
    dim_rule: Callable[..., Dimension]
    impl: Callable[..., np.ndarray]
    infix: Optional[str] = None


def _same_dim(name):
    def rule(a: Dimension, b: Dimension) -> Dimension:
        if a != b:
            raise DimensionError(f"'{name}' between {a} and {b}", operands=(a, b))
        return a
    return rule


def _fixed_dims(name, expected, result):
    def rule(*dims: Dimension) -> Dimension:
        if tuple(dims) != tuple(expected):
            got = ", ".join(map(str, dims))
            want = ", ".join(map(str, expected))
            raise DimensionError(f"{name}({got}) expects ({want})", operands=dims)
        return result
    return rule


def dist_traveled(v, a):
    """Distance covered while braking from speed ``v`` at deceleration ``|a|``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.square(v) / (2.0 * np.abs(a))


def time_to_stop(v, a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.asarray(v) / np.abs(a)


def _div(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.true_divide(a, b)


BUILTINS: dict[str, FunctionSpec] = {
    "+": FunctionSpec("+", 2, _same_dim("+"), np.add, infix="+"),
    "-": FunctionSpec("-", 2, _same_dim("-"), np.subtract, infix="-"),
    "*": FunctionSpec("*", 2, lambda a, b: a * b, np.multiply, infix="*"),
    "/": FunctionSpec("/", 2, lambda a, b: a / b, _div, infix="/"),
}

DIST_TRV = FunctionSpec(
    "distTrv", 2, _fixed_dims("distTrv", (VELOCITY, ACCELERATION), LENGTH), dist_traveled
)
TIME_TO_STP = FunctionSpec(
    "timeToStp", 2, _fixed_dims("timeToStp", (VELOCITY, ACCELERATION), TIME), time_to_stop
)


@dataclass(frozen=True, eq=False)
class Domain:
    """Action set, state signature and function registry a policy lives in."""

    name: str
    actions: tuple
    signature: Mapping[str, Dimension]
    functions: Mapping[str, FunctionSpec] = field(default_factory=lambda: dict(BUILTINS))

    def __post_init__(self):
        if not self.actions:
            raise ValueError("action set must be nonempty")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("action names must be unique")

    def action_index(self, name: str) -> int:
        try:
            return self.actions.index(name)
        except ValueError:
            raise KeyError(f"unknown action {name!r}; expected one of {self.actions}") from None

    @property
    def n_actions(self) -> int:
        return len(self.actions)


def make_domain(name, actions, signature, extractors=()) -> Domain:
    funcs = dict(BUILTINS)
    for spec in extractors:
        funcs[spec.name] = spec
    return Domain(name, tuple(actions), dict(signature), funcs)


@dataclass(frozen=True)
class Policy:
    """Ordered transition rules; equality ignores the domain object."""

    rules: tuple
    domain: Domain = field(compare=False, repr=False)

    def rules_from(self, src: str) -> list:
        return [r for r in self.rules if r.src == src]

    def transitions(self) -> list:
        return [(r.src, r.dst) for r in self.rules]

    def with_rules(self, rules) -> Policy:
        return Policy(tuple(rules), self.domain)


# ---------------------------------------------------------------------------
# traversal helpers


def iter_leaves(g: Guard) -> Iterator[ProbExpr]:
    """Probability leaves of a guard in left-to-right order."""
    if isinstance(g, Flip):
        yield g.prob
    else:
        yield from iter_leaves(g.left)
        yield from iter_leaves(g.right)


def iter_features(f: Feature) -> Iterator[Feature]:
    yield f
    if isinstance(f, FuncApp):
        for a in f.args:
            yield from iter_features(a)


def guard_features(g: Guard) -> list:
    return [leaf.feature for leaf in iter_leaves(g) if isinstance(leaf, Logistic)]


def feature_depth(f: Feature) -> int:
    if isinstance(f, FuncApp):
        return 1 + max(feature_depth(a) for a in f.args)
    return 0


def has_holes(g: Guard) -> bool:
    for leaf in iter_leaves(g):
        if isinstance(leaf, ConstProb) and leaf.r is None:
            return True
        if isinstance(leaf, Logistic) and (leaf.x0 is None or leaf.k is None):
            return True
    return False


def strip_params(g: Guard) -> Guard:
    """Same structure with every numeric parameter turned into a hole."""
    if isinstance(g, Flip):
        p = g.prob
        return Flip(ConstProb() if isinstance(p, ConstProb) else Logistic(p.feature))
    return type(g)(strip_params(g.left), strip_params(g.right))


def guard_params(g: Guard) -> list:
    """Flat parameter list: ``r`` for constants, ``x0, k`` for logistics."""
    out = []
    for leaf in iter_leaves(g):
        if isinstance(leaf, ConstProb):
            out.append(leaf.r)
        else:
            out.extend([leaf.x0, leaf.k])
    return out


def fill_params(g: Guard, params) -> Guard:
    it = iter([float(p) for p in params])

    def go(node):
        if isinstance(node, Flip):
            p = node.prob
            if isinstance(p, ConstProb):
                return Flip(ConstProb(next(it)))
            return Flip(Logistic(p.feature, next(it), next(it)))
        return type(node)(go(node.left), go(node.right))

    out = go(g)
    if next(it, None) is not None:
        raise ValueError("too many parameters for guard")
    return out
