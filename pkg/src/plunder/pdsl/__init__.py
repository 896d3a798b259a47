"""Probabilistic policy language: AST, semantics, dimensions and text format."""
from .dims import (
    ACCELERATION,
    DIMENSIONLESS,
    LENGTH,
    TIME,
    VELOCITY,
    Dimension,
    DimensionError,
    parse_unit,
)
from .nodes import (
    BUILTINS,
    DIST_TRV,
    TIME_TO_STP,
    And,
    Const,
    ConstProb,
    Domain,
    Flip,
    FuncApp,
    FunctionSpec,
    Logistic,
    Or,
    Policy,
    Rule,
    Var,
    feature_depth,
    fill_params,
    guard_params,
    has_holes,
    iter_features,
    iter_leaves,
    make_domain,
    strip_params,
)
from .semantics import (
    DSLError,
    NonFiniteFeatureWarning,
    ast_size,
    check_dimensions,
    check_guard,
    check_policy,
    eval_feature,
    guard_probability,
    guard_size,
    policy_features,
    is_legal,
    logistic,
    prob_expr_value,
    sample_next_action,
    transition_distribution,
    transition_matrix,
)
from .text import (
    PolicySyntaxError,
    format_feature,
    format_guard,
    parse_feature,
    parse_guard,
    parse_policy,
    serialize_policy,
)


def minus(a, b):
    return FuncApp("-", (a, b))


def lgs(feature, x0=None, k=None):
    return Flip(Logistic(feature, x0, k))


def flp(r=None):
    return Flip(ConstProb(r))
