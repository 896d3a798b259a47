"""Policy synthesis: example harvesting, sketch enumeration, parameter fitting, ranking."""
from .enumerate import (
    Sketch,
    base_sketches,
    build_feature_pool,
    enumerate_full,
    enumerate_neighborhood,
    mutate_add,
    mutate_remove,
    mutate_strip,
    mutate_swap,
    mutate_wrap,
)
from .examples import TransitionExamples, collect_examples
from .fit import FitResult, fit_guard_params, grad_guard_loglik, guard_log_probs, guard_loglik, loglik_and_grad
from .search import (
    FitWarning,
    SearchResult,
    SynthConfig,
    policy_log_posterior,
    policy_loglik,
    search_policy,
    slot_order,
    synthesize,
)
