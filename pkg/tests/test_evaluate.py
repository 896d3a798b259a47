import math
from dataclasses import replace

import numpy as np
import pytest

from plunder.em import EmConfig, default_initial_policy, likelihood, plunder
from plunder.envs import Trajectory, generate_demos
from plunder.evaluate import (
    MetricsReport,
    action_accuracy,
    evaluate_policy,
    greedy_labels,
    label_accuracy,
    mean_obs_loglik,
    run_greedy_baseline,
    run_oneshot_baseline,
    success_rate,
)
from plunder.pdsl import Policy, Rule, flp, make_domain
from plunder.synth import SynthConfig


@pytest.fixture(scope="module")
def demos(ss):
    model = ss.observation_model()
    return generate_demos(ss, ss.gt_policy(), model, 3, ss.horizon, ss.default_sigma_act, seed=21)


def test_label_accuracy_trivial():
    dom = make_domain("two", ("L", "R"), {})
    traj = Trajectory({}, np.zeros((4, 1)), ["L", "R", "L", "R"])
    assert label_accuracy([np.array([0, 1, 0, 1])], [traj], dom) == 1.0
    assert label_accuracy([np.zeros(4, int)], [traj], dom) == 0.5


def test_accuracy_needs_labels(ss, demos):
    bare = Trajectory(demos.demos[0].columns, demos.demos[0].obs, None)
    with pytest.raises(ValueError):
        action_accuracy(ss.gt_policy(), [bare], ss.observation_model())


def test_gt_accuracy_high(ss, demos):
    acc = action_accuracy(ss.gt_policy(), demos.demos, ss.observation_model(), 1000, seed=0)
    assert acc >= 0.95
    marg = action_accuracy(ss.gt_policy(), demos.demos, ss.observation_model(), 1000, seed=0, method="marginal")
    assert marg >= 0.95


def test_mean_obs_loglik_is_em_likelihood(ss, demos):
    model = ss.observation_model()
    a = mean_obs_loglik(ss.gt_policy(), demos.demos, model, 300, seed=4)
    assert a == likelihood(demos.demos, model, ss.gt_policy(), 300, 4)


def test_initial_policy_scores_below_gt(ss, demos):
    model = ss.observation_model()
    gt = mean_obs_loglik(ss.gt_policy(), demos.demos, model, 1000, 0)
    pi0 = mean_obs_loglik(default_initial_policy(ss.domain), demos.demos, model, 1000, 0)
    assert pi0 < gt


def test_success_rate(ss):
    model = ss.observation_model()
    rate, se = success_rate(ss.gt_policy(), ss, model, 100, seed=0)
    assert rate >= 0.9
    assert se == pytest.approx(math.sqrt(rate * (1 - rate) / 100))
    stuck = Policy((Rule("ACC", flp(1.0), "DEC"),), ss.domain)
    assert success_rate(stuck, ss, model, 10, seed=0)[0] == 0.0
    with pytest.raises(ValueError):
        success_rate(stuck, ss, model, 0)


def test_success_rate_paired(ss):
    model = ss.observation_model()
    assert success_rate(ss.gt_policy(), ss, model, 20, seed=3) == success_rate(ss.gt_policy(), ss, model, 20, seed=3)


def test_greedy_labels(ss):
    model = ss.observation_model()
    s = ss.initial_state(np.random.default_rng(0))
    s.update(v=10.0, d_stop=20.0)
    cols = {k: [v] for k, v in s.items()}
    dec = model.mean("DEC", s)
    mid = (model.mean("ACC", s) + model.mean("CON", s)) / 2
    traj = Trajectory(cols, np.array([dec]), None)
    assert greedy_labels([traj], model)[0].tolist() == [2]
    traj = Trajectory(cols, np.array([mid]), None)
    assert greedy_labels([traj], model)[0].tolist() == [0]


def test_greedy_exact_without_noise(ss):
    model = ss.observation_model()
    ds = generate_demos(ss, ss.gt_policy(), model, 3, ss.horizon, 0.0, seed=8)
    for lab, traj in zip(greedy_labels(ds.demos, model), ds.demos):
        assert [ss.actions[i] for i in lab] == traj.gt_actions


def small_synth():
    return SynthConfig(lam=1.0, restarts=1, max_feature_depth=0, use_extractors=False)


def test_oneshot_equals_single_full_iteration(ss, demos):
    model = ss.observation_model()
    cfg = EmConfig(max_iters=1, particles=200, samples=10, seed=5, keep_best=False, synth=replace(small_synth(), mode="full"))
    one = run_oneshot_baseline(demos, model, cfg)
    pol, trace = plunder(demos, model, default_initial_policy(ss.domain), cfg, gamma=math.inf)
    assert pol == one
    assert len(trace) == 2
    assert run_oneshot_baseline(demos, model, cfg) == one


def test_greedy_baseline_deterministic(ss, demos):
    model = ss.observation_model()
    a = run_greedy_baseline(demos, model, small_synth(), seed=1)
    assert a == run_greedy_baseline(demos, model, small_synth(), seed=1)
    assert len(a.rules) >= 2


def test_metrics_report(ss, demos):
    rep = MetricsReport()
    model = ss.observation_model()
    evaluate_policy(rep, "gt", ss.gt_policy(), ss, model, demos.demos, n_particles=200, trials=10, seed=0)
    csv = rep.to_csv().splitlines()
    assert csv[0] == "method,task,metric,value,stderr,seed"
    assert len(csv) == 4
    keys = [(r.method, r.metric) for r in rep.rows]
    assert len(set(keys)) == len(keys)
    assert 0 <= rep.get("gt", "accuracy") <= 1
    with pytest.raises(ValueError):
        rep.add("x", "ss", "accuracy", 1.5, None, 0)
    with pytest.raises(ValueError):
        rep.add("x", "ss", "loglik", float("nan"), None, 0)
    with pytest.raises(KeyError):
        rep.get("x", "accuracy")
    assert '"method": "gt"' in rep.to_json()
    sweep = MetricsReport()
    sweep.add("gt", "ss", "loglik", -1.0, None, 0, 0.5)
    assert sweep.to_csv(sweep=True).splitlines()[1].endswith(",0.5")
