import json

import pytest

from plunder.cli import EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_OK, main
from plunder.envs import DemoSet, get_env
from plunder.pdsl import parse_policy

SMALL = ["--train", "2", "--test", "2", "--horizon", "60", "--particles", "200", "--samples", "10"]
TINY_SYNTH = {"synth": {"restarts": 1, "max_feature_depth": 0, "use_extractors": False}}


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_SYNTH))
    return path


def run(*args):
    return main([str(a) for a in args])


def test_gen_demos_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("gen-demos", "--env", "ss", "--seed", 7, "--out", a, *SMALL) == EXIT_OK
    assert run("gen-demos", "--env", "ss", "--seed", 7, "--out", b, *SMALL) == EXIT_OK
    for name in ("demos_train.json", "demos_test.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    out = capsys.readouterr().out
    assert "train demo 0: gt success" in out
    cfg = json.loads((a / "config.json").read_text())
    assert cfg["seed"] == 7 and cfg["command"] == "gen-demos"


def test_zero_noise_demos(tmp_path):
    assert run("gen-demos", "--env", "ss", "--seed", 1, "--sigma-mult", 0, "--out", tmp_path, *SMALL) == EXIT_OK
    ds = DemoSet.load(tmp_path / "demos_train.json")
    env = get_env("ss")
    model = env.observation_model()
    traj = ds.demos[0]
    for t in range(len(traj)):
        assert traj.obs[t].tolist() == model.mean(traj.gt_actions[t], traj.state(t)).tolist()


def test_loaded_demos_get_the_matching_model(tmp_path):
    from plunder.cli import ExperimentConfig, load_or_make_demos

    assert run("gen-demos", "--env", "mg", "--seed", 1, "--sigma-mult", 3, "--out", tmp_path, *SMALL) == EXIT_OK
    _, model, _, _ = load_or_make_demos(ExperimentConfig(env="mg", seed=1, out=str(tmp_path)))
    assert model.sigma == get_env("mg").observation_model(3.0).sigma


def test_config_errors(tmp_path, capsys):
    assert run("gen-demos", "--env", "bogus", "--seed", 1, "--out", tmp_path) == EXIT_CONFIG
    assert "ss, mg" in capsys.readouterr().err
    assert run("gen-demos", "--env", "ss", "--out", tmp_path) == EXIT_CONFIG
    assert run("gen-demos", "--env", "ss", "--seed", 1, "--train", 0, "--out", tmp_path) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text('{"nonsense": 1}')
    assert run("gen-demos", "--config", bad, "--out", tmp_path) == EXIT_CONFIG
    bad.write_text('{"seed": 1, "synth": {"mode": "beam"}}')
    assert run("gen-demos", "--config", bad, "--out", tmp_path) == EXIT_CONFIG
    assert run("train", "--baseline", "nope", "--seed", 1) == 2


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"env": "ss", "seed": 3, "train": 4, "test": 1, "horizon": 30}))
    out = tmp_path / "o"
    assert run("gen-demos", "--config", conf, "--train", 2, "--out", out) == EXIT_OK
    assert len(DemoSet.load(out / "demos_train.json")) == 2
    assert json.loads((out / "config.json").read_text())["train"] == 2


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = run("train", "--env", "ss", "--seed", 2, "--out", out, "--max-iters", 1, "--lambda", 1.0, *SMALL)
    return out, code


def test_train_writes_policy_and_trace(trained):
    out, code = trained
    assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
    pol = parse_policy((out / "policy.txt").read_text(), get_env("ss").domain)
    assert pol.rules
    lines = (out / "trace.jsonl").read_text().splitlines()
    assert 1 <= len(lines) <= 2
    converged = json.loads(lines[-1])["converged"]
    assert (code == EXIT_OK) == converged


def test_train_is_deterministic(trained, tmp_path):
    out, _ = trained
    run("train", "--env", "ss", "--seed", 2, "--out", tmp_path, "--max-iters", 1, "--lambda", 1.0, *SMALL)
    assert (tmp_path / "policy.txt").read_bytes() == (out / "policy.txt").read_bytes()


def test_not_converged_exit_code(tmp_path):
    code = run("train", "--env", "ss", "--seed", 2, "--out", tmp_path, "--max-iters", 1, "--gamma", 1e9, *SMALL)
    assert code == EXIT_NOT_CONVERGED


def test_baseline_dispatch(trained, tiny):
    out, _ = trained
    args = ("--env", "ss", "--seed", 2, "--out", out, "--config", tiny, *SMALL)
    assert run("train", "--baseline", "greedy", *args) == EXIT_OK
    assert parse_policy((out / "policy_greedy.txt").read_text(), get_env("ss").domain).rules


def test_eval_metrics(trained, capsys):
    out, _ = trained
    assert run("eval", "--env", "ss", "--seed", 2, "--out", out, "--trials", 5, *SMALL) == EXIT_OK
    rows = (out / "metrics.csv").read_text().splitlines()
    assert rows[0] == "method,task,metric,value,stderr,seed"
    keys = [tuple(r.split(",")[:3:2]) for r in rows[1:]]
    assert len(keys) == len(set(keys))
    methods = {k[0] for k in keys}
    assert {"plunder", "gt"} <= methods
    assert {k[1] for k in keys} == {"accuracy", "loglik", "success_rate"}
    metrics = json.loads((out / "metrics.json").read_text())
    gt_acc = [m["value"] for m in metrics if m["method"] == "gt" and m["metric"] == "accuracy"][0]
    assert gt_acc >= 0.95
    first = (out / "metrics.csv").read_bytes()
    run("eval", "--env", "ss", "--seed", 2, "--out", out, "--trials", 5, *SMALL)
    assert (out / "metrics.csv").read_bytes() == first


def test_eval_named_policy(trained, tmp_path):
    out, _ = trained
    code = run("eval", "--env", "ss", "--seed", 2, "--out", tmp_path, "--trials", 0,
               "--policy", f"mine={out / 'policy.txt'}", *SMALL)
    assert code == EXIT_OK
    methods = {r.split(",")[0] for r in (tmp_path / "metrics.csv").read_text().splitlines()[1:]}
    assert methods == {"mine", "gt"}


def test_eval_missing_policy_file_is_runtime_error(tmp_path):
    code = run("eval", "--env", "ss", "--seed", 2, "--out", tmp_path, "--policy", f"x={tmp_path / 'none.txt'}", *SMALL)
    assert code == 4


def test_noise_sweep_blocks(tmp_path, tiny):
    code = run("eval", "--env", "ss", "--seed", 1, "--out", tmp_path, "--noise-sweep", "0,1", "--config", tiny,
               "--max-iters", 1, "--train", 1, "--test", 1, "--horizon", 40, "--particles", 100, "--samples", 5)
    assert code == EXIT_OK
    rows = (tmp_path / "metrics.csv").read_text().splitlines()
    assert rows[0].endswith(",sigma_mult")
    levels = {r.split(",")[-1] for r in rows[1:]}
    assert levels == {"0.0", "1.0"}
    assert len(rows) - 1 == 2 * 4 * 2  # levels x methods x metrics
