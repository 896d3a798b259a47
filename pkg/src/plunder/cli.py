"""Command-line entry point: ``plunder {gen-demos,train,eval}``.

One experiment is one output directory with fixed file names.  Settings
come from an optional JSON config file and are overridden by flags; the
resolved settings are written to ``config.json`` next to the outputs.

Exit codes: 0 success, 2 bad configuration, 3 EM hit ``max_iters``
without converging, 4 any other runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import __version__
from .em import EmConfig, default_initial_policy, plunder
from .envs import ENVS, DemoSet, generate_demos, get_env, split_seeds
from .evaluate import MetricsReport, evaluate_policy, run_greedy_baseline, run_oneshot_baseline
from .pdsl import parse_policy, serialize_policy
from .synth import SynthConfig

log = logging.getLogger("plunder")

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_RUNTIME = 0, 2, 3, 4

TRAIN_FILE = "demos_train.json"
TEST_FILE = "demos_test.json"
TRACE_FILE = "trace.jsonl"
CONFIG_FILE = "config.json"
BASELINES = ("greedy", "oneshot")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: str = "ss"
    seed: Optional[int] = None
    train: int = 10
    test: int = 10
    horizon: Optional[int] = None
    sigma_mult: float = 1.0
    gamma: Optional[float] = None
    lam: float = SynthConfig.lam
    particles: int = 2000
    samples: int = 50
    max_iters: int = 15
    baseline: Optional[str] = None
    threads: int = 1
    trials: int = 100
    noise_sweep: Optional[list] = None
    policies: dict = field(default_factory=dict)
    # extra SynthConfig fields, e.g. {"restarts": 2}
    synth: dict = field(default_factory=dict)
    out: str = "runs/default"

    def validate(self) -> None:
        if self.env not in ENVS:
            raise ConfigError(f"unknown env {self.env!r}; choose from {', '.join(ENVS)}")
        if self.seed is None:
            raise ConfigError("a seed is required (--seed N or \"seed\" in the config file)")
        for name in ("train", "test", "particles", "samples", "max_iters", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.trials < 0:
            raise ConfigError("trials must be >= 0")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.sigma_mult < 0 or not math.isfinite(self.sigma_mult):
            raise ConfigError("sigma_mult must be a finite non-negative number")
        if self.samples > self.particles:
            raise ConfigError("samples must not exceed particles")
        if self.baseline is not None and self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {', '.join(BASELINES)}")
        if self.noise_sweep is not None and any(m < 0 for m in self.noise_sweep):
            raise ConfigError("noise multipliers must be non-negative")
        try:
            self.em_config()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad synthesis settings: {e}") from None

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def em_config(self) -> EmConfig:
        synth = SynthConfig(**{"lam": self.lam, "threads": self.threads, **self.synth})
        return EmConfig(
            gamma=self.gamma, max_iters=self.max_iters, particles=self.particles,
            samples=self.samples, synth=synth, seed=self.seed, threads=self.threads,
        )


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    # accept "lambda" as an alias, matching the flag name
    if "lambda" in doc:
        doc["lam"] = doc.pop("lambda")
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return doc


def resolve_config(args) -> ExperimentConfig:
    values = load_config(args.config) if args.config else {}
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    try:
        cfg = ExperimentConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    cfg.validate()
    return cfg


def write_config(cfg: ExperimentConfig, command: str) -> None:
    doc = {"command": command, "version": __version__, **asdict(cfg)}
    (cfg.out_dir / CONFIG_FILE).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# pipeline pieces


def make_demos(cfg: ExperimentConfig, sigma_mult: Optional[float] = None):
    env = get_env(cfg.env)
    mult = cfg.sigma_mult if sigma_mult is None else sigma_mult
    model = env.observation_model(mult)
    sigma = tuple(s * mult for s in env.default_sigma_act)
    horizon = cfg.horizon or env.horizon
    train_seed, test_seed = split_seeds(cfg.seed)
    gt = env.gt_policy()
    train = generate_demos(env, gt, model, cfg.train, horizon, sigma, seed=train_seed, split="train")
    test = generate_demos(env, gt, model, cfg.test, horizon, sigma, seed=test_seed, split="test")
    return env, model, train, test


def load_or_make_demos(cfg: ExperimentConfig):
    out = cfg.out_dir
    if (out / TRAIN_FILE).exists() and (out / TEST_FILE).exists():
        env = get_env(cfg.env)
        train, test = DemoSet.load(out / TRAIN_FILE), DemoSet.load(out / TEST_FILE)
        if train.env != env.name:
            raise ConfigError(f"{out / TRAIN_FILE} was generated for env {train.env!r}, not {env.name!r}")
        return env, env.observation_model(env.noise_mult(train.sigma_act)), train, test
    return make_demos(cfg)


def policy_file(baseline: Optional[str]) -> str:
    return "policy.txt" if baseline is None else f"policy_{baseline}.txt"


def train_policy(cfg: ExperimentConfig, model, train, baseline: Optional[str] = None):
    """Returns ``(policy, trace_or_None)``."""
    em_cfg = cfg.em_config()
    if baseline == "greedy":
        return run_greedy_baseline(train, model, em_cfg.synth, cfg.seed), None
    if baseline == "oneshot":
        return run_oneshot_baseline(train, model, em_cfg), None
    return plunder(train, model, default_initial_policy(model.domain), em_cfg)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_demos(cfg: ExperimentConfig) -> int:
    env, _, train, test = make_demos(cfg)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    train.save(cfg.out_dir / TRAIN_FILE)
    test.save(cfg.out_dir / TEST_FILE)
    write_config(cfg, "gen-demos")
    for ds in (train, test):
        for i, traj in enumerate(ds):
            print(f"{ds.split} demo {i}: gt success {bool(env.task_success(traj))}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig) -> int:
    _, model, train, test = load_or_make_demos(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if not (out / TRAIN_FILE).exists():
        train.save(out / TRAIN_FILE)
        test.save(out / TEST_FILE)
    policy, trace = train_policy(cfg, model, train, cfg.baseline)
    (out / policy_file(cfg.baseline)).write_text(serialize_policy(policy))
    write_config(cfg, "train")
    if trace is None:
        print(f"wrote {out / policy_file(cfg.baseline)}")
        return EXIT_OK
    trace.save(out / TRACE_FILE)
    last = trace.records[-1]
    print(f"iterations {trace.iterations}; loglik {last.loglik:.4f} (gamma {trace.gamma:.4f}); converged {trace.converged}")
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def _policies_to_eval(cfg: ExperimentConfig, env) -> dict:
    named = {}
    if cfg.policies:
        for name, path in cfg.policies.items():
            named[name] = parse_policy(Path(path).read_text(), env.domain)
    else:
        for method in ("plunder",) + BASELINES:
            path = cfg.out_dir / policy_file(None if method == "plunder" else method)
            if path.exists():
                named[method] = parse_policy(path.read_text(), env.domain)
    named.setdefault("gt", env.gt_policy())
    return named


def cmd_eval(cfg: ExperimentConfig) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report = MetricsReport()
    if cfg.noise_sweep is not None:
        sweep_report(cfg, report)
        sweep = True
    else:
        env, model, _, test = load_or_make_demos(cfg)
        for name, pol in _policies_to_eval(cfg, env).items():
            evaluate_policy(
                report, name, pol, env, model, test.demos, n_particles=cfg.particles,
                trials=cfg.trials, sigma_act=test.sigma_act, seed=cfg.seed,
            )
        sweep = False
    (cfg.out_dir / "metrics.csv").write_text(report.to_csv(sweep))
    (cfg.out_dir / "metrics.json").write_text(report.to_json())
    write_config(cfg, "eval")
    sys.stdout.write(report.to_csv(sweep))
    return EXIT_OK


def sweep_report(cfg: ExperimentConfig, report: MetricsReport) -> MetricsReport:
    """Train every method at each noise multiplier and score it on that level's test demos."""
    for mult in cfg.noise_sweep:
        env, model, train, test = make_demos(cfg, mult)
        methods = {"plunder": train_policy(cfg, model, train)[0]}
        for b in BASELINES:
            methods[b] = train_policy(cfg, model, train, b)[0]
        methods["gt"] = env.gt_policy()
        for name, pol in methods.items():
            evaluate_policy(
                report, name, pol, env, model, test.demos, n_particles=cfg.particles,
                trials=0, seed=cfg.seed, sigma_mult=float(mult), metrics=("accuracy", "loglik"),
            )
    return report


COMMANDS = {"gen-demos": cmd_gen_demos, "train": cmd_train, "eval": cmd_eval}


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _named_path(text: str):
    name, sep, path = text.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    return name, path


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings; flags override it")
    # env is validated later so the error can list the choices with exit code 2
    common.add_argument("--env")
    common.add_argument("--seed", type=int)
    common.add_argument("--train", type=int)
    common.add_argument("--test", type=int)
    common.add_argument("--horizon", type=int)
    common.add_argument("--sigma-mult", dest="sigma_mult", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--particles", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--max-iters", dest="max_iters", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out")

    parser = argparse.ArgumentParser(prog="plunder", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-demos", parents=[common], help="write train/test demonstration files")
    p_train = sub.add_parser("train", parents=[common], help="learn a policy from the train demos")
    p_train.add_argument("--baseline", choices=BASELINES)
    p_eval = sub.add_parser("eval", parents=[common], help="score policies on the test demos")
    p_eval.add_argument("--trials", type=int)
    p_eval.add_argument("--noise-sweep", dest="noise_sweep", type=_float_list)
    p_eval.add_argument("--policy", dest="policy_args", action="append", type=_named_path, metavar="NAME=PATH")
    return parser


def configure_logging() -> None:
    level = os.environ.get("PLUNDER_LOG", "WARNING").upper()
    if level.isdigit():
        level = int(level)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        configure_logging()
    except ValueError:
        print(f"error: bad PLUNDER_LOG level {os.environ.get('PLUNDER_LOG')!r}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "policy_args", None):
        args.policies = dict(args.policy_args)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
