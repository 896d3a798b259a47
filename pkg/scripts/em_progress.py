"""Per-iteration likelihood, accuracy and policy size of one EM run.

    python3 scripts/em_progress.py --env ss --seed 0 --gamma inf --max-iters 8

With ``--gamma inf`` the loop runs all iterations, which shows how the
policy keeps changing after it would normally have stopped.
"""
import argparse
import math

from plunder.cli import ExperimentConfig, make_demos
from plunder.em import default_initial_policy, plunder
from plunder.evaluate import action_accuracy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", default="ss")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gamma", type=float, default=None)
    ap.add_argument("--max-iters", type=int, default=8)
    ap.add_argument("--sigma-mult", type=float, default=1.0)
    ap.add_argument("--trace", default=None, help="optional path for the JSON-lines trace")
    args = ap.parse_args()

    cfg = ExperimentConfig(env=args.env, seed=args.seed, gamma=args.gamma, max_iters=args.max_iters,
                           sigma_mult=args.sigma_mult)
    cfg.validate()
    env, model, train, test = make_demos(cfg)
    pol, trace = plunder(train, model, default_initial_policy(env.domain), cfg.em_config())
    print(f"gamma {trace.gamma:.4f}" if math.isfinite(trace.gamma) else f"gamma {trace.gamma}")
    print(f"{'iter':>4s} {'loglik':>9s} {'train acc':>9s} {'size':>5s} {'secs':>6s}")
    for r in trace.records:
        mark = " *" if r.selected else ""
        print(f"{r.iteration:4d} {r.loglik:9.4f} {r.accuracy:9.4f} {r.size:5d} {r.seconds:6.1f}{mark}")
    print(f"test accuracy {action_accuracy(pol, test.demos, model, cfg.particles, args.seed):.4f}")
    print(r.policy)
    if args.trace:
        trace.save(args.trace)


if __name__ == "__main__":
    main()
