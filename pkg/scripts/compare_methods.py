"""Train PLUNDER, OneShot and Greedy on several seeds and score them on paired test demos.

    python3 scripts/compare_methods.py --env ss --seeds 0,1,2 --out runs/compare_ss

Writes ``metrics.csv`` (one row per method/metric/seed), the learned
policies, and prints mean accuracy, log-likelihood and success rate.
"""
import argparse
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from plunder.cli import BASELINES, ExperimentConfig, make_demos, train_policy
from plunder.evaluate import MetricsReport, evaluate_policy
from plunder.pdsl import serialize_policy


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", default="ss")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--sigma-mult", type=float, default=1.0)
    ap.add_argument("--lambda", dest="lam", type=float, default=None)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--out", default="runs/compare")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = MetricsReport()
    for seed in (int(s) for s in args.seeds.split(",")):
        cfg = ExperimentConfig(env=args.env, seed=seed, sigma_mult=args.sigma_mult)
        if args.lam is not None:
            cfg.lam = args.lam
        cfg.validate()
        env, model, train, test = make_demos(cfg)
        policies = {}
        for method in ("plunder",) + BASELINES:
            t0 = time.perf_counter()
            pol, trace = train_policy(cfg, model, train, None if method == "plunder" else method)
            policies[method] = pol
            (out / f"policy_{method}_seed{seed}.txt").write_text(serialize_policy(pol))
            note = f", {trace.iterations} iterations, converged {trace.converged}" if trace else ""
            print(f"seed {seed} {method}: {time.perf_counter() - t0:.1f}s{note}", flush=True)
        policies["gt"] = env.gt_policy()
        for method, pol in policies.items():
            evaluate_policy(report, method, pol, env, model, test.demos, n_particles=cfg.particles,
                            trials=args.trials, sigma_act=test.sigma_act, seed=seed)
    (out / "metrics.csv").write_text(report.to_csv())

    table = defaultdict(list)
    for r in report.rows:
        table[r.method, r.metric].append(r.value)
    print(f"{'method':10s} {'accuracy':>9s} {'loglik':>9s} {'success':>9s}")
    for method in ("plunder",) + BASELINES + ("gt",):
        vals = [np.mean(table.get((method, m), [np.nan])) for m in ("accuracy", "loglik", "success_rate")]
        print(f"{method:10s} {vals[0]:9.4f} {vals[1]:9.4f} {vals[2]:9.3f}")


if __name__ == "__main__":
    main()
