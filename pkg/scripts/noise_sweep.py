"""Observation log-likelihood of every method as actuation noise grows.

    python3 scripts/noise_sweep.py --env mg --levels 0,0.5,1,2,4 --out runs/sweep_mg

Same computation as ``plunder eval --noise-sweep``; prints one line per level.
"""
import argparse
from pathlib import Path

from plunder.cli import ExperimentConfig, sweep_report
from plunder.evaluate import MetricsReport


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", default="mg")
    ap.add_argument("--levels", default="0,0.5,1,2,4")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    levels = [float(x) for x in args.levels.split(",")]
    cfg = ExperimentConfig(env=args.env, seed=args.seed, noise_sweep=levels, out=args.out)
    cfg.validate()
    report = sweep_report(cfg, MetricsReport())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.to_csv(sweep=True))

    methods = ["plunder", "oneshot", "greedy", "gt"]
    print("sigma_mult " + " ".join(f"{m:>9s}" for m in methods))
    for lvl in levels:
        vals = [report.get(m, "loglik", lvl) for m in methods]
        print(f"{lvl:10.2f} " + " ".join(f"{v:9.4f}" for v in vals))


if __name__ == "__main__":
    main()
