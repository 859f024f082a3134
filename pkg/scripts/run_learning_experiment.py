"""Train PPO on the triangle-wave synthetic market and compare it with wind following and the hindsight bound.

Example::

    python scripts/run_learning_experiment.py --seeds 0 1 2 --out runs/learning
    python scripts/run_learning_experiment.py --seeds 0 --gamma 0 --gae-lambda 1
"""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from intraday_rl.experiments import LEARNING_HYPERPARAMS, run_learning_experiment
from intraday_rl.ppo import write_learning_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--gamma", type=float, help="override the discount factor")
    ap.add_argument("--gae-lambda", type=float, help="override the GAE lambda")
    ap.add_argument("--out", type=Path, help="directory for learning curves and summary.json")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    hp = LEARNING_HYPERPARAMS
    overrides = {k: v for k, v in (("gamma", args.gamma), ("gae_lambda", args.gae_lambda)) if v is not None}
    hp = dataclasses.replace(hp, **overrides)

    rows = []
    for seed in args.seeds:
        res = run_learning_experiment(seed, args.iterations, hp=hp)
        print(f"seed {seed}: agent {res.agent_mean:7.2f}  bl_wf {res.wind_follow_mean:7.2f}  "
              f"bound {res.upper_bound_mean:7.2f}  x{res.gain_over_wind_follow:.2f} over bl_wf  "
              f"{100 * res.share_of_upper_bound:.1f}% of bound  {res.seconds:.0f}s")
        rows.append({"seed": seed, "agent": res.agent_mean, "bl_wf": res.wind_follow_mean,
                     "bound": res.upper_bound_mean, "seconds": res.seconds})
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            write_learning_curve(res.curve, args.out / f"learning_curve_seed{seed}.csv")
    if args.out:
        summary = {"hyperparams": hp.to_dict(), "iterations": args.iterations, "runs": rows}
        (args.out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
