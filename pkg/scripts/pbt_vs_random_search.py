"""Compare PBT with random search on the quadratic surrogate under an equal iteration budget."""

import argparse

from intraday_rl.experiments import pbt_vs_random_search


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--population", type=int, default=8)
    ap.add_argument("--eval-interval", type=int, default=5)
    ap.add_argument("--budget", type=int, default=40)
    args = ap.parse_args()

    wins = 0
    for seed in range(args.trials):
        pbt, rs = pbt_vs_random_search(seed, args.population, args.eval_interval, args.budget)
        won = pbt.best.score >= rs.best.score
        wins += won
        print(f"trial {seed:2d}: pbt {pbt.best.score:.3e}  random {rs.best.score:.3e}  {'pbt' if won else 'random'}")
    print(f"PBT at least as good in {wins}/{args.trials} trials")


if __name__ == "__main__":
    main()
