"""Shared-orientation planning with gain selection over six bowls and nine starts."""
import argparse
import json
import time

from laserplan.sim import default_spec, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/test3")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    spec = default_spec("test3", seed=args.seed, threads=args.threads)
    t = time.perf_counter()
    report = run_experiment(spec)
    report.write(args.out)
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    print(f"wrote {args.out} in {time.perf_counter() - t:.1f}s")


if __name__ == "__main__":
    main()
