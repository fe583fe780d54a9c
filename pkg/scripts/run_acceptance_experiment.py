"""Relative-performance experiment: hybrid vs the two single-modal models.

Simulates the default three-wall dataset, then runs the seeded five-run
protocol for each architecture and writes a JSON summary.

    python scripts/run_acceptance_experiment.py --out results.json
"""

import argparse
import json
import sys
import time

from ldedfusion.dataset import build_features
from ldedfusion.experiment import evaluate_arch
from ldedfusion.sim import simulate

ARCHS = ("hybrid", "vgg19", "mfcc-cnn")
ACCEPTANCE_SEED = 0
ACCEPTANCE_EPOCHS = 3


def run(seed=ACCEPTANCE_SEED, epochs=ACCEPTANCE_EPOCHS, runs=5, jobs=1, log=sys.stderr):
    t0 = time.perf_counter()
    walls = simulate(seed=seed)
    features, _ = build_features(walls)
    del walls
    print(f"dataset: {len(features)} samples ({time.perf_counter() - t0:.0f} s)", file=log, flush=True)
    out = {"seed": seed, "epochs": epochs, "runs": runs, "n_samples": len(features), "models": {}}
    for arch in ARCHS:
        t = time.perf_counter()
        stats = evaluate_arch(features, arch, runs, seed, epochs, jobs=jobs)
        out["models"][arch] = {"accuracies": stats.accuracies, "mean": stats.mean, "std": stats.std,
                               "seconds": time.perf_counter() - t}
        print(f"{arch:9s} mean {stats.mean:.4f} std {stats.std:.4f} runs {[round(a, 4) for a in stats.accuracies]}"
              f" ({time.perf_counter() - t:.0f} s)", file=log, flush=True)
    out["seconds"] = time.perf_counter() - t0
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=ACCEPTANCE_SEED)
    ap.add_argument("--epochs", type=int, default=ACCEPTANCE_EPOCHS)
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None)
    a = ap.parse_args()
    res = run(a.seed, a.epochs, a.runs, a.jobs)
    text = json.dumps(res, indent=2)
    if a.out:
        with open(a.out, "w") as f:
            f.write(text + "\n")
    print(text)


if __name__ == "__main__":
    main()
