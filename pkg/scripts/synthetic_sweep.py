"""Planted-signal sweep: 5-fold CV of every single-group ablation over several
seeds on a synthetic corpus, plus a null-signal control.

    python scripts/synthetic_sweep.py --seeds 0 1 2 3 4 --out sweep.json
    python scripts/synthetic_sweep.py --paper-optimizer --seeds 0   # lr 0.005, L2 0.01
"""

import argparse
import json
import time
from dataclasses import asdict, replace

from argpersuasion.evaluation import ablation_sweep, kfold_evaluate
from argpersuasion.io import atomic_write_json, provenance
from argpersuasion.model import TrainConfig
from argpersuasion.synthgen import PlantConfig, generate_corpus

VARIANTS = ("full", "no_text", "no_prop_ngrams", "no_link_ngrams", "no_graph")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--plant-seed", type=int, default=42)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS))
    ap.add_argument("--paper-optimizer", action="store_true",
                    help="use the large-corpus defaults instead of the small-corpus setting")
    ap.add_argument("--skip-null", action="store_true")
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    config = TrainConfig() if args.paper_optimizer else TrainConfig.small_corpus()
    plant = PlantConfig(n_debates=args.n, seed=args.plant_seed)
    corpus = generate_corpus(plant)
    t0 = time.perf_counter()
    sweep = ablation_sweep(corpus, args.seeds, args.folds, config, variants=args.variants)
    print(f"{'variant':<16}{'mean':>8}  per-seed")
    for v in args.variants:
        print(f"{v:<16}{sweep.mean(v):>8.4f}  " + " ".join(f"{a:.3f}" for a in sweep.per_seed[v]))
    result = {"plant": plant.to_json(), "sweep": sweep.summary(),
              "fold_epochs": {v: [r.fold_epochs for r in reps] for v, reps in sweep.reports.items()}}
    if not args.skip_null:
        null = generate_corpus(replace(plant, signal_strength=0.0))
        rep = kfold_evaluate(null, args.folds, replace(config, seed=args.seeds[0]))
        print(f"null signal: mean accuracy {rep.mean_accuracy:.4f} (majority {rep.majority_baseline:.3f})")
        result["null"] = rep.to_json()
    elapsed = time.perf_counter() - t0
    print(f"elapsed {elapsed:.1f}s")
    if args.out:
        atomic_write_json(args.out, {**result, **provenance(args.seeds[0], {"train": asdict(config)})})


if __name__ == "__main__":
    main()
