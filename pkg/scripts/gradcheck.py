"""Finite-difference check of the full-size model on a few synthetic debates.

    python scripts/gradcheck.py --debates 5 --per-tensor 150
"""

import argparse

import numpy as np

from argpersuasion.model import DualStreamModel, debate_to_sequences
from argpersuasion.neural import finite_diff_check
from argpersuasion.synthgen import PlantConfig, generate_corpus


def pick_indices(model, seqs, label, rng, per_tensor):
    # entries with non-zero gradient dominate; a few arbitrary ones cover the zeros
    _, g = model.loss_and_grad(seqs, label)
    picks = []
    for sl in model.ps.slices.values():
        idx = np.arange(sl.start, sl.stop)
        live = idx[g[idx] != 0]
        if len(live):
            picks.append(rng.choice(live, size=min(per_tensor, len(live)), replace=False))
        picks.append(rng.choice(idx, size=min(5, len(idx)), replace=False))
    return np.unique(np.concatenate(picks))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--debates", type=int, default=5)
    ap.add_argument("--per-tensor", type=int, default=150)
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--order", type=int, choices=(2, 4), default=4)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    for i, d in enumerate(generate_corpus(PlantConfig(n_debates=args.debates, seed=args.seed))):
        model = DualStreamModel(seed=i)
        model.ps["combine_logit"][0] = rng.normal()
        seqs = debate_to_sequences(d)
        idx = pick_indices(model, seqs, d.label(), rng, args.per_tensor)
        err = finite_diff_check(model, seqs, d.label(), indices=idx, order=args.order)
        print(f"{d.id}: {len(idx)} entries, max relative error {err:.2e}")


if __name__ == "__main__":
    main()
