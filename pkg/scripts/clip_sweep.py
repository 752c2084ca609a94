"""Sweep the gradient-clipping threshold on the full f1 attention run.

Prints final train/test MSE for each (clip, seed) pair; this is how the
default threshold was chosen.
"""

import argparse
import itertools

from polyformer.polynomials import benchmark_targets
from polyformer.training import TrainConfig, generate_data, init_attention_model, split, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clips", type=float, nargs="+", default=[1.0, 3.0, 10.0, 30.0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=600)
    args = ap.parse_args()
    f1, _ = benchmark_targets()
    print("clip,seed,train_mse,test_mse,convergence_epoch")
    for clip, seed in itertools.product(args.clips, args.seeds):
        ds = generate_data(f1, 10000, [100.0, 100.0], seed=seed)
        tr, te = split(ds, 9000, seed=seed)
        model = init_attention_model(2, 2, [100.0, 100.0], seed=seed)
        _, h = train(model, tr, te, TrainConfig(args.epochs, 5000, clip_norm=clip, seed=seed))
        s = h.summary()
        print(f"{clip},{seed},{s['train_mse_noisy']:.6g},{s['test_mse_clean']:.6g},{s['convergence_epoch']}", flush=True)


if __name__ == "__main__":
    main()
