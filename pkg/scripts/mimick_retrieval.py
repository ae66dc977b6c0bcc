"""Pre-train on random unit targets and report nearest-neighbour retrieval of in-vocabulary words."""

import argparse
import time

import numpy as np

from phonoov import pretrain as pt
from phonoov import toydata
from phonoov.encoder import EncoderConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--words", type=int, default=1000)
    ap.add_argument("--dim", type=int, default=300)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--run-dir", help="also save the encoder and loss log here")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    table = toydata.random_table(rng, toydata.random_words(rng, args.words), args.dim)
    cfg = pt.PretrainConfig(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    start = time.perf_counter()
    result = pt.train(table, cfg, EncoderConfig(model_dim=args.dim))
    train_s = time.perf_counter() - start
    acc = pt.retrieval_accuracy(result.encoder, table)

    for epoch, loss in enumerate(result.loss_log, 1):
        print(f"epoch\t{epoch}\t{loss:.6f}")
    print(f"symbols\t{len(result.encoder.symbols)}")
    print(f"train_seconds\t{train_s:.1f}")
    print(f"retrieval_top1\t{acc:.4f}")
    if args.run_dir:
        pt.write_run(args.run_dir, result, cfg)


if __name__ == "__main__":
    main()
