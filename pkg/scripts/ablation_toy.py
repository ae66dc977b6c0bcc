"""Seven-row input-representation ablation on the homophone toy task, seed by seed.

Same computation as ``phonoov ablate --toy`` but prints every seed and the
paired difference between the full configuration and word-only inputs.
"""

import argparse

import numpy as np

from phonoov import downstream as ds
from phonoov import pretrain as pt
from phonoov import toydata


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--head-epochs", type=int, default=10)
    ap.add_argument("--noise", type=float, default=0.6, help="spread of keyword targets around class centroids")
    args = ap.parse_args()

    seeds = [int(s) for s in args.seeds.split(",")]
    grid = {}
    for seed in seeds:
        task = toydata.homophone_task(seed, noise=args.noise)
        feats = ds.ModalFeatures(pt.train(task.targets, pt.PretrainConfig(seed=seed)).encoder)
        cfg = ds.FinetuneConfig(epochs=args.head_epochs, seed=seed)
        grid[seed] = ds.run_ablation(task.train, task.dev, {"test": task.test, "test_oov": task.test_oov},
                                     feats, cfg, task.num_classes)

    print("row\tinputs\t" + "\t".join(f"oov_s{s}" for s in seeds) + "\toov_mean\ttest_mean")
    for row in ds.ABLATION_ROWS:
        oov = [grid[s][row]["test_oov"]["accuracy"] for s in seeds]
        test = [grid[s][row]["test"]["accuracy"] for s in seeds]
        print(f"{row}\t{ds.row_label(row)}\t" + "\t".join(f"{x:.3f}" for x in oov)
              + f"\t{np.mean(oov):.4f}\t{np.mean(test):.4f}")
    diff = [grid[s][7]["test_oov"]["accuracy"] - grid[s][2]["test_oov"]["accuracy"] for s in seeds]
    print(f"# full minus word-only on OOV: mean {np.mean(diff):+.4f}, wins {sum(d > 0 for d in diff)}/{len(diff)}")


if __name__ == "__main__":
    main()
