"""Do misspelled homophones land near the target of the word they imitate?

Trains on random targets, then embeds respellings that keep the
pronunciation but are absent from the vocabulary, and counts how often the
cosine to the correct target beats the median cosine to all other targets.
The count is reported for the phoneme, word and mixed vectors separately.
"""

import argparse

import numpy as np

from phonoov import pretrain as pt
from phonoov import toydata


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--words", type=int, default=200)
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--seeds", default="0", help="comma-separated")
    ap.add_argument("--show", type=int, default=5, help="example pairs to print per seed")
    args = ap.parse_args()

    print("seed\tvector\thits\tpairs\tmean_rank")
    for seed in (int(s) for s in args.seeds.split(",")):
        rng = np.random.default_rng(seed)
        words = toydata.random_words(rng, args.words)
        pairs = toydata.homophone_pairs(rng, words, args.pairs)
        table = toydata.random_table(rng, words, 300)
        encoder = pt.train(table, pt.PretrainConfig(seed=seed)).encoder
        ps, ws, ms = encoder.encode_many([m for _, m in pairs])
        for name, vecs in (("phoneme", ps), ("word", ws), ("mixed", ms)):
            sims = pt.cosine_matrix(vecs, table.vectors)
            hits, ranks = 0, []
            for k, (w, _) in enumerate(pairs):
                i = table.index[w]
                hits += sims[k, i] > np.median(np.delete(sims[k], i))
                ranks.append(int((sims[k] > sims[k, i]).sum()))
            print(f"{seed}\t{name}\t{hits}\t{len(pairs)}\t{np.mean(ranks):.1f}")
        for w, m in pairs[: args.show]:
            print(f"#\t{m}\t->\t{w}")


if __name__ == "__main__":
    main()
