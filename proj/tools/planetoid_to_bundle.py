#!/usr/bin/env python3
"""Convert public citation / co-purchase datasets into cg3 bundles.

Planetoid input is the directory holding ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}.
The standard split is kept: train = the labeled `x` rows, val = the next 500 nodes,
test = test.index. An .npz input (adj_*, attr_*, labels arrays) gets a seeded split of
--train-per-class / --val-per-class nodes per class, remainder test.
"""

import argparse
import json
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def _load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def read_planetoid(root, name):
    root = Path(root)
    parts = {k: _load_pickle(root / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_index = [int(line) for line in (root / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)

    tx, ty = parts["tx"], parts["ty"]
    if name == "citeseer":
        # Some test ids are isolated and missing from tx; pad them with zero rows.
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        tx, ty = tx_ext, ty_ext

    features = sp.vstack((parts["allx"], tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    onehot = np.vstack((parts["ally"], ty))
    onehot[test_index, :] = onehot[test_sorted, :]

    n = features.shape[0]
    labels = np.where(onehot.sum(1) > 0, onehot.argmax(1), -1)
    edges = set()
    for i, nbrs in parts["graph"].items():
        for j in nbrs:
            if i != j and i < n and j < n:
                edges.add((min(i, j), max(i, j)))

    n_train = parts["y"].shape[0]
    split = {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + 500)),
        "test": sorted(int(i) for i in test_index if labels[i] >= 0),
    }
    return features.tocsr(), labels, sorted(edges), split


def read_npz(path, train_per_class, val_per_class, seed):
    with np.load(path, allow_pickle=True) as z:
        adj = sp.csr_matrix((z["adj_data"], z["adj_indices"], z["adj_indptr"]), shape=tuple(z["adj_shape"]))
        features = sp.csr_matrix((z["attr_data"], z["attr_indices"], z["attr_indptr"]), shape=tuple(z["attr_shape"]))
        labels = np.asarray(z["labels"])
    coo = sp.triu(adj + adj.T, k=1).tocoo()
    edges = sorted(set(zip(coo.row.tolist(), coo.col.tolist())))

    rng = np.random.default_rng(seed)
    train, val = [], []
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        train += members[:train_per_class].tolist()
        val += members[train_per_class:train_per_class + val_per_class].tolist()
    taken = set(train) | set(val)
    split = {
        "train": sorted(train),
        "val": sorted(val),
        "test": [i for i in range(len(labels)) if i not in taken],
    }
    return features, labels, edges, split


def row_normalize(features):
    sums = np.asarray(features.sum(1)).ravel()
    sums[sums == 0] = 1.0
    return sp.diags(1.0 / sums) @ features


def write_bundle(out, features, labels, edges, split):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n, d = features.shape
    classes = int(labels.max()) + 1
    (out / "meta.json").write_text(json.dumps({"classes": classes, "features": d, "nodes": n}, separators=(",", ":")) + "\n")
    dense = features.toarray()
    with open(out / "features.csv", "w") as f:
        for row in dense:
            f.write(",".join(repr(float(v)) if v else "0" for v in row) + "\n")
    with open(out / "edges.csv", "w") as f:
        for i, j in edges:
            f.write(f"{i},{j}\n")
    with open(out / "labels.csv", "w") as f:
        for y in labels:
            f.write(f"{int(y)}\n")
    (out / "splits.json").write_text(json.dumps(split, separators=(",", ":")) + "\n")
    return n, len(edges), d, classes


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("source", help="Planetoid directory or .npz file")
    p.add_argument("out", help="bundle directory to write")
    p.add_argument("--name", default="cora", help="Planetoid dataset name (cora, citeseer, pubmed)")
    p.add_argument("--raw-features", action="store_true", help="skip row normalization of features")
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--val-per-class", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if args.source.endswith(".npz"):
        features, labels, edges, split = read_npz(args.source, args.train_per_class, args.val_per_class, args.seed)
    else:
        features, labels, edges, split = read_planetoid(args.source, args.name)
    if not args.raw_features:
        features = row_normalize(features)
    n, m, d, c = write_bundle(args.out, features, labels, edges, split)
    print(json.dumps({"nodes": n, "edges": m, "features": d, "classes": c,
                      "train": len(split["train"]), "val": len(split["val"]), "test": len(split["test"])}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
