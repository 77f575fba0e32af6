#!/usr/bin/env python3
"""Convert public benchmark dumps into gph2 graph directories.

Two source layouts are understood:

  planetoid  ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}
             (Cora, CiteSeer, PubMed)
  heco       labels.npy, <type>_feat.npz and <src><dst>.txt edge lists
             (ACM, DBLP)

Features are row-normalized (each row divided by its sum) unless
--no-row-normalize is given.

    python3 tools/import_datasets.py planetoid --name cora --raw raw/planetoid --out data/cora
    python3 tools/import_datasets.py heco --name acm --raw raw/acm --out data/acm
"""
import argparse
import json
import os
import pickle
import sys

import numpy as np
import scipy.sparse as sp

# Node counts, relations and meta-paths of the heterogeneous benchmarks.
# Relation files are "<src><dst>.txt" with one "src dst" pair per line.
HETERO = {
    "acm": {
        "target": "paper",
        "types": {"paper": ("p", 4019), "author": ("a", 7167), "subject": ("s", 60)},
        "relations": [("paper", "writes", "author"), ("paper", "about", "subject")],
        "metapaths": {
            "PAP": [("writes", False), ("writes", True)],
            "PSP": [("about", False), ("about", True)],
        },
    },
    "dblp": {
        "target": "author",
        "types": {"author": ("a", 4057), "paper": ("p", 14328), "conference": ("c", 20), "term": ("t", 7723)},
        "relations": [("paper", "writes", "author"), ("paper", "published", "conference"),
                      ("paper", "uses", "term")],
        "metapaths": {
            "APA": [("writes", True), ("writes", False)],
            "APCPA": [("writes", True), ("published", False), ("published", True), ("writes", False)],
            "APTPA": [("writes", True), ("uses", False), ("uses", True), ("writes", False)],
        },
    },
}


def fail(msg):
    print(f"import_datasets: {msg}", file=sys.stderr)
    sys.exit(2)


def row_normalize(x):
    sums = np.asarray(x.sum(axis=1)).ravel().astype(np.float64)
    sums[sums == 0] = 1.0
    return np.asarray(x / sums[:, None], dtype=np.float64)


def dense(x):
    return np.asarray(x.todense() if sp.issparse(x) else x, dtype=np.float64)


def write_features(path, x):
    x = np.ascontiguousarray(x, dtype="<f8")
    if not np.isfinite(x).all():
        fail(f"{path}: non-finite feature values")
    with open(path, "wb") as f:
        f.write(x.tobytes())


def write_pairs(path, header, pairs):
    with open(path, "w", newline="\n") as f:
        f.write(header + "\n")
        for a, b in pairs:
            f.write(f"{a},{b}\n")


def write_graph(out, meta, features, relations, labels):
    """features: {type: matrix or None}; relations: {(src,name,dst): pairs}; labels: (type, array with -1)."""
    os.makedirs(out, exist_ok=True)
    for t in meta["node_types"]:
        x = features.get(t["name"])
        t["feature_dim"] = None if x is None else int(x.shape[1])
        if x is not None:
            write_features(os.path.join(out, f"features.{t['name']}.bin"), x)
    for (src, name, dst), pairs in relations.items():
        write_pairs(os.path.join(out, f"edges.{src}.{name}.{dst}.csv"), "src,dst", pairs)
    ltype, y = labels
    write_pairs(os.path.join(out, f"labels.{ltype}.csv"), "node,label",
                [(i, int(c)) for i, c in enumerate(y) if c >= 0])
    with open(os.path.join(out, "meta.json"), "w", newline="\n") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


# ---------------------------------------------------------------- planetoid

def load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def import_planetoid(name, raw, out, normalize):
    def part(suffix):
        p = os.path.join(raw, f"ind.{name}.{suffix}")
        if not os.path.exists(p):
            fail(f"missing {p}")
        return p

    x, y, tx, ty, allx, ally, graph = (load_pickle(part(s)) for s in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    with open(part("test.index")) as f:
        test_idx = [int(line) for line in f if line.strip()]
    test_sorted = sorted(test_idx)

    tx, ty = dense(tx), np.asarray(ty)
    if name == "citeseer":
        # Some test ids have no entry in tx/ty; they become isolated, unlabeled nodes.
        full = range(test_sorted[0], test_sorted[-1] + 1)
        tx_ext = np.zeros((len(full), tx.shape[1]))
        tx_ext[np.asarray(test_sorted) - test_sorted[0], :] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[np.asarray(test_sorted) - test_sorted[0], :] = ty
        tx, ty = tx_ext, ty_ext

    feats = np.vstack([dense(allx), tx])
    onehot = np.vstack([np.asarray(ally), ty])
    feats[test_idx, :] = feats[test_sorted, :]
    onehot[test_idx, :] = onehot[test_sorted, :]
    n = feats.shape[0]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1)

    pairs = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u == v or u >= n or v >= n:
                continue
            pairs.add((min(u, v), max(u, v)))
    if normalize:
        feats = row_normalize(feats)
    meta = {
        "kind": "homo",
        "node_types": [{"name": "node", "count": n}],
        "relations": [{"src": "node", "name": "cites", "dst": "node"}],
        "target_type": "node",
        "n_classes": int(onehot.shape[1]),
        "metapaths": [],
    }
    write_graph(out, meta, {"node": feats}, {("node", "cites", "node"): sorted(pairs)}, ("node", labels))
    return meta


# ---------------------------------------------------------------- heco

def load_matrix(raw, prefix):
    for ext, loader in ((".npz", sp.load_npz), (".npy", np.load)):
        p = os.path.join(raw, prefix + ext)
        if os.path.exists(p):
            return dense(loader(p))
    return None


def import_heco(name, raw, out, normalize):
    if name not in HETERO:
        fail(f"unknown heterogeneous dataset '{name}' (known: {', '.join(sorted(HETERO))})")
    layout = HETERO[name]
    types = layout["types"]

    features = {}
    for tname, (short, count) in types.items():
        x = load_matrix(raw, f"{short}_feat")
        if x is not None:
            if x.shape[0] != count:
                fail(f"{short}_feat has {x.shape[0]} rows, expected {count}")
            features[tname] = row_normalize(x) if normalize else x
        else:
            features[tname] = None

    relations = {}
    for src, rname, dst in layout["relations"]:
        path = os.path.join(raw, f"{types[src][0]}{types[dst][0]}.txt")
        if not os.path.exists(path):
            fail(f"missing {path}")
        e = np.loadtxt(path, dtype=np.int64, ndmin=2)
        if e.size and (e[:, 0].max() >= types[src][1] or e[:, 1].max() >= types[dst][1]):
            fail(f"{path}: node id beyond the expected counts")
        relations[(src, rname, dst)] = sorted({(int(a), int(b)) for a, b in e})

    lp = os.path.join(raw, "labels.npy")
    if not os.path.exists(lp):
        fail(f"missing {lp}")
    labels = np.load(lp).astype(np.int64).ravel()
    target = layout["target"]
    if labels.shape[0] != types[target][1]:
        fail(f"labels.npy has {labels.shape[0]} entries, expected {types[target][1]}")

    meta = {
        "kind": "hetero",
        "node_types": [{"name": t, "count": c} for t, (_, c) in types.items()],
        "relations": [{"src": s, "name": r, "dst": d} for s, r, d in layout["relations"]],
        "target_type": target,
        "n_classes": int(labels.max()) + 1,
        "metapaths": [{"name": mp, "steps": [{"relation": r, "reverse": rev} for r, rev in steps]}
                      for mp, steps in layout["metapaths"].items()],
    }
    write_graph(out, meta, features, relations, (target, labels))
    return meta


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("format", choices=["planetoid", "heco"])
    ap.add_argument("--name", required=True, help="dataset name, e.g. cora, citeseer, pubmed, acm, dblp")
    ap.add_argument("--raw", required=True, help="directory holding the downloaded files")
    ap.add_argument("--out", required=True, help="output graph directory")
    ap.add_argument("--no-row-normalize", action="store_true", help="keep raw feature values")
    args = ap.parse_args(argv)
    name = args.name.lower()
    fn = import_planetoid if args.format == "planetoid" else import_heco
    meta = fn(name, args.raw, args.out, not args.no_row_normalize)
    counts = ", ".join(f"{t['name']} {t['count']}" for t in meta["node_types"])
    print(f"{name}: {counts}; {meta['n_classes']} classes -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
