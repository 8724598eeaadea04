"""Link prediction (classification and ranking), clustering and PCA."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import Network, dump_edge_list, load_edge_list, split_train_test
from .optimizer import RmsPropState, rmsprop_step

RANK_KS = (1, 3, 5, 10, 15, 20)


# ------------------------------------------------------------ partitions

@dataclass
class DataPartition:
    """Edge sets for embedding training, link classification and ranking.

    ``negatives`` holds as many sampled non-edges as the network has edges.
    ``ranking_test`` is disjoint from the embedding training edges.
    """

    network: Network
    embedding_train: Network
    ranking_test: np.ndarray
    negatives: np.ndarray

    @property
    def all_edges(self) -> np.ndarray:
        return np.column_stack([self.network.src, self.network.dst])

    def digest(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for arr in (self.all_edges, self.embedding_train.src, self.embedding_train.dst,
                    self.ranking_test, self.negatives):
            h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]


def sample_non_edges(net: Network, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct unordered vertex pairs that are not edges of ``net``."""
    n = net.n_vertices
    if count > n * (n - 1) // 2 - net.n_edges:
        raise ValueError("not enough non-edges to sample from")
    existing = set((net.src * n + net.dst).tolist())
    chosen: dict[int, None] = {}
    while len(chosen) < count:
        a = rng.integers(0, n, size=2 * (count - len(chosen)) + 8)
        b = rng.integers(0, n, size=a.size)
        for x, y in zip(a.tolist(), b.tolist()):
            if x == y:
                continue
            key = min(x, y) * n + max(x, y)
            if key in existing or key in chosen:
                continue
            chosen[key] = None
            if len(chosen) == count:
                break
    keys = np.fromiter(chosen, dtype=np.int64, count=count)
    return np.column_stack([keys // n, keys % n])


def make_partition(net: Network, rng: np.random.Generator, embed_fraction: float = 0.9) -> DataPartition:
    """Split ``net`` and sample one non-edge per edge (fewer if the graph is too dense)."""
    train, test = split_train_test(net, embed_fraction, rng)
    n = net.n_vertices
    available = n * (n - 1) // 2 - net.n_edges
    if available < net.n_edges:
        warnings.warn(f"only {available} non-edges exist for {net.n_edges} edges; "
                      "classification negatives are short", stacklevel=2)
    negatives = sample_non_edges(net, min(net.n_edges, available), rng)
    return DataPartition(net, train, np.column_stack([test.src, test.dst]), negatives)


def save_partition(part: DataPartition, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    dump_edge_list(part.network, d / "network.tsv",
                   labels_path=d / "labels.tsv" if part.network.labels is not None else None)
    names = part.network.names
    with open(d / "vertices.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{nm}\n" for nm in names)
    for fname, pairs in (("embedding_train.tsv", np.column_stack([part.embedding_train.src,
                                                                   part.embedding_train.dst])),
                         ("ranking_test.tsv", part.ranking_test),
                         ("negatives.tsv", part.negatives)):
        with open(d / fname, "w", encoding="utf-8", newline="\n") as fh:
            fh.writelines(f"{names[a]}\t{names[b]}\n" for a, b in pairs)
    (d / "partition.json").write_text(json.dumps({"digest": part.digest()}, sort_keys=True) + "\n")


def load_partition(directory) -> DataPartition:
    d = Path(directory)
    names = (d / "vertices.tsv").read_text(encoding="utf-8").splitlines()
    labels_path = d / "labels.tsv"
    loaded = load_edge_list(d / "network.tsv", labels_path if labels_path.exists() else None)
    index = {nm: k for k, nm in enumerate(loaded.names)}
    if set(index) != set(names):
        raise ValueError("partition vertex list does not match its network")
    # restore the original dense ids
    perm = np.array([index[nm] for nm in names])
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    labels = None if loaded.labels is None else tuple(loaded.labels[index[nm]] for nm in names)
    net = Network(tuple(names), inv[loaded.src], inv[loaded.dst], loaded.weight, labels=labels)
    name_id = {nm: k for k, nm in enumerate(names)}

    def pairs(fname):
        rows = [line.split("\t") for line in (d / fname).read_text(encoding="utf-8").splitlines() if line]
        return np.array([(name_id[a], name_id[b]) for a, b in rows], dtype=np.int64).reshape(-1, 2)

    tr = pairs("embedding_train.tsv")
    w = net.edge_weights(tr[:, 0], tr[:, 1]) if tr.size else np.empty(0)
    part = DataPartition(net, Network(net.names, tr[:, 0], tr[:, 1], w, labels=net.labels),
                         pairs("ranking_test.tsv"), pairs("negatives.tsv"))
    meta = json.loads((d / "partition.json").read_text())
    if meta.get("digest") != part.digest():
        raise ValueError("partition digest mismatch; files were modified")
    return part


# ---------------------------------------------------------- classifier

class MLPClassifier:
    """One hidden ReLU layer with a logistic output, trained by RMSProp on
    binary cross-entropy. Inputs are standardized with training statistics."""

    def __init__(self, hidden: int = 64, lr: float = 3e-3, epochs: int = 150,
                 batch: int = 64, rng: np.random.Generator | None = None):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.batch = batch
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def fit(self, X: np.ndarray, y: np.ndarray) -> "MLPClassifier":
        y = np.asarray(y, dtype=np.float64)
        if np.unique(y).size < 2:
            raise ValueError("classifier training set contains a single class")
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        Z = (X - self.mean_) / self.scale_
        n, f = Z.shape
        h = self.hidden
        rng = self.rng
        self.params_ = {
            "W1": rng.normal(0, np.sqrt(2.0 / f), (f, h)), "b1": np.zeros((1, h)),
            "W2": rng.normal(0, np.sqrt(1.0 / h), (h, 1)), "b2": np.zeros((1, 1)),
        }
        states = {k: RmsPropState(v.shape, lr=self.lr) for k, v in self.params_.items()}
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for s in range(0, n, self.batch):
                idx = order[s:s + self.batch]
                grads = self._grads(Z[idx], y[idx])
                for k, g in grads.items():
                    rmsprop_step(self.params_[k], g, states[k])
        return self

    def _forward(self, Z):
        p = self.params_
        a = np.maximum(Z @ p["W1"] + p["b1"], 0.0)
        return a, (a @ p["W2"] + p["b2"])[:, 0]

    def _grads(self, Z, y):
        p = self.params_
        a, logit = self._forward(Z)
        # d BCE / d logit = sigmoid(logit) - y
        dl = (1.0 / (1.0 + np.exp(-logit)) - y)[:, None] / len(y)
        da = (dl @ p["W2"].T) * (a > 0)
        return {"W2": a.T @ dl, "b2": dl.sum(axis=0, keepdims=True),
                "W1": Z.T @ da, "b1": da.sum(axis=0, keepdims=True)}

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        _, logit = self._forward((X - self.mean_) / self.scale_)
        return 1.0 / (1.0 + np.exp(-np.clip(logit, -500, 500)))


def pair_features(emb: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.hstack([emb[pairs[:, 0]], emb[pairs[:, 1]]])


def classify_links(emb: np.ndarray, partition: DataPartition, train_fraction: float,
                   rng: np.random.Generator, **mlp_kw) -> float:
    """Held-out accuracy of an MLP on concatenated pair embeddings.

    Positives are all observed edges, negatives the partition's sampled
    non-edges; a random ``train_fraction`` of each trains the classifier.
    Pairs are fed in both orientations and test predictions average the two.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    pos, neg = partition.all_edges, partition.negatives
    if max(pos.max(initial=-1), neg.max(initial=-1)) >= emb.shape[0]:
        raise ValueError("embeddings do not cover every vertex of the partition")
    pairs = np.vstack([pos, neg])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = rng.permutation(len(pairs))
    cut = int(round(train_fraction * len(pairs)))
    tr, te = order[:cut], order[cut:]
    if te.size == 0:
        raise ValueError("classification test split is empty")
    both = np.vstack([pairs[tr], pairs[tr][:, ::-1]])
    clf = MLPClassifier(rng=rng, **mlp_kw).fit(pair_features(emb, both), np.concatenate([y[tr], y[tr]]))
    prob = 0.5 * (clf.predict_proba(pair_features(emb, pairs[te]))
                  + clf.predict_proba(pair_features(emb, pairs[te][:, ::-1])))
    return float(np.mean((prob >= 0.5) == (y[te] == 1)))


# ------------------------------------------------------------- ranking

def _neighbor_sets(pairs: np.ndarray, n: int) -> list[set]:
    out = [set() for _ in range(n)]
    for a, b in np.asarray(pairs, dtype=np.int64).reshape(-1, 2).tolist():
        out[a].add(b)
        out[b].add(a)
    return out


def rank_links(emb: np.ndarray, ranking_test: np.ndarray, k_list: Sequence[int] = RANK_KS,
               train_edges: np.ndarray | None = None, filtered: bool = True,
               sources: Sequence[int] | None = None) -> dict:
    """Precision@k, recall@k and MAP of inner-product rankings.

    For each source vertex every other vertex is scored by u_i . u_j;
    training neighbours are dropped from the candidates when ``filtered``.
    Relevant items are the source's held-out neighbours. Ties rank lower
    vertex ids first. Sources without held-out neighbours are skipped.
    """
    ranking_test = np.asarray(ranking_test, dtype=np.int64).reshape(-1, 2)
    if ranking_test.size == 0:
        raise ValueError("ranking test set is empty")
    n = emb.shape[0]
    k_list = sorted(set(int(k) for k in k_list))
    relevant = _neighbor_sets(ranking_test, n)
    known = _neighbor_sets(train_edges, n) if (filtered and train_edges is not None) else [set()] * n
    if sources is None:
        sources = [v for v in range(n) if relevant[v]]
    ids = np.arange(n)
    prec = {k: [] for k in k_list}
    rec = {k: [] for k in k_list}
    aps = []
    skipped = 0
    for s in sources:
        rel = relevant[s]
        if not rel:
            skipped += 1
            continue
        keep = np.ones(n, dtype=bool)
        keep[s] = False
        if known[s]:
            keep[list(known[s])] = False
        cand = ids[keep]
        scores = emb[cand] @ emb[s]
        ranked = cand[np.lexsort((cand, -scores))]
        hit = np.isin(ranked, list(rel))
        cum = np.cumsum(hit)
        for k in k_list:
            h = cum[min(k, cum.size) - 1] if cum.size else 0
            prec[k].append(h / k)
            rec[k].append(h / len(rel))
        ranks = np.flatnonzero(hit) + 1
        aps.append(float(np.sum(np.arange(1, ranks.size + 1) / ranks) / len(rel)))
    out = {f"P@{k}": float(np.mean(prec[k])) if aps else 0.0 for k in k_list}
    out.update({f"R@{k}": float(np.mean(rec[k])) if aps else 0.0 for k in k_list})
    out["MAP"] = float(np.mean(aps)) if aps else 0.0
    out["n_sources"] = len(aps)
    out["n_skipped"] = skipped
    return out


# ---------------------------------------------------------- clustering

def _kmeans_pp(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(len(X), p=d2 / total) if total > 0 else rng.integers(len(X))
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(X: np.ndarray, k: int, rng: np.random.Generator, n_init: int = 10,
           max_iter: int = 300, tol: float = 1e-10):
    """Lloyd's algorithm with k-means++ seeding; best inertia over restarts.

    Returns ``(centers, assignment, inertia)``. A restart that ends with an
    empty cluster is discarded.
    """
    X = np.asarray(X, dtype=np.float64)
    if not 1 <= k <= len(X):
        raise ValueError("need 1 <= k <= number of points")
    best = None
    for _ in range(n_init):
        C = _kmeans_pp(X, k, rng)
        assign = None
        for _ in range(max_iter):
            d = ((X[:, None, :] - C[None]) ** 2).sum(-1)
            new = d.argmin(axis=1)
            if np.unique(new).size < k:
                assign = None
                break
            newC = np.array([X[new == c].mean(axis=0) for c in range(k)])
            shift = np.sum((newC - C) ** 2)
            C, assign = newC, new
            if shift <= tol:
                break
        if assign is None:
            continue
        inertia = float(((X - C[assign]) ** 2).sum())
        if best is None or inertia < best[2]:
            best = (C, assign, inertia)
    if best is None:
        raise RuntimeError(f"all {n_init} k-means restarts produced an empty cluster")
    return best


def cluster_accuracy(emb: np.ndarray, labels: Sequence, n_clusters: int,
                     rng: np.random.Generator, n_init: int = 10) -> list[float]:
    """Per-cluster share of members carrying the cluster's majority label."""
    labels = np.asarray(labels)
    if labels.shape[0] != emb.shape[0]:
        raise ValueError("one label per embedding row required")
    _, assign, _ = kmeans(emb, n_clusters, rng, n_init=n_init)
    accs = []
    for c in range(n_clusters):
        _, counts = np.unique(labels[assign == c], return_counts=True)
        accs.append(float(counts.max() / counts.sum()))
    return accs


# ----------------------------------------------------------------- PCA

@dataclass
class PCAResult:
    coords: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray
    all_variances: np.ndarray = field(repr=False)


def pca_project(emb: np.ndarray, n_components: int) -> PCAResult:
    """Project centred data on the top principal directions.

    Directions come from the covariance eigendecomposition, ordered by
    decreasing variance; each is signed so its largest-magnitude entry is
    positive.
    """
    X = np.asarray(emb, dtype=np.float64)
    n, d = X.shape
    if not 1 <= n_components <= d:
        raise ValueError(f"n_components must lie in [1, {d}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(n - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    tol = vals[0] * max(n, d) * np.finfo(float).eps if vals.size else 0.0
    rank = int(np.sum(vals > tol))
    if n_components > rank:
        raise ValueError(f"n_components={n_components} exceeds the data rank {rank}")
    W = vecs[:, :n_components]
    pivot = np.argmax(np.abs(W), axis=0)
    W = W * np.sign(W[pivot, np.arange(n_components)])
    total = vals.sum()
    return PCAResult(Xc @ W, W, vals[:n_components], vals[:n_components] / total, mean, vals)


def write_pca_csv(path, coords: np.ndarray, names: Sequence[str], labels: Sequence | None = None) -> None:
    axes = ["x", "y", "z"] + [f"c{k}" for k in range(4, coords.shape[1] + 1)]
    header = ["vertex", *axes[:coords.shape[1]]] + (["label"] if labels is not None else [])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for k, (name, row) in enumerate(zip(names, coords)):
            cells = [name, *(f"{x:.9g}" for x in row)]
            if labels is not None:
                cells.append(str(labels[k]))
            fh.write(",".join(cells) + "\n")


# -------------------------------------------------------------- report

@dataclass
class EvalReport:
    model: str
    seed: int
    config_hash: str
    classification_accuracy: dict = field(default_factory=dict)
    ranking: dict = field(default_factory=dict)
    clustering: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classification_accuracy"] = {f"{float(k):g}": v for k, v in self.classification_accuracy.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"
