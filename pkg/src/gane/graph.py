"""Weighted undirected networks, alias sampling and train/test splitting."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Base class for malformed or invalid graph input."""


class ParseError(GraphError):
    pass


class ValidationError(GraphError):
    pass


class SplitError(GraphError):
    pass


@dataclass
class EdgeBatch:
    """A batch of (possibly repeated) edges as parallel arrays."""

    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray

    def __len__(self):
        return int(np.asarray(self.src).size)

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in zip(self.src, self.dst)]


class AliasTable:
    """Constant-time sampler for a finite discrete distribution (Vose's method).

    Args:
        weights: nonnegative, not all zero. Normalization is done here.
    """

    def __init__(self, weights: Sequence[float]):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("alias table needs a nonempty 1-d weight vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("alias weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("alias weights sum to zero")

        n = w.size
        self.n = n
        self.probabilities = w / total
        scaled = self.probabilities * n
        self.prob = np.ones(n, dtype=np.float64)
        self.alias = np.arange(n, dtype=np.int64)

        small = [k for k in range(n) if scaled[k] < 1.0]
        large = [k for k in range(n) if scaled[k] >= 1.0]
        while small and large:
            s = small.pop()
            l = large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            # (a + b) - 1 loses less precision than a - (1 - b)
            scaled[l] = (scaled[l] + scaled[s]) - 1.0
            if scaled[l] < 1.0:
                small.append(l)
            else:
                large.append(l)
        # leftovers are 1 up to rounding
        for k in small + large:
            self.prob[k] = 1.0
            self.alias[k] = k

    def reconstructed(self) -> np.ndarray:
        """Probability mass implied by the table; equals the input distribution."""
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / self.n

    def sample(self, rng: np.random.Generator, size=None):
        """Draw ``size`` indices (a scalar when size is None)."""
        k = rng.integers(0, self.n, size=size)
        u = rng.random(size=size)
        return np.where(u < self.prob[k], k, self.alias[k])


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable weighted undirected graph with dense vertex ids.

    Edges are stored once with ``src < dst``. ``names[v]`` is the original
    identifier of vertex ``v``.
    """

    names: tuple[str, ...]
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    labels: tuple[str, ...] | None = None
    vertex_weight: np.ndarray = field(init=False, repr=False)
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)
    adj_weight: np.ndarray = field(init=False, repr=False)
    _edge_table: AliasTable | None = field(init=False, repr=False, default=None)
    _key_index: tuple | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        src = np.ascontiguousarray(self.src, dtype=np.int64)
        dst = np.ascontiguousarray(self.dst, dtype=np.int64)
        w = np.ascontiguousarray(self.weight, dtype=np.float64)
        n = len(self.names)
        if not (src.shape == dst.shape == w.shape) or src.ndim != 1:
            raise ValidationError("edge arrays must be 1-d and equally sized")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise ValidationError("edge endpoint out of range")
        loops = np.flatnonzero(src == dst)
        if loops.size:
            v = self.names[src[loops[0]]]
            raise ValidationError(f"self-loop on vertex {v!r}")
        bad = np.flatnonzero(~(w > 0) | ~np.isfinite(w))
        if bad.size:
            k = bad[0]
            raise ValidationError(
                f"nonpositive weight {w[k]} on edge ({self.names[src[k]]!r}, {self.names[dst[k]]!r})"
            )
        lo, hi = np.minimum(src, dst), np.maximum(src, dst)
        key = lo * n + hi
        order = np.argsort(key, kind="stable")
        dup = np.flatnonzero(np.diff(key[order]) == 0)
        if dup.size:
            k = order[dup[0]]
            raise ValidationError(f"duplicate edge ({self.names[lo[k]]!r}, {self.names[hi[k]]!r})")
        if self.labels is not None and len(self.labels) != n:
            raise ValidationError("label count does not match vertex count")

        for arr in (lo, hi, w):
            arr.setflags(write=False)
        object.__setattr__(self, "src", lo)
        object.__setattr__(self, "dst", hi)
        object.__setattr__(self, "weight", w)

        vw = np.zeros(n)
        np.add.at(vw, lo, w)
        np.add.at(vw, hi, w)
        vw.setflags(write=False)
        object.__setattr__(self, "vertex_weight", vw)

        # CSR adjacency over both orientations, neighbors sorted
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        ww = np.concatenate([w, w])
        order = np.lexsort((cols, rows))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        indptr = np.cumsum(indptr)
        for name, arr in (("indptr", indptr), ("indices", cols[order]), ("adj_weight", ww[order])):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.names)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def total_weight(self) -> float:
        return float(self.weight.sum())

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def neighbor_weights(self, v: int) -> np.ndarray:
        return self.adj_weight[self.indptr[v]:self.indptr[v + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edge_weight(self, i: int, j: int) -> float:
        """Weight of edge (i, j), or 0.0 when unobserved."""
        nb = self.neighbors(i)
        k = np.searchsorted(nb, j)
        if k < nb.size and nb[k] == j:
            return float(self.neighbor_weights(i)[k])
        return 0.0

    def edge_weights(self, i: np.ndarray, j: np.ndarray, default: float = 0.0) -> np.ndarray:
        """Vectorized :meth:`edge_weight`; unobserved pairs get ``default``."""
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        out = np.full(i.shape, default, dtype=np.float64)
        if self.n_edges == 0 or i.size == 0:
            return out
        n = self.n_vertices
        if self._key_index is None:
            keys = self.src * n + self.dst
            order = np.argsort(keys)
            object.__setattr__(self, "_key_index", (keys[order], order))
        sorted_keys, order = self._key_index
        q = np.minimum(i, j) * n + np.maximum(i, j)
        pos = np.clip(np.searchsorted(sorted_keys, q), 0, sorted_keys.size - 1)
        hit = sorted_keys[pos] == q
        out[hit] = self.weight[order[pos[hit]]]
        return out

    def has_edge(self, i: int, j: int) -> bool:
        return self.edge_weight(i, j) > 0

    def edges(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.src, self.dst, self.weight)]

    def edge_alias(self) -> AliasTable:
        """Alias table over edges proportional to weight (built lazily, cached)."""
        if self._edge_table is None:
            object.__setattr__(self, "_edge_table", AliasTable(self.weight))
        return self._edge_table

    def subgraph(self, edge_ids: np.ndarray) -> "Network":
        """Network on the same vertex set restricted to the given edge indices."""
        edge_ids = np.sort(np.asarray(edge_ids, dtype=np.int64))
        return Network(self.names, self.src[edge_ids], self.dst[edge_ids],
                       self.weight[edge_ids], labels=self.labels)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.names == other.names and self.labels == other.labels
                and np.array_equal(self.src, other.src)
                and np.array_equal(self.dst, other.dst)
                and np.array_equal(self.weight, other.weight))

    __hash__ = None


def from_edges(edges: Iterable[tuple], labels: dict | None = None, names: Sequence[str] | None = None) -> Network:
    """Build a network from ``(u, v[, w])`` tuples of arbitrary hashable ids.

    With ``names`` given, ids are looked up in that order; otherwise vertices
    are numbered by first appearance.
    """
    index: dict[str, int] = {}
    if names is not None:
        index = {str(nm): k for k, nm in enumerate(names)}
    src, dst, w = [], [], []
    for e in edges:
        u, v = str(e[0]), str(e[1])
        for x in (u, v):
            if x not in index:
                if names is not None:
                    raise ValidationError(f"unknown vertex {x!r}")
                index[x] = len(index)
        src.append(index[u])
        dst.append(index[v])
        w.append(float(e[2]) if len(e) > 2 else 1.0)
    vertex_names = tuple(index)
    lab = None
    if labels is not None:
        labels = {str(k): str(val) for k, val in labels.items()}
        missing = [v for v in vertex_names if v not in labels]
        if missing:
            raise ValidationError(f"no label for vertex {missing[0]!r}")
        lab = tuple(labels[v] for v in vertex_names)
    return Network(vertex_names, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                   np.array(w, dtype=np.float64), labels=lab)


def _read_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t") if "\t" in line else line.split()


def load_labels(path) -> dict[str, str]:
    labels = {}
    for lineno, parts in _read_rows(Path(path)):
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'vertex<TAB>label'")
        if parts[0] in labels:
            raise ValidationError(f"{path}:{lineno}: duplicate label for {parts[0]!r}")
        labels[parts[0]] = parts[1]
    return labels


def load_edge_list(path, labels_path=None) -> Network:
    """Read a tab-separated ``src dst [weight]`` edge list.

    Whitespace separation is accepted when a line has no tab. Vertices
    listed only in the label file become isolated vertices.
    """
    path = Path(path)
    rows = []
    for lineno, parts in _read_rows(path):
        if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
            raise ParseError(f"{path}:{lineno}: expected 'src<TAB>dst[<TAB>weight]', got {len(parts)} fields")
        try:
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad weight {parts[2]!r}") from None
        if parts[0] == parts[1]:
            raise ValidationError(f"{path}:{lineno}: self-loop on vertex {parts[0]!r}")
        if not w > 0 or not math.isfinite(w):
            raise ValidationError(f"{path}:{lineno}: nonpositive weight {w} on edge ({parts[0]!r}, {parts[1]!r})")
        rows.append((parts[0], parts[1], w))
    labels = load_labels(labels_path) if labels_path is not None else None
    names = None
    if labels is not None:
        seen = dict.fromkeys(x for r in rows for x in r[:2])
        names = list(seen) + [v for v in labels if v not in seen]
    return from_edges(rows, labels=labels, names=names)


def _fmt_weight(w: float) -> str:
    return str(int(w)) if float(w).is_integer() and abs(w) < 2**53 else repr(float(w))


def dump_edge_list(net: Network, path, labels_path=None) -> None:
    """Write ``net`` in the format read by :func:`load_edge_list`.

    Isolated vertices only survive the round trip through the label file.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b, w in zip(net.src, net.dst, net.weight):
            fh.write(f"{net.names[a]}\t{net.names[b]}\t{_fmt_weight(w)}\n")
    if labels_path is not None:
        if net.labels is None:
            raise ValueError("network carries no labels")
        with open(labels_path, "w", encoding="utf-8", newline="\n") as fh:
            for name, lab in zip(net.names, net.labels):
                fh.write(f"{name}\t{lab}\n")


def write_id_map(net: Network, path) -> None:
    """Sidecar ``dense_id<TAB>original_name`` map."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, name in enumerate(net.names):
            fh.write(f"{k}\t{name}\n")


def noise_distribution(net: Network, power: float = 0.75) -> AliasTable:
    """Negative-sampling distribution with mass proportional to W_v ** power."""
    if net.n_vertices == 0:
        raise GraphError("empty network")
    return AliasTable(net.vertex_weight ** power)


def sample_edges(net: Network, m: int, rng: np.random.Generator,
                 weighted: bool = True, orient: bool = False) -> EdgeBatch:
    """Draw ``m`` i.i.d. edges.

    Edges are drawn proportionally to weight, or uniformly when
    ``weighted`` is False. With ``orient`` each edge is flipped with
    probability 1/2 so either endpoint can act as the source.
    """
    if m <= 0:
        return EdgeBatch(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    if net.n_edges == 0:
        raise GraphError("cannot sample edges from an edgeless network")
    if weighted:
        k = net.edge_alias().sample(rng, m)
    else:
        k = rng.integers(0, net.n_edges, size=m)
    i, j = net.src[k], net.dst[k]
    if orient:
        flip = rng.random(m) < 0.5
        i, j = np.where(flip, j, i), np.where(flip, i, j)
    return EdgeBatch(i, j, net.weight[k])


def split_train_test(net: Network, train_fraction: float, rng: np.random.Generator):
    """Random edge split whose training part touches every vertex.

    Returns ``(train, test)``, both networks on the full vertex set. The
    training part holds ceil(train_fraction * |E|) edges; ``test`` holds
    the complement and carries no coverage guarantee.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n, n_e = net.n_vertices, net.n_edges
    target = math.ceil(train_fraction * n_e - 1e-9)
    deg = net.degree()
    isolated = np.flatnonzero(deg == 0)
    if isolated.size:
        raise SplitError(f"vertex {net.names[isolated[0]]!r} has no edges and cannot be covered")

    # per-vertex incident edge ids
    inc = [[] for _ in range(n)]
    for e, (a, b) in enumerate(zip(net.src, net.dst)):
        inc[a].append(e)
        inc[b].append(e)

    chosen = np.zeros(n_e, dtype=bool)
    covered = np.zeros(n, dtype=bool)
    for v in rng.permutation(n):
        if covered[v]:
            continue
        cand = inc[v]
        # prefer an edge that also covers an uncovered neighbour
        other = [e for e in cand if not covered[net.src[e] if net.src[e] != v else net.dst[e]]]
        pool = other or cand
        e = pool[int(rng.integers(len(pool)))]
        chosen[e] = True
        covered[net.src[e]] = covered[net.dst[e]] = True
    if chosen.sum() > target:
        # the last vertex the budget could not reach
        order = np.flatnonzero(chosen)
        reachable = np.zeros(n, dtype=bool)
        for e in order[:target]:
            reachable[net.src[e]] = reachable[net.dst[e]] = True
        v = int(np.flatnonzero(~reachable)[0])
        raise SplitError(
            f"cannot cover vertex {net.names[v]!r} with {target} training edges "
            f"(cover needs {int(chosen.sum())})"
        )
    rest = np.flatnonzero(~chosen)
    extra = rng.permutation(rest)[: target - int(chosen.sum())]
    chosen[extra] = True
    train_ids = np.flatnonzero(chosen)
    test_ids = np.flatnonzero(~chosen)
    if test_ids.size == 0:
        warnings.warn("train/test split left the test set empty", stacklevel=2)
    return net.subgraph(train_ids), net.subgraph(test_ids)
