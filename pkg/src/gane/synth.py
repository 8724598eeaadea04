"""Synthetic benchmark graphs: stochastic block model and Barabasi-Albert."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .graph import Network


def sbm(sizes: Sequence[int], p_in: float, p_out: float, rng: np.random.Generator) -> Network:
    """Undirected planted-partition graph; vertex labels are block indices.

    Every pair inside a block is linked with probability ``p_in``, every
    pair across blocks with ``p_out``.
    """
    if not (0 <= p_out <= 1 and 0 <= p_in <= 1):
        raise ValueError("edge probabilities must lie in [0, 1]")
    block = np.repeat(np.arange(len(sizes)), sizes)
    n = block.size
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(iu.size) < p
    names = tuple(str(v) for v in range(n))
    labels = tuple(f"b{b}" for b in block)
    return Network(names, iu[keep], ju[keep], np.ones(int(keep.sum())), labels=labels)


def barabasi_albert(n: int, m: int, rng: np.random.Generator) -> Network:
    """Preferential attachment: each new vertex links to ``m`` existing ones."""
    if not 1 <= m < n:
        raise ValueError("need 1 <= m < n")
    src, dst = [], []
    # seed clique on m + 1 vertices
    for a in range(m + 1):
        for b in range(a + 1, m + 1):
            src.append(a)
            dst.append(b)
    ends = src + dst  # each endpoint listed once per incident edge
    for v in range(m + 1, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(ends[int(rng.integers(len(ends)))])
        for t in sorted(targets):
            src.append(t)
            dst.append(v)
            ends.extend((t, v))
    names = tuple(str(v) for v in range(n))
    return Network(names, np.array(src), np.array(dst), np.ones(len(src)))
