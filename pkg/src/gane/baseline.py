"""LINE first- and second-order embeddings trained with negative sampling."""
from __future__ import annotations

import enum

import numpy as np

from .graph import EdgeBatch, Network, noise_distribution, sample_edges
from .model import SparseGrad, init_embedding, log_sigmoid, _dlog_sigmoid
from .optimizer import sgd_step
from .trainer import TrainConfig, make_rngs


class LineVariant(str, enum.Enum):
    O1 = "line-o1"
    O2 = "line-o2"
    O1_PLUS_O2 = "line-o1o2"


def draw_negatives(net: Network, noise, src, K, rng, max_tries: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """``(m, K)`` noise vertices that are neither the source nor one of its neighbours.

    Draws come from ``noise`` and are rejected on a hit. Rows still unresolved
    after ``max_tries`` rounds are drawn exactly from the noise distribution
    restricted to valid vertices. The returned mask is False where the
    source has no valid vertex at all (it is adjacent to everyone); those
    slots contribute nothing to the loss.
    """
    src = np.asarray(src, dtype=np.int64)
    m = src.size
    valid = np.broadcast_to((net.degree()[src] < net.n_vertices - 1)[:, None], (m, K)).copy()
    neg = noise.sample(rng, (m, K)).astype(np.int64)

    def bad_slots():
        s = np.broadcast_to(src[:, None], neg.shape)
        return valid & ((neg == s) | (net.edge_weights(s.ravel(), neg.ravel(), 0.0).reshape(neg.shape) > 0))

    bad = bad_slots()
    for _ in range(max_tries):
        if not bad.any():
            break
        neg[bad] = noise.sample(rng, int(bad.sum()))
        bad = bad_slots()
    for r, c in zip(*np.nonzero(bad)):
        p = noise.probabilities.copy()
        p[src[r]] = 0.0
        p[net.neighbors(src[r])] = 0.0
        neg[r, c] = rng.choice(p.size, p=p / p.sum())
    neg[~valid] = src[np.nonzero(~valid)[0]]  # placeholder index, masked out
    return neg, valid


def line_loss(vertex: np.ndarray, context: np.ndarray, batch: EdgeBatch, negatives: np.ndarray,
              mask: np.ndarray | None = None) -> float:
    """Negative-sampling loss summed over the batch.

    -log sigma(c_j . u_i) - sum_k log sigma(-c_k . u_i), where ``context``
    is ``vertex`` itself for first order. ``mask`` switches off negative
    slots.
    """
    ui = vertex[batch.src]
    pos = log_sigmoid(np.sum(ui * context[batch.dst], axis=1))
    neg = log_sigmoid(-np.einsum("mkd,md->mk", context[negatives], ui))
    if mask is not None:
        neg = np.where(mask, neg, 0.0)
    return float(-np.sum(pos + neg.sum(axis=1)))


def line_grad(vertex: np.ndarray, context: np.ndarray, batch: EdgeBatch, negatives: np.ndarray,
              shared: bool, mask: np.ndarray | None = None) -> tuple[SparseGrad, SparseGrad | None]:
    """Gradients of :func:`line_loss` for the vertex and context tables.

    With ``shared`` (first order) both tables are the same array and a
    single combined gradient is returned.
    """
    ui, cj, ck = vertex[batch.src], context[batch.dst], context[negatives]
    a = -_dlog_sigmoid(np.sum(ui * cj, axis=1))[:, None]                  # d/dx of -log sig(x)
    b = _dlog_sigmoid(-np.einsum("mkd,md->mk", ck, ui))                   # d/dy of -log sig(-y)
    if mask is not None:
        b = np.where(mask, b, 0.0)
    g_ui = a * cj + np.einsum("mk,mkd->md", b, ck)
    g_cj = a * ui
    g_ck = (b[..., None] * ui[:, None, :]).reshape(-1, vertex.shape[1])
    if shared:
        rows = np.concatenate([batch.src, batch.dst, negatives.reshape(-1)])
        return SparseGrad.accumulate(rows, np.vstack([g_ui, g_cj, g_ck])), None
    gv = SparseGrad.accumulate(batch.src, g_ui)
    gc = SparseGrad.accumulate(np.concatenate([batch.dst, negatives.reshape(-1)]), np.vstack([g_cj, g_ck]))
    return gv, gc


def _train_one(net: Network, cfg: TrainConfig, order: int, seed_offset: int, dim: int,
               loss_trace: list | None) -> np.ndarray:
    init_rng, rng = make_rngs(cfg.seed + seed_offset, 2)
    n = net.n_vertices
    vertex = init_embedding(n, dim, init_rng)
    context = vertex if order == 1 else np.zeros((n, dim))
    noise = noise_distribution(net)
    steps = max(cfg.max_iters, 1)
    for t in range(cfg.max_iters):
        lr = cfg.line_lr * max(1.0 - t / steps, 1e-4)
        batch = sample_edges(net, cfg.batch, rng, weighted=cfg.weighted_sampling, orient=True)
        neg, mask = draw_negatives(net, noise, batch.src, cfg.neg_k, rng)
        if loss_trace is not None:
            loss_trace.append(line_loss(vertex, context, batch, neg, mask) / len(batch))
        gv, gc = line_grad(vertex, context, batch, neg, shared=order == 1, mask=mask)
        sgd_step(vertex, gv, lr)
        if gc is not None:
            sgd_step(context, gc, lr)
    return vertex


def line_train(net: Network, cfg: TrainConfig, variant, loss_trace: list | None = None) -> np.ndarray:
    """Train LINE and return the vertex embeddings.

    Edges are drawn proportionally to weight, so the per-edge loss carries
    no extra weight factor. ``O1_PLUS_O2`` trains both at ``cfg.dim`` and
    concatenates them.
    """
    variant = LineVariant(variant)
    cfg.validate()
    if net.n_edges == 0:
        raise ValueError("training needs at least one edge")
    if variant is LineVariant.O1:
        return _train_one(net, cfg, 1, 0, cfg.dim, loss_trace)
    if variant is LineVariant.O2:
        return _train_one(net, cfg, 2, 0, cfg.dim, loss_trace)
    return np.hstack([_train_one(net, cfg, 1, 0, cfg.dim, loss_trace),
                      _train_one(net, cfg, 2, 1, cfg.dim, None)])
