"""Discriminator scores, Wasserstein losses and generator policy gradients.

Two parameter matrices are involved: ``phi`` (discriminator embeddings,
the exported vectors by default) and ``theta`` (generator embeddings). Both
are plain ``(|V|, d)`` float64 arrays. Gradients are returned as
:class:`SparseGrad` holding only the rows a batch touched.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import AliasTable, EdgeBatch, Network

# floor for log(sigmoid(x)); sigmoid never rounds to 0 or 1 above it in float64
LOG_SIGMOID_FLOOR = -30.0
# weight given to a generated edge that is not observed in the graph
UNOBSERVED_EDGE_WEIGHT = 1.0
BINARY_MAGIC = b"GANE1"


class Variant(str, enum.Enum):
    GANE = "gane"
    GANE_O1 = "gane-o1"
    GANE_O2 = "gane-o2"


class UndefinedScoreError(ValueError):
    """Cosine score requested for a zero-norm embedding row."""


@dataclass
class SparseGrad:
    """Row-sparse gradient: ``values[k]`` is the gradient of row ``rows[k]``."""

    rows: np.ndarray
    values: np.ndarray

    @classmethod
    def accumulate(cls, rows: np.ndarray, values: np.ndarray) -> "SparseGrad":
        """Sum per-sample row contributions; order of summation is fixed."""
        uniq, inv = np.unique(rows, return_inverse=True)
        out = np.zeros((uniq.size, values.shape[1]))
        np.add.at(out, inv.reshape(-1), values)
        return cls(uniq.astype(np.int64), out)

    @classmethod
    def from_dense(cls, grad: np.ndarray) -> "SparseGrad":
        return cls(np.arange(grad.shape[0], dtype=np.int64), np.array(grad, dtype=np.float64))

    def to_dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        out[self.rows] = self.values
        return out

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass
class GeneratedEdges(EdgeBatch):
    """Generator samples; ``logp[k]`` is log p_theta(dst[k] | src[k])."""

    logp: np.ndarray = None


def init_embedding(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform entries in [-0.5/d, 0.5/d]."""
    return rng.uniform(-0.5 / d, 0.5 / d, size=(n, d))


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(-np.logaddexp(0.0, -x), LOG_SIGMOID_FLOOR)


def _dlog_sigmoid(x):
    # derivative of the clamped log-sigmoid; zero on the flat part
    x = np.asarray(x, dtype=np.float64)
    unclamped = -np.logaddexp(0.0, -x) > LOG_SIGMOID_FLOOR
    return np.where(unclamped, _sigmoid(-x), 0.0)


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def score_cosine(phi: np.ndarray, i, j):
    """Cosine similarity of rows ``i`` and ``j`` (scalars or arrays)."""
    ui, uj = phi[i], phi[j]
    ni = np.linalg.norm(ui, axis=-1)
    nj = np.linalg.norm(uj, axis=-1)
    if np.any(ni == 0) or np.any(nj == 0):
        raise UndefinedScoreError("cosine score undefined for a zero-norm embedding")
    return np.clip(np.sum(ui * uj, axis=-1) / (ni * nj), -1.0, 1.0)


def score_p1(phi: np.ndarray, i, j):
    """First-order joint probability sigma(u_i . u_j)."""
    return _sigmoid(np.sum(phi[i] * phi[j], axis=-1))


def _as_batch(batch) -> EdgeBatch:
    if isinstance(batch, EdgeBatch):
        return batch
    arr = np.asarray(batch, dtype=np.float64).reshape(-1, 3)
    return EdgeBatch(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2])


def draw_noise(noise: AliasTable, m: int, K: int, rng: np.random.Generator) -> np.ndarray:
    return noise.sample(rng, (m, K)).astype(np.int64)


def _noise_for(variant, noise_draws, which, size, noise, K, rng):
    if variant is not Variant.GANE_O2:
        return None
    if noise_draws is None:
        if noise is None or rng is None:
            raise ValueError("GANE-O2 needs noise_draws, or a noise table plus an rng")
        if K < 1:
            raise ValueError("GANE-O2 needs K >= 1")
        return draw_noise(noise, size, K, rng)
    if isinstance(noise_draws, tuple):
        draws = noise_draws[which]
    else:
        draws = noise_draws
    draws = np.asarray(draws, dtype=np.int64)
    if draws.ndim != 2 or draws.shape[0] != size or draws.shape[1] < 1:
        raise ValueError(f"noise draws must have shape ({size}, K>=1), got {draws.shape}")
    return draws


def disc_scores(variant, phi: np.ndarray, batch, noise_draws=None) -> np.ndarray:
    """Per-edge discriminator value D(e) for the chosen variant.

    GANE: cosine similarity. GANE-O1: w * log sigma(u_i . u_j). GANE-O2:
    w * (log sigma(u_j . u_i) + sum_k log sigma(-u_k . u_i)) where
    ``noise_draws[e]`` lists the K noise vertices of edge e.
    """
    variant = Variant(variant)
    b = _as_batch(batch)
    if variant is Variant.GANE:
        return score_cosine(phi, b.src, b.dst)
    x = np.sum(phi[b.src] * phi[b.dst], axis=-1)
    d = log_sigmoid(x)
    if variant is Variant.GANE_O2:
        if noise_draws is None:
            raise ValueError("GANE-O2 scores need noise draws")
        y = np.einsum("mkd,md->mk", phi[noise_draws], phi[b.src])
        d = d + log_sigmoid(-y).sum(axis=1)
    return b.weight * d


def disc_loss(variant, phi: np.ndarray, real_batch, fake_batch, noise: AliasTable | None = None,
              K: int = 5, rng: np.random.Generator | None = None, noise_draws=None) -> float:
    """Monte Carlo critic loss: mean D(fake) - mean D(real).

    For GANE-O2 pass either ``noise_draws`` (one array shared by both
    batches, or a ``(real, fake)`` pair) or ``noise`` with ``rng``.
    """
    variant = Variant(variant)
    real, fake = _as_batch(real_batch), _as_batch(fake_batch)
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("discriminator loss needs nonempty real and fake batches")
    nr = _noise_for(variant, noise_draws, 0, len(real), noise, K, rng)
    nf = _noise_for(variant, noise_draws, 1, len(fake), noise, K, rng)
    return float(np.mean(disc_scores(variant, phi, fake, nf)) - np.mean(disc_scores(variant, phi, real, nr)))


def _score_grad_rows(variant, phi, b: EdgeBatch, coef: np.ndarray, draws):
    """Row indices and gradient rows of sum_e coef[e] * D(e)."""
    ui, uj = phi[b.src], phi[b.dst]
    if variant is Variant.GANE:
        ni = np.linalg.norm(ui, axis=1, keepdims=True)
        nj = np.linalg.norm(uj, axis=1, keepdims=True)
        if np.any(ni == 0) or np.any(nj == 0):
            raise UndefinedScoreError("cosine score undefined for a zero-norm embedding")
        cos = np.sum(ui * uj, axis=1, keepdims=True) / (ni * nj)
        c = coef[:, None]
        gi = c * (uj / (ni * nj) - cos * ui / ni**2)
        gj = c * (ui / (ni * nj) - cos * uj / nj**2)
        return [b.src, b.dst], [gi, gj]
    c = (coef * b.weight * _dlog_sigmoid(np.sum(ui * uj, axis=1)))[:, None]
    rows, vals = [b.src, b.dst], [c * uj, c * ui]
    if variant is Variant.GANE_O2:
        uk = phi[draws]  # (m, K, d)
        y = np.einsum("mkd,md->mk", uk, ui)
        # d/dy log sigma(-y) = -sigma(y), zero on the clamped part
        cn = -(coef * b.weight)[:, None] * _dlog_sigmoid(-y)
        rows += [b.src, draws.reshape(-1)]
        vals += [np.einsum("mk,mkd->md", cn, uk), (cn[..., None] * ui[:, None, :]).reshape(-1, phi.shape[1])]
    return rows, vals


def disc_grad(variant, phi: np.ndarray, real_batch, fake_batch, noise: AliasTable | None = None,
              K: int = 5, rng: np.random.Generator | None = None, noise_draws=None) -> SparseGrad:
    """Analytic gradient of :func:`disc_loss` with respect to ``phi``.

    Only rows touched by the batches (and noise draws) are present. When
    drawing noise internally, pass a fresh rng: draws are not shared with a
    previous :func:`disc_loss` call.
    """
    variant = Variant(variant)
    real, fake = _as_batch(real_batch), _as_batch(fake_batch)
    if len(real) == 0 or len(fake) == 0:
        raise ValueError("discriminator gradient needs nonempty real and fake batches")
    nr = _noise_for(variant, noise_draws, 0, len(real), noise, K, rng)
    nf = _noise_for(variant, noise_draws, 1, len(fake), noise, K, rng)
    rf, vf = _score_grad_rows(variant, phi, fake, np.full(len(fake), 1.0 / len(fake)), nf)
    rr, vr = _score_grad_rows(variant, phi, real, np.full(len(real), -1.0 / len(real)), nr)
    return SparseGrad.accumulate(np.concatenate(rf + rr), np.concatenate(vf + vr))


def _masked_logits(theta: np.ndarray, sources: np.ndarray) -> np.ndarray:
    logits = theta[sources] @ theta.T
    logits[np.arange(sources.size), sources] = -np.inf
    return logits


def gen_log_distributions(theta: np.ndarray, sources) -> np.ndarray:
    """Row-wise log p_theta(. | i) for each source, self-transition excluded."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    if theta.shape[0] < 2:
        raise ValueError("generator needs at least two vertices")
    logits = _masked_logits(theta, sources)
    top = logits.max(axis=1, keepdims=True)
    lse = top + np.log(np.exp(logits - top).sum(axis=1, keepdims=True))
    return logits - lse


def gen_distribution(theta: np.ndarray, i: int) -> np.ndarray:
    """Softmax over g_j . g_i with p(i | i) = 0."""
    return np.exp(gen_log_distributions(theta, [i])[0])


def gen_sample_batch(theta: np.ndarray, sources, M: int, rng: np.random.Generator,
                     net: Network | None = None) -> GeneratedEdges:
    """``M`` generated edges per source, flattened source-major.

    Edge weights come from ``net`` where the pair is observed and are
    :data:`UNOBSERVED_EDGE_WEIGHT` otherwise.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    logp = gen_log_distributions(theta, sources)
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random((sources.size, M)) * cdf[:, -1:]
    picks = (cdf[:, None, :] <= u[:, :, None]).sum(axis=2)
    np.minimum(picks, theta.shape[0] - 1, out=picks)
    # a zero-probability slot (the masked source) can only be hit by rounding
    src = np.repeat(sources, M)
    dst = picks.reshape(-1)
    bad = dst == src
    if np.any(bad):
        for k in np.flatnonzero(bad):
            row = logp[k // M]
            dst[k] = int(np.argmax(row))
    lp = logp[np.repeat(np.arange(sources.size), M), dst]
    if net is None:
        w = np.full(dst.size, UNOBSERVED_EDGE_WEIGHT)
    else:
        w = net.edge_weights(src, dst, default=UNOBSERVED_EDGE_WEIGHT)
    return GeneratedEdges(src, dst, w, logp=lp)


def gen_sample(theta: np.ndarray, i: int, M: int, rng: np.random.Generator,
               net: Network | None = None) -> GeneratedEdges:
    return gen_sample_batch(theta, [i], M, rng, net)


def gen_loss(fake_batch, phi: np.ndarray, variant, noise_draws=None) -> float:
    """Generator loss: negative mean critic value of the generated edges."""
    fake = _as_batch(fake_batch)
    if len(fake) == 0:
        raise ValueError("generator loss needs a nonempty batch")
    return float(-np.mean(disc_scores(variant, phi, fake, noise_draws)))


def log_prob_grad(theta: np.ndarray, i: int, j: int) -> np.ndarray:
    """Dense gradient of log p_theta(j | i) with respect to ``theta``."""
    p = gen_distribution(theta, i)
    g = np.outer(-p, theta[i])
    g[j] += theta[i]
    g[i] += theta[j] - p @ theta
    return g


def gen_policy_grad(theta: np.ndarray, fake_batch: GeneratedEdges, rewards) -> SparseGrad:
    """REINFORCE estimate -(1/N) sum_k rewards[k] * grad log p_theta(e_k).

    The softmax partition function couples every row, so the result covers
    all rows of ``theta``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    n_samples = len(fake_batch)
    if rewards.shape != (n_samples,):
        raise ValueError(f"got {rewards.size} rewards for {n_samples} generated edges")
    if n_samples == 0:
        raise ValueError("policy gradient needs a nonempty batch")
    src, dst = fake_batch.src, fake_batch.dst
    p = np.exp(gen_log_distributions(theta, src))
    # coef[k, v] = d log p(dst_k | src_k) / d logit_{src_k, v}, scaled by -r_k / N
    coef = -p
    coef[np.arange(n_samples), dst] += 1.0
    coef *= (-rewards / n_samples)[:, None]
    grad = coef.T @ theta[src]           # context rows
    np.add.at(grad, src, coef @ theta)   # source rows
    return SparseGrad.from_dense(grad)


# ---------------------------------------------------------------- export

def save_embeddings(path, emb: np.ndarray, names: Sequence[str], binary: bool = False) -> None:
    """Write embeddings as text (``|V| d`` header, 9 significant digits) or binary."""
    emb = np.asarray(emb, dtype=np.float64)
    if emb.shape[0] != len(names):
        raise ValueError("one name per embedding row required")
    if binary:
        blob = "\n".join(names).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(struct.pack("<QQQ", emb.shape[0], emb.shape[1], len(blob)))
            fh.write(emb.astype("<f8").tobytes(order="C"))
            fh.write(blob)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{emb.shape[0]} {emb.shape[1]}\n")
        for name, row in zip(names, emb):
            fh.write(name + " " + " ".join(f"{x:.9g}" for x in row) + "\n")


def load_embeddings(path) -> tuple[np.ndarray, list[str]]:
    """Read either export format; returns ``(matrix, names)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
        if head == BINARY_MAGIC:
            n, d, nbytes = struct.unpack("<QQQ", fh.read(24))
            emb = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).astype(np.float64)
            names = fh.read(nbytes).decode("utf-8").split("\n") if n else []
            return emb, names
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: bad embedding header")
        n, d = int(header[0]), int(header[1])
        names, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d} values")
            names.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(names) != n:
        raise ValueError(f"{path}: header promises {n} rows, found {len(names)}")
    return np.array(rows, dtype=np.float64).reshape(n, d), names
