"""The adversarial training loop: several critic steps per generator step."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import model
from .graph import Network, noise_distribution, sample_edges
from .model import Variant, disc_grad, disc_loss, disc_scores, gen_policy_grad, gen_sample_batch
from .optimizer import RmsPropState, clip_params, rmsprop_step

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    ``batch`` is the number of real edges (and of generator source
    vertices) per step, ``fanout`` the number of generated edges per
    source, ``disc_steps`` the critic updates per generator update.
    ``convergence_tol <= 0`` disables early stopping. ``gen_lr`` falls back
    to ``lr``.
    """

    lr: float = 5e-4
    clip: float = 0.01
    batch: int = 64
    fanout: int = 5
    disc_steps: int = 5
    neg_k: int = 5
    dim: int = 128
    variant: str = "gane"
    max_iters: int = 10000
    seed: int = 0
    eval_every: int = 0
    convergence_window: int = 50
    convergence_tol: float = 1e-3
    gen_lr: float | None = None
    weighted_sampling: bool = True
    debug: bool = False
    # LINE baseline only
    line_lr: float = 0.025

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = {
            "batch": self.batch >= 1, "fanout": self.fanout >= 1,
            "disc_steps": self.disc_steps >= 1, "dim": self.dim >= 1,
            "clip": self.clip > 0, "lr": self.lr > 0, "neg_k": self.neg_k >= 1,
            "max_iters": self.max_iters >= 0, "eval_every": self.eval_every >= 0,
            "gen_lr": self.gen_lr is None or self.gen_lr > 0, "line_lr": self.line_lr > 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid TrainConfig values: {', '.join(bad)}")
        if self.convergence_tol > 0 and self.convergence_window < 2:
            raise ValueError("convergence_window must be >= 2")
        Variant(self.variant)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, it, disc_loss, gen_loss, elapsed_ms, metrics=None):
        if self.records and it <= self.records[-1]["iter"]:
            raise ValueError("trace iterations must increase")
        self.records.append({"iter": it, "disc_loss": disc_loss, "gen_loss": gen_loss,
                             "elapsed_ms": elapsed_ms, "metrics": dict(metrics or {})})

    def __len__(self):
        return len(self.records)

    @property
    def disc_losses(self) -> np.ndarray:
        return np.array([r["disc_loss"] for r in self.records])

    @property
    def gen_losses(self) -> np.ndarray:
        return np.array([r["gen_loss"] for r in self.records])

    def metric(self, name) -> tuple[np.ndarray, np.ndarray]:
        """Iterations and values at which ``name`` was evaluated."""
        rows = [(r["iter"], r["metrics"][name]) for r in self.records if name in r["metrics"]]
        if not rows:
            return np.empty(0, dtype=int), np.empty(0)
        it, val = zip(*rows)
        return np.array(it), np.array(val)

    def write_csv(self, path, include_time: bool = True) -> None:
        keys = sorted({k for r in self.records for k in r["metrics"]})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "disc_loss", "gen_loss", "elapsed_ms", *keys])
            for r in self.records:
                ms = f"{r['elapsed_ms']:.3f}" if include_time else ""
                w.writerow([r["iter"], repr(r["disc_loss"]), repr(r["gen_loss"]), ms,
                            *(repr(r["metrics"][k]) if k in r["metrics"] else "" for k in keys)])


@dataclass
class TrainResult:
    theta: np.ndarray
    phi: np.ndarray
    trace: TrainTrace
    phi_state: RmsPropState
    theta_state: RmsPropState
    converged: bool = False


def check_convergence(losses, window: int, tol: float) -> bool:
    """True once the loss average over the last ``window`` values has settled.

    The window is split into an older and a newer half; converged means the
    two half-means differ by less than ``tol`` relative to the window's mean
    absolute loss. Traces shorter than the window never converge.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    x = np.asarray(losses, dtype=np.float64)
    if x.size < window:
        return False
    w = x[-window:]
    half = window // 2
    change = abs(w[half:].mean() - w[:half].mean())
    scale = np.abs(w).mean()
    if scale == 0:
        return True
    return bool(change / scale < tol)


def make_rngs(seed: int, n: int = 3) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def train(net: Network, cfg: TrainConfig,
          eval_fn: Callable[[np.ndarray, np.ndarray], dict] | None = None) -> TrainResult:
    """Run adversarial training on ``net``.

    Each iteration performs ``cfg.disc_steps`` critic updates (real edges
    against edges generated from the same source vertices, RMSProp, then
    clipping of ``phi``) followed by one REINFORCE update of ``theta`` on
    ``cfg.fanout`` generated edges for each of ``cfg.batch`` uniformly drawn
    sources. ``eval_fn(theta, phi)`` is called every ``cfg.eval_every``
    iterations and its metrics land in the trace.
    """
    cfg.validate()
    variant = Variant(cfg.variant)
    n, d = net.n_vertices, cfg.dim
    if net.n_edges == 0 or n < 2:
        raise ValueError("training needs at least one edge")
    init_rng, rng = make_rngs(cfg.seed, 2)
    phi = model.init_embedding(n, d, init_rng)
    theta = model.init_embedding(n, d, init_rng)
    phi_state = RmsPropState(phi.shape, lr=cfg.lr)
    theta_state = RmsPropState(theta.shape, lr=cfg.gen_lr or cfg.lr)
    noise = noise_distribution(net) if variant is Variant.GANE_O2 else None
    trace = TrainTrace()
    m = cfg.batch
    start = time.perf_counter()
    converged = False
    d_hist: list[float] = []

    for it in range(1, cfg.max_iters + 1):
        d_losses = []
        for _ in range(cfg.disc_steps):
            real = sample_edges(net, m, rng, weighted=cfg.weighted_sampling, orient=True)
            fake = gen_sample_batch(theta, real.src, 1, rng, net)
            draws = model.draw_noise(noise, m, cfg.neg_k, rng) if noise is not None else None
            d_losses.append(disc_loss(variant, phi, real, fake, noise_draws=draws))
            rmsprop_step(phi, disc_grad(variant, phi, real, fake, noise_draws=draws), phi_state)
            clip_params(phi, cfg.clip)
            if cfg.debug:
                assert np.abs(phi).max() <= cfg.clip, "clipping invariant violated"

        sources = rng.integers(0, n, size=m)
        fake = gen_sample_batch(theta, sources, cfg.fanout, rng, net)
        draws = model.draw_noise(noise, len(fake), cfg.neg_k, rng) if noise is not None else None
        rewards = disc_scores(variant, phi, fake, draws)
        g_loss = float(-rewards.mean())
        rmsprop_step(theta, gen_policy_grad(theta, fake, rewards), theta_state)

        d_loss = float(np.mean(d_losses))
        metrics = None
        if eval_fn is not None and cfg.eval_every and it % cfg.eval_every == 0:
            metrics = eval_fn(theta, phi)
        trace.append(it, d_loss, g_loss, (time.perf_counter() - start) * 1e3, metrics)
        if not (np.isfinite(d_loss) and np.isfinite(g_loss)
                and np.all(np.isfinite(phi)) and np.all(np.isfinite(theta))):
            raise TrainingDiverged(f"non-finite loss or parameters at iteration {it}", trace)
        d_hist.append(d_loss)
        if cfg.convergence_tol > 0 and check_convergence(d_hist[-cfg.convergence_window:],
                                                         cfg.convergence_window, cfg.convergence_tol):
            log.info("converged at iteration %d", it)
            converged = True
            break

    return TrainResult(theta, phi, trace, phi_state, theta_state, converged)
