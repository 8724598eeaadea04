"""RMSProp and plain SGD on row-sparse gradients, plus weight clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import SparseGrad


class OptimizerError(FloatingPointError):
    pass


@dataclass
class RmsPropState:
    """Per-entry running mean of squared gradients.

    Only rows present in a gradient decay and accumulate; rows a batch
    never touches keep their state.
    """

    shape: tuple
    lr: float = 5e-4
    decay: float = 0.9
    eps: float = 1e-8
    accum: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        self.shape = tuple(self.shape)
        if self.accum is None:
            self.accum = np.zeros(self.shape)
        elif self.accum.shape != self.shape:
            raise ValueError("accumulator shape mismatch")

    def save(self, path) -> None:
        np.savez(path, accum=self.accum, hyper=np.array([self.lr, self.decay, self.eps]))

    @classmethod
    def load(cls, path) -> "RmsPropState":
        with np.load(path) as z:
            lr, decay, eps = z["hyper"]
            accum = z["accum"].copy()
        return cls(accum.shape, float(lr), float(decay), float(eps), accum)


def _rows_values(grads, shape):
    if isinstance(grads, SparseGrad):
        return grads.rows, grads.values
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != tuple(shape):
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {tuple(shape)}")
    return slice(None), grads


def rmsprop_step(params: np.ndarray, grads, state: RmsPropState) -> None:
    """In-place RMSProp update on the rows carried by ``grads``.

    accum <- decay * accum + (1 - decay) * g**2
    param <- param - lr * g / sqrt(accum + eps)
    """
    if params.shape != state.shape:
        raise ValueError("optimizer state does not match parameter shape")
    rows, g = _rows_values(grads, params.shape)
    if not np.all(np.isfinite(g)):
        raise OptimizerError("non-finite gradient; update rejected")
    acc = state.decay * state.accum[rows] + (1.0 - state.decay) * g * g
    state.accum[rows] = acc
    params[rows] -= state.lr * g / np.sqrt(acc + state.eps)


def sgd_step(params: np.ndarray, grads, lr: float) -> None:
    rows, g = _rows_values(grads, params.shape)
    if not np.all(np.isfinite(g)):
        raise OptimizerError("non-finite gradient; update rejected")
    if isinstance(rows, np.ndarray):
        np.subtract.at(params, rows, lr * g)
    else:
        params -= lr * g


def clip_params(params: np.ndarray, c: float) -> None:
    """Clamp every entry into [-c, c] in place."""
    if not c > 0:
        raise ValueError("clipping bound must be positive")
    np.clip(params, -c, c, out=params)
