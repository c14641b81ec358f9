"""Projection head: two ReLU layers and a linear projection, with manual backprop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-12
PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wp", "bp")


class ShapeError(ValueError):
    pass


@dataclass
class AcxHeadParams:
    W1: np.ndarray  # (hidden, dim_in)
    b1: np.ndarray
    W2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray
    Wp: np.ndarray  # (dim_out, hidden)
    bp: np.ndarray
    normalize_output: bool = True

    def __post_init__(self):
        h, d_in = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape != (h, h) or self.b2.shape != (h,):
            raise ShapeError("hidden layer shapes are inconsistent")
        if self.Wp.ndim != 2 or self.Wp.shape[1] != h or self.bp.shape != (self.Wp.shape[0],):
            raise ShapeError("projection shapes are inconsistent")

    @classmethod
    def init(cls, dim_in: int, hidden: int = 512, dim_out: int = 1024, seed: int = 0,
             normalize_output: bool = True) -> "AcxHeadParams":
        """He initialization (std sqrt(2 / fan_in)), zero biases."""
        rng = np.random.default_rng([seed, 0xAC7])
        he = lambda fan_out, fan_in: rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        return cls(he(hidden, dim_in), np.zeros(hidden), he(hidden, hidden), np.zeros(hidden),
                   he(dim_out, hidden), np.zeros(dim_out), normalize_output)

    @property
    def dim_in(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def dim_out(self) -> int:
        return self.Wp.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def copy(self) -> "AcxHeadParams":
        return AcxHeadParams(*(a.copy() for a in self.arrays().values()), self.normalize_output)


@dataclass
class HeadCache:
    x: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    h2: np.ndarray
    q: np.ndarray
    q_norm: np.ndarray
    out: np.ndarray


def forward(params: AcxHeadParams, x: np.ndarray) -> tuple[np.ndarray, HeadCache]:
    """Batched forward pass over rows of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.dim_in:
        raise ShapeError(f"expected input dim {params.dim_in}, got {x.shape[1]}")
    a1 = x @ params.W1.T + params.b1
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ params.W2.T + params.b2
    h2 = np.maximum(a2, 0.0)
    q = h2 @ params.Wp.T + params.bp
    q_norm = np.linalg.norm(q, axis=1)
    out = q / np.maximum(q_norm, NORM_EPS)[:, None] if params.normalize_output else q
    return out, HeadCache(x, a1, h1, a2, h2, q, q_norm, out)


def head_forward(params: AcxHeadParams, e: np.ndarray) -> np.ndarray:
    """Embed a single encoder vector."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1:
        raise ShapeError("head_forward takes one vector; use forward() for batches")
    return forward(params, e[None, :])[0][0]


def backward(params: AcxHeadParams, cache: HeadCache, grad_out: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given dL/d(output) for every row of the cached batch.

    No gradient is produced for the inputs: the encoder upstream is frozen.
    """
    g = grad_out
    if params.normalize_output:
        big = cache.q_norm > NORM_EPS
        u = cache.out
        radial = np.sum(g * u, axis=1, keepdims=True)
        dq = np.where(big[:, None], (g - radial * u) / np.where(big, cache.q_norm, 1.0)[:, None], g / NORM_EPS)
    else:
        dq = g
    grads = {"Wp": dq.T @ cache.h2, "bp": dq.sum(axis=0)}
    da2 = (dq @ params.Wp) * (cache.a2 > 0)
    grads["W2"] = da2.T @ cache.h1
    grads["b2"] = da2.sum(axis=0)
    da1 = (da2 @ params.W2) * (cache.a1 > 0)
    grads["W1"] = da1.T @ cache.x
    grads["b1"] = da1.sum(axis=0)
    return {name: grads[name] for name in PARAM_NAMES}
