"""Discriminability and intensity losses over a minibatch of projected quadruplets.

Projected embeddings are stacked as ``Z = [anchors; positives; hard negatives]``
(3B rows). Every loss is a function of the pairwise cosine-similarity matrix
``S`` and Euclidean-distance matrix ``D`` of those rows. Each loss returns its
value together with dL/dS and dL/dD; :func:`grad_embeddings` maps those back
onto ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

DIST_FLOOR = 1e-6
_ZERO_DIST = 1e-300


@dataclass(frozen=True)
class ProjectedBatch:
    anchors: np.ndarray
    positives: np.ndarray
    hard: np.ndarray

    def __post_init__(self):
        if not (self.anchors.shape == self.positives.shape == self.hard.shape):
            raise ValueError("anchor, positive and hard-negative blocks must share a shape")
        if self.anchors.shape[0] < 2:
            raise ValueError("a batch needs at least two quadruplets")

    @property
    def size(self) -> int:
        return self.anchors.shape[0]

    def stacked(self) -> np.ndarray:
        return np.vstack([self.anchors, self.positives, self.hard])

    @classmethod
    def from_stacked(cls, z: np.ndarray) -> "ProjectedBatch":
        b = z.shape[0] // 3
        return cls(z[:b], z[b:2 * b], z[2 * b:])


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_d: float
    l_nd: float
    l_nc: float
    p_max: float

    @property
    def total(self) -> float:
        return self.l_c + self.l_d + self.l_nd + self.l_nc

    def as_row(self) -> dict[str, float]:
        return {"l_c": self.l_c, "l_d": self.l_d, "l_nd": self.l_nd, "l_nc": self.l_nc,
                "total": self.total, "p_max": self.p_max}


def cos_sim(x: np.ndarray, y: np.ndarray) -> float:
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def l2_dist(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(x) - np.asarray(y)))


def pairwise(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cosine-similarity and distance matrices of the rows of ``z``."""
    norms = np.linalg.norm(z, axis=1)
    zhat = z / np.where(norms > 0, norms, 1.0)[:, None]
    s = zhat @ zhat.T
    diff = z[:, None, :] - z[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    return s, d


def weak_columns(b: int) -> np.ndarray:
    """Row i: stacked indices of anchor i's weak negatives (other positives, then other anchors)."""
    cols = np.empty((b, 2 * (b - 1)), dtype=np.intp)
    for i in range(b):
        others = [j for j in range(b) if j != i]
        cols[i] = [b + j for j in others] + others
    return cols


def _cross_entropy(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy with the target in column 0, and its logit gradient."""
    # shift by the target first: with floored distances the logits reach 1e6
    value = float(np.sum(logsumexp(logits - logits[:, :1], axis=1)))
    g = softmax(logits, axis=1)
    g[:, 0] -= 1.0
    return value, g


def _groups(b: int, target_offset: int) -> np.ndarray:
    return np.hstack([(target_offset + np.arange(b))[:, None], weak_columns(b)])


def loss_lc(s: np.ndarray, b: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy of each anchor's positive against its weak negatives, on cosine logits."""
    cols = _groups(b, b)
    rows = np.arange(b)[:, None]
    value, g = _cross_entropy(s[rows, cols])
    gs = np.zeros_like(s)
    np.add.at(gs, (np.broadcast_to(rows, cols.shape), cols), g)
    return value, gs


def loss_ld(d: np.ndarray, b: int) -> tuple[float, np.ndarray]:
    """As :func:`loss_lc` with inverse (floored) distances as logits."""
    cols = _groups(b, b)
    rows = np.arange(b)[:, None]
    dist = d[rows, cols]
    active = dist > DIST_FLOOR
    floored = np.where(active, dist, DIST_FLOOR)
    value, g = _cross_entropy(1.0 / floored)
    gd = np.zeros_like(d)
    np.add.at(gd, (np.broadcast_to(rows, cols.shape), cols), np.where(active, -g / floored ** 2, 0.0))
    return value, gd


def loss_lnd(d: np.ndarray, b: int) -> tuple[float, np.ndarray]:
    """Negative summed distance between each hard negative and the weak negatives of its anchor."""
    weak = weak_columns(b)
    hard = (2 * b + np.arange(b))[:, None]
    hard = np.broadcast_to(hard, weak.shape)
    value = -float(np.sum(d[weak, hard]))
    gd = np.zeros_like(d)
    np.add.at(gd, (weak, hard), -1.0)
    return value, gd


def loss_lnc(s: np.ndarray, b: int, p_max: float | None = None) -> tuple[float, float, np.ndarray]:
    """Cross-entropy favouring each anchor's hard negative, its similarity capped at ``p_max``.

    ``p_max`` defaults to the largest anchor-positive similarity in the batch
    and is always treated as a constant.
    """
    if p_max is None:
        p_max = float(np.max(s[np.arange(b), b + np.arange(b)]))
    cols = _groups(b, 2 * b)
    rows = np.arange(b)[:, None]
    logits = s[rows, cols].copy()
    capped = logits[:, 0] > p_max
    logits[capped, 0] = p_max
    value, g = _cross_entropy(logits)
    g[capped, 0] = 0.0
    gs = np.zeros_like(s)
    np.add.at(gs, (np.broadcast_to(rows, cols.shape), cols), g)
    return value, p_max, gs


def grad_embeddings(z: np.ndarray, gs: np.ndarray, gd: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Chain dL/dS and dL/dD back to the rows of ``z``."""
    norms = np.linalg.norm(z, axis=1)
    nonzero = norms > 0
    safe = np.where(nonzero, norms, 1.0)[:, None]
    zhat = z / safe
    g_hat = (gs + gs.T) @ zhat
    g_from_s = (g_hat - np.sum(g_hat * zhat, axis=1, keepdims=True) * zhat) / safe
    g_from_s[~nonzero] = 0.0

    m = np.where(d > _ZERO_DIST, (gd + gd.T) / np.where(d > _ZERO_DIST, d, 1.0), 0.0)
    np.fill_diagonal(m, 0.0)
    g_from_d = m.sum(axis=1)[:, None] * z - m @ z
    return g_from_s + g_from_d


def loss_total(batch: ProjectedBatch | np.ndarray, p_max: float | None = None,
               need_grad: bool = False) -> LossBreakdown | tuple[LossBreakdown, np.ndarray]:
    """All four terms and their unweighted sum; optionally dL/dZ for the stacked batch."""
    z = batch.stacked() if isinstance(batch, ProjectedBatch) else np.asarray(batch, dtype=np.float64)
    b = z.shape[0] // 3
    if b < 2 or z.shape[0] != 3 * b:
        raise ValueError(f"stacked batch must have 3B rows with B >= 2, got {z.shape[0]}")
    s, d = pairwise(z)
    l_c, gs_c = loss_lc(s, b)
    l_d, gd_d = loss_ld(d, b)
    l_nd, gd_nd = loss_lnd(d, b)
    l_nc, p_max, gs_nc = loss_lnc(s, b, p_max)
    out = LossBreakdown(l_c, l_d, l_nd, l_nc, p_max)
    if not need_grad:
        return out
    return out, grad_embeddings(z, gs_c + gs_nc, gd_d + gd_nd, d)
