"""PointInfoNCE contrastive loss over matched feature vectors, with its gradient.

For a match set ``M = [(i_1, j_1), ..., (i_n, j_n)]`` between feature maps
``A`` and ``B`` the loss is

    L = -sum_m log( exp(a_{i_m} . b_{j_m} / tau) / sum_n exp(a_{i_m} . b_{j_n} / tau) )

so each anchor's candidate pool is the set of positives of the whole match
set. ``pool="all"`` widens the pool to every row of ``B``;
``exclude_self=True`` drops the anchor's own positive from the denominator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatchSetError, InvalidTemperatureError

DEFAULT_TAU = 0.07


@dataclass
class FeatureMap:
    vectors: np.ndarray
    kind: str = "pixel"  # "pixel" (2-D features) or "point" (3-D features)
    unit_norm: bool = False

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError("feature map must be (N, F)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("features must be finite")
        if self.kind not in ("pixel", "point"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.unit_norm:
            norms = np.linalg.norm(self.vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("unit_norm set but vectors are not unit length")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def normalized(self) -> "FeatureMap":
        v = self.vectors / np.linalg.norm(self.vectors, axis=1, keepdims=True)
        return FeatureMap(v, self.kind, unit_norm=True)


def _vectors(x) -> np.ndarray:
    return x.vectors if isinstance(x, FeatureMap) else np.asarray(x, dtype=np.float64)


def _matches(M, n_a: int, n_b: int) -> np.ndarray:
    M = np.asarray(M, dtype=np.int64).reshape(-1, 2)
    if len(M) == 0:
        raise EmptyMatchSetError("match set is empty")
    if M[:, 0].min() < 0 or M[:, 0].max() >= n_a or M[:, 1].min() < 0 or M[:, 1].max() >= n_b:
        raise IndexError("match index out of range")
    return M


def _logits(A, B, M, tau, pool):
    if not tau > 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    if pool not in ("matches", "all"):
        raise ValueError(f"unknown pool {pool!r}")
    A, B = _vectors(A), _vectors(B)
    M = _matches(M, len(A), len(B))
    cols = M[:, 1] if pool == "matches" else np.arange(len(B))
    Z = A[M[:, 0]] @ B[cols].T / tau
    if pool == "matches":
        pos = np.arange(len(M))
    else:
        pos = M[:, 1]
    return A, B, M, cols, Z, pos


def _log_softmax_terms(Z, pos, exclude_self):
    rows = np.arange(len(Z))
    mask = np.ones_like(Z, dtype=bool)
    if exclude_self:
        mask[rows, pos] = False
        if not mask.any(axis=1).all():
            raise EmptyMatchSetError("excluding self leaves an empty candidate pool")
    Zm = np.where(mask, Z, -np.inf)
    zmax = Zm.max(axis=1, keepdims=True)
    E = np.where(mask, np.exp(Zm - zmax), 0.0)
    # summing sorted rows makes the result independent of pool order
    S = np.sort(E, axis=1).sum(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(S[:, 0])
    return lse, E / S


def point_info_nce(
    A, B, M, tau: float = DEFAULT_TAU, pool: str = "matches", exclude_self: bool = False
) -> float:
    """PointInfoNCE loss (summed over the match set)."""
    _, _, _, _, Z, pos = _logits(A, B, M, tau, pool)
    lse, _ = _log_softmax_terms(Z, pos, exclude_self)
    return math.fsum(lse - Z[np.arange(len(Z)), pos])


def point_info_nce_grad(
    A, B, M, tau: float = DEFAULT_TAU, pool: str = "matches", exclude_self: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`point_info_nce` with respect to every row of ``A`` and ``B``."""
    A, B, M, cols, Z, pos = _logits(A, B, M, tau, pool)
    _, P = _log_softmax_terms(Z, pos, exclude_self)
    G = P.copy()
    G[np.arange(len(G)), pos] -= 1.0
    G /= tau
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    np.add.at(gA, M[:, 0], G @ B[cols])
    np.add.at(gB, cols, G.T @ A[M[:, 0]])
    return gA, gB


def combined_loss(
    l_gcvi: float, l_vsag: float, w_gcvi: float = 1.0, w_vsag: float = 1.0
) -> float:
    """Weighted sum of the view-invariance and view-scene alignment losses."""
    if w_gcvi < 0 or w_vsag < 0:
        raise ValueError("loss weights must be non-negative")
    return w_gcvi * l_gcvi + w_vsag * l_vsag


def numeric_grad(
    A, B, M, tau: float = DEFAULT_TAU, pool: str = "matches", exclude_self: bool = False, h: float = 1e-6
) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of :func:`point_info_nce`, entry by entry."""
    A = np.array(_vectors(A), dtype=np.float64)
    B = np.array(_vectors(B), dtype=np.float64)
    out = []
    for X in (A, B):
        g = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            keep = X[idx]
            X[idx] = keep + h
            up = point_info_nce(A, B, M, tau, pool, exclude_self)
            X[idx] = keep - h
            down = point_info_nce(A, B, M, tau, pool, exclude_self)
            X[idx] = keep
            g[idx] = (up - down) / (2.0 * h)
        out.append(g)
    return out[0], out[1]


def gradient_check(
    A, B, M, tau: float = DEFAULT_TAU, pool: str = "matches", exclude_self: bool = False,
    h: float = 1e-6,
) -> float:
    """Relative error ``|g - n| / max(|g|, |n|)`` between analytic and numeric gradients.

    Norms are Frobenius norms over all rows of ``A`` and ``B`` together;
    entrywise ratios are dominated by finite-difference round-off wherever
    the true gradient is near zero.
    """
    ga, gb = point_info_nce_grad(A, B, M, tau, pool, exclude_self)
    na, nb = numeric_grad(A, B, M, tau, pool, exclude_self, h)
    g = np.concatenate([ga.ravel(), gb.ravel()])
    n = np.concatenate([na.ravel(), nb.ravel()])
    scale = max(np.linalg.norm(g), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(g - n) / scale)
