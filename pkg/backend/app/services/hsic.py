"""Biased empirical HSIC between two batched feature sets.

HSIC(X, Y) = (m - 1)^-2 * trace(K H L H), with K, L gaussian Gram matrices of
X and Y and H the centering matrix. Everything here is a pure function of its
inputs and differentiable in X and Y.
"""
import logging
import math
import statistics
from typing import Sequence, Union

import numpy as np
import torch

from app.schemas import BandwidthPolicy, KernelFamily, KernelSpec

logger = logging.getLogger(__name__)

FALLBACK_BANDWIDTH = 1.0
ORACLE_MAX_BATCH = 64

ArrayLike = Union[torch.Tensor, np.ndarray, Sequence[Sequence[float]]]


def _as_batch(X: ArrayLike, name: str = "X") -> torch.Tensor:
    if not isinstance(X, torch.Tensor):
        X = torch.as_tensor(np.asarray(X, dtype=np.float64))
    if X.dim() == 1:
        X = X.unsqueeze(1)
    if X.dim() != 2:
        raise ValueError(f"{name} must be an m x d matrix, got shape {tuple(X.shape)}")
    if X.shape[0] < 2:
        raise ValueError(f"{name} needs at least 2 samples, got {X.shape[0]}")
    if not torch.isfinite(X).all():
        raise ValueError(f"{name} contains non-finite entries")
    return X


def pairwise_sq_distances(X: torch.Tensor) -> torch.Tensor:
    # differences rather than the expanded norm so the diagonal is exactly zero
    diff = X.unsqueeze(1) - X.unsqueeze(0)
    return (diff * diff).sum(dim=-1)


def resolve_bandwidth(X: ArrayLike, kernel: KernelSpec) -> torch.Tensor:
    """Bandwidth sigma for `kernel` on batch X, as a 0-dim tensor.

    The median heuristic takes the (lower) median of strictly positive pairwise
    distances and stays attached to the graph.
    """
    X = _as_batch(X)
    if kernel.bandwidth_policy == BandwidthPolicy.FIXED:
        return torch.tensor(float(kernel.bandwidth), dtype=X.dtype, device=X.device)

    sq = pairwise_sq_distances(X)
    m = sq.shape[0]
    iu = torch.triu_indices(m, m, offset=1, device=X.device)
    upper = sq[iu[0], iu[1]]
    positive = upper[upper > 0]
    if positive.numel() == 0:
        logger.warning("median heuristic on a batch of identical points; using bandwidth 1.0")
        return torch.tensor(FALLBACK_BANDWIDTH, dtype=X.dtype, device=X.device)
    return positive.sqrt().median()


def gram_matrix(X: ArrayLike, kernel: KernelSpec) -> torch.Tensor:
    X = _as_batch(X)
    if kernel.family != KernelFamily.GAUSSIAN:
        raise ValueError(f"unsupported kernel family: {kernel.family}")
    sigma = resolve_bandwidth(X, kernel)
    return torch.exp(-pairwise_sq_distances(X) / (2.0 * sigma * sigma))


def centering_matrix(m: int, dtype: torch.dtype = torch.float64, device=None) -> torch.Tensor:
    if m < 2:
        raise ValueError(f"centering matrix needs m >= 2, got {m}")
    eye = torch.eye(m, dtype=dtype, device=device)
    return eye - torch.full((m, m), 1.0 / m, dtype=dtype, device=device)


def double_center(K: torch.Tensor) -> torch.Tensor:
    """H K H for the centering matrix H, computed with row/column means.

    A constant K centers to exactly zero.
    """
    return K - K.mean(dim=0, keepdim=True) - K.mean(dim=1, keepdim=True) + K.mean()


def hsic_biased(
    X: ArrayLike,
    Y: ArrayLike,
    kx: KernelSpec = KernelSpec(),
    ky: KernelSpec = KernelSpec(),
) -> torch.Tensor:
    X = _as_batch(X, "X")
    Y = _as_batch(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"batch size mismatch: {X.shape[0]} vs {Y.shape[0]}")
    if X.dtype != Y.dtype:
        Y = Y.to(X.dtype)

    m = X.shape[0]
    K = double_center(gram_matrix(X, kx))
    L = double_center(gram_matrix(Y, ky))
    # trace(K H L H) = sum((H K H) * (H L H)) since H is idempotent
    return (K * L).sum() / float((m - 1) ** 2)


def _oracle_kernel(rows: list[list[float]], kernel: KernelSpec) -> list[list[float]]:
    m = len(rows)
    sq = [[sum((a - b) ** 2 for a, b in zip(rows[i], rows[j])) for j in range(m)] for i in range(m)]
    if kernel.bandwidth_policy == BandwidthPolicy.FIXED:
        sigma = float(kernel.bandwidth)
    else:
        positive = [math.sqrt(sq[i][j]) for i in range(m) for j in range(i + 1, m) if sq[i][j] > 0]
        sigma = statistics.median_low(positive) if positive else FALLBACK_BANDWIDTH
    return [[math.exp(-sq[i][j] / (2.0 * sigma * sigma)) for j in range(m)] for i in range(m)]


def hsic_oracle(X: ArrayLike, Y: ArrayLike, kx: KernelSpec = KernelSpec(), ky: KernelSpec = KernelSpec()) -> float:
    """Same estimator as `hsic_biased`, written as explicit sums. Test scale only."""
    X = _as_batch(X, "X").detach().double().cpu().tolist()
    Y = _as_batch(Y, "Y").detach().double().cpu().tolist()
    m = len(X)
    if m != len(Y):
        raise ValueError(f"batch size mismatch: {m} vs {len(Y)}")
    if m > ORACLE_MAX_BATCH:
        raise ValueError(f"oracle is limited to m <= {ORACLE_MAX_BATCH}")

    K = _oracle_kernel(X, kx)
    L = _oracle_kernel(Y, ky)

    # trace(K H L H) with H = I - 1/m expands into these three sums
    total = 0.0
    for i in range(m):
        for j in range(m):
            total += K[i][j] * L[i][j]

    cross = 0.0
    for i in range(m):
        k_row = 0.0
        l_row = 0.0
        for j in range(m):
            k_row += K[i][j]
            l_row += L[i][j]
        cross += k_row * l_row

    k_sum = 0.0
    l_sum = 0.0
    for i in range(m):
        for j in range(m):
            k_sum += K[i][j]
            l_sum += L[i][j]

    value = total - 2.0 * cross / m + k_sum * l_sum / (m * m)
    return value / float((m - 1) ** 2)
