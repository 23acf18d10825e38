"""Style voting: harmonious pixels vote for pixels with similar style.

Shapes are batched: features ``[N,C,h,w]``, masks ``[N,1,h,w]``, similarity
matrices ``[N,n,n]`` with ``n = h*w`` in row-major pixel order.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    ShapeError, Tensor, as_tensor, l2_normalize, matmul, reshape, safe_div, transpose, tsum,
)


def _pixel_rows(features):
    n, c, h, w = features.shape
    return transpose(reshape(features, (n, c, h * w)), (0, 2, 1))


def style_similarity_matrix(features, eps=1e-8):
    """V[p1, p2] = cos(F_p1, F_p2) via normalized rows times their transpose."""
    features = getattr(features, "features", features)
    fhat = l2_normalize(_pixel_rows(features), axis=-1, eps=eps)
    return matmul(fhat, transpose(fhat, (0, 2, 1)))


def semantic_similarity_matrix(sem_features, eps=1e-8):
    """Pairwise cosine of pixel-level semantic features ``[N,Cs,h,w]`` (constant)."""
    f = np.asarray(getattr(sem_features, "data", sem_features), dtype=np.float64)
    n, c, h, w = f.shape
    rows = f.reshape(n, c, h * w).transpose(0, 2, 1)
    norm = np.maximum(np.linalg.norm(rows, axis=-1, keepdims=True), eps)
    rows = rows / norm
    return rows @ rows.transpose(0, 2, 1)


def one_hot_semantics(labels, num_classes, factor):
    """Integer label maps ``[N,H,W]`` -> one-hot average-pooled ``[N,L,H/f,W/f]``."""
    labels = np.asarray(labels)
    n, h, w = labels.shape
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"semantic labels must lie in [0, {num_classes})")
    onehot = (labels[:, None] == np.arange(num_classes)[None, :, None, None]).astype(np.float64)
    return onehot.reshape(n, num_classes, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


def voter_weights(aux_mask):
    """1 - M for every voter, shaped ``[N,n,1]`` so V @ w sums over voters."""
    aux_mask = as_tensor(aux_mask)
    n = aux_mask.shape[0]
    return reshape(1.0 - aux_mask, (n, -1, 1))


def vote(v, aux_mask, sem=None):
    """S[p1] = sum_p2 (1 - M[p2]) * (Wsem[p1,p2]) * V[p1,p2], shaped like ``aux_mask``."""
    aux_mask = as_tensor(aux_mask)
    nb, _, h, w = aux_mask.shape
    n = h * w
    if v.shape != (nb, n, n):
        raise ShapeError(f"vote: similarity matrix is {v.shape}, mask implies {(nb, n, n)}")
    weighted = v
    if sem is not None:
        sem = as_tensor(sem)
        if sem.shape != v.shape:
            raise ShapeError(f"vote: semantic matrix is {sem.shape}, expected {v.shape}")
        weighted = v * sem
    s = matmul(weighted, voter_weights(aux_mask))
    return reshape(s, (nb, 1, h, w))


def voter_mass(aux_mask):
    aux_mask = as_tensor(aux_mask)
    return tsum(1.0 - aux_mask, axis=(1, 2, 3), keepdims=True)


def normalize_score_map(scores, aux_mask, eps=1e-8):
    """Divide by total voter mass; zeros where the mass is below ``eps``."""
    return safe_div(scores, voter_mass(aux_mask), eps)
