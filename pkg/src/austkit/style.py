"""Style encoder and the inter/intra-region style feature loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Conv2dParams, Module
from .tensor import Tensor, l2_normalize, matmul, relu, reshape, tsum, transpose

DEFAULT_MARGIN = 0.5


class TinyEncoder(Module):
    """Four 3x3 conv blocks, channels 16-32-64-C, strides 1,2,2,2.

    ``final_relu=False`` leaves the last block linear so the style features
    can point in opposite directions.
    """

    def __init__(self, blocks, final_relu=True):
        self.blocks = list(blocks)
        self.final_relu = final_relu

    @classmethod
    def init(cls, rng, in_ch=3, widths=(16, 32, 64), out_ch=32, final_relu=True):
        chans = [in_ch, *widths, out_ch]
        strides = (1, 2, 2, 2)
        blocks = [Conv2dParams.init(rng, chans[i], chans[i + 1], 3, stride=strides[i], padding=1)
                  for i in range(4)]
        return cls(blocks, final_relu)

    @property
    def channels(self):
        return [b.out_channels for b in self.blocks]

    def __call__(self, x):
        """Feature maps at 1, 1/2, 1/4 and 1/8 resolution."""
        h, w = x.shape[-2:]
        if h % 8 or w % 8:
            raise ValueError(f"encoder input {h}x{w} must be divisible by 8")
        feats = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < len(self.blocks) - 1 or self.final_relu:
                x = relu(x)
            feats.append(x)
        return feats


@dataclass
class StyleFeatureMap:
    features: Tensor  # [N,C,h,w]

    @property
    def channels(self):
        return self.features.shape[1]


def encode_style(mapped, encoder):
    """Run the style encoder on a color-mapped image; returns (F^sty, all scales)."""
    x = mapped.pixels
    if x.ndim == 3:
        x = reshape(x, (1,) + x.shape)
    feats = encoder(x)
    return StyleFeatureMap(feats[-1]), feats


def downsample_mask(mask, factor, threshold=0.5):
    """Average-pool a ``[N,1,H,W]`` array by ``factor``; binarize if threshold given."""
    m = np.asarray(mask, dtype=np.float64)
    n, c, h, w = m.shape
    pooled = m.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    if threshold is None:
        return pooled
    return (pooled >= threshold).astype(np.float64)


@dataclass
class StyleLossReport:
    s_inter: float
    s_intra: float
    loss: float
    margin: float
    degenerate: bool = False


def _flatten_features(features):
    """``[N,C,h,w]`` -> unit-normalized ``[N,n,C]``."""
    n, c, h, w = features.shape
    return l2_normalize(transpose(reshape(features, (n, c, h * w)), (0, 2, 1)), axis=-1)


def style_pair_similarities(features, mask):
    """Mean cosine over ordered inter-region and intra-region pixel pairs.

    ``features`` is ``[N,C,h,w]``, ``mask`` a binary ``[N,h,w]`` (or
    ``[N,1,h,w]``) array. Self-pairs are excluded from the intra set.
    Uses sum_{p in R1, q in R2} cos(p, q) = (sum_R1 f) . (sum_R2 f).
    Returns tensors ``(s_inter[N], s_intra[N])`` and a degenerate flag array;
    degenerate samples carry zeros.
    """
    if isinstance(features, StyleFeatureMap):
        features = features.features
    nb, c, h, w = features.shape
    m = np.asarray(mask, dtype=np.float64).reshape(nb, h * w)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("style mask must be binary")
    fhat = _flatten_features(features)  # [N,n,C]
    n1 = m.sum(axis=1)
    n0 = h * w - n1
    sq = tsum(fhat * fhat, axis=-1)  # [N,n]; 1 except for eps-guarded zeros
    mt = Tensor(m[:, None, :])
    s1 = reshape(matmul(mt, fhat), (nb, c))
    s0 = reshape(matmul(Tensor(1.0 - m[:, None, :]), fhat), (nb, c))
    inter_sum = tsum(s1 * s0, axis=-1)
    self_1 = tsum(sq * Tensor(m), axis=-1)
    self_0 = tsum(sq * Tensor(1.0 - m), axis=-1)
    intra_sum = tsum(s1 * s1, axis=-1) - self_1 + tsum(s0 * s0, axis=-1) - self_0
    n_inter = n1 * n0
    n_intra = n1 * (n1 - 1) + n0 * (n0 - 1)
    degenerate = (n_inter == 0) | (n_intra == 0)
    s_inter = inter_sum * Tensor(np.where(degenerate, 0.0, 1.0 / np.maximum(n_inter, 1)))
    s_intra = intra_sum * Tensor(np.where(degenerate, 0.0, 1.0 / np.maximum(n_intra, 1)))
    return s_inter, s_intra, degenerate


def style_loss(features, mask, margin=DEFAULT_MARGIN):
    """Per-batch mean of max(s_inter - s_intra + margin, 0) and per-sample reports.

    Degenerate samples (one region empty) contribute zero.
    """
    if not 0 < margin <= 2:
        raise ValueError(f"margin must lie in (0, 2], got {margin}")
    s_inter, s_intra, degenerate = style_pair_similarities(features, mask)
    valid = Tensor((~degenerate).astype(np.float64))
    per_sample = relu(s_inter - s_intra + margin) * valid
    loss = tsum(per_sample) * (1.0 / len(degenerate))
    reports = [
        StyleLossReport(float(si), float(sa), float(l), margin, bool(d))
        for si, sa, l, d in zip(s_inter.data, s_intra.data, per_sample.data, degenerate)
    ]
    return loss, reports
