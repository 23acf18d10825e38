"""Mask losses (BCE, SSIM, soft IoU) and the deep-supervision total."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, clip, conv2d, log, mean, safe_div, tsum

BCE_EPS = 1e-7
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(pred, gt, name):
    if pred.shape != gt.shape:
        raise ShapeError(f"{name}: pred shape {pred.shape} != gt shape {gt.shape}")


def bce_loss(pred, gt, eps=BCE_EPS):
    pred, gt = as_tensor(pred), as_tensor(gt)
    _check_pair(pred, gt, "bce_loss")
    p = clip(pred, eps, 1.0 - eps)
    return -mean(gt * log(p) + (1.0 - gt) * log(1.0 - p))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(pred, gt, size=SSIM_WINDOW, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2, data_range=1.0):
    """Per-window SSIM for ``[N,1,H,W]`` maps, valid windows only.

    Maps smaller than the window are treated as a single uniform window.
    """
    pred, gt = as_tensor(pred), as_tensor(gt)
    _check_pair(pred, gt, "ssim")
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    h, w = pred.shape[-2:]
    if h < size or w < size:
        axes = (2, 3)
        mu_x, mu_y = mean(pred, axes, True), mean(gt, axes, True)
        sxx = mean(pred * pred, axes, True) - mu_x * mu_x
        syy = mean(gt * gt, axes, True) - mu_y * mu_y
        sxy = mean(pred * gt, axes, True) - mu_x * mu_y
    else:
        win = Tensor(gaussian_window(size, sigma)[None, None])
        filt = lambda t: conv2d(t, win)  # noqa: E731
        mu_x, mu_y = filt(pred), filt(gt)
        sxx = filt(pred * pred) - mu_x * mu_x
        syy = filt(gt * gt) - mu_y * mu_y
        sxy = filt(pred * gt) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim_loss(pred, gt, **kw):
    return 1.0 - mean(ssim_map(pred, gt, **kw))


def iou_loss(pred, gt):
    """1 - soft IoU per sample, averaged; both-empty samples count as 0."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    _check_pair(pred, gt, "iou_loss")
    axes = tuple(range(1, pred.ndim))
    inter = tsum(pred * gt, axes)
    union = tsum(pred, axes) + tsum(gt, axes) - inter
    empty = union.data <= 1e-12
    ratio = safe_div(inter, union, 1e-12) + Tensor(empty.astype(np.float64))
    return mean(1.0 - ratio)


def mask_losses(pred, gt):
    return bce_loss(pred, gt), ssim_loss(pred, gt), iou_loss(pred, gt)


@dataclass
class LossBreakdown:
    style: float
    final_bce: float
    final_ssim: float
    final_iou: float
    stages: list  # one (bce, ssim, iou) triple per decoder stage
    total: float
    tensor: Tensor = field(default=None, repr=False, compare=False)

    def terms(self):
        out = [self.style, self.final_bce, self.final_ssim, self.final_iou]
        for triple in self.stages:
            out.extend(triple)
        return out

    def as_row(self):
        row = {"total": self.total, "style": self.style, "final_bce": self.final_bce,
               "final_ssim": self.final_ssim, "final_iou": self.final_iou}
        for k, (b, s, i) in enumerate(self.stages, 1):
            row.update({f"stage{k}_bce": b, f"stage{k}_ssim": s, f"stage{k}_iou": i})
        return row


def resize_gt(gt, h, w):
    """Average-pool a full-resolution ``[N,1,H,W]`` ground truth to ``h x w``."""
    gt = np.asarray(gt, dtype=np.float64)
    fh, fw = gt.shape[-2] // h, gt.shape[-1] // w
    if fh * h != gt.shape[-2] or fw * w != gt.shape[-1]:
        raise ShapeError(f"cannot pool {gt.shape[-2:]} ground truth to {h}x{w}")
    if fh == fw == 1:
        return gt
    n, c = gt.shape[:2]
    return gt.reshape(n, c, h, fh, w, fw).mean(axis=(3, 5))


def total_loss(out, gt, stages=None):
    """Style loss + final mask losses + every auxiliary stage's mask losses."""
    gt = np.asarray(gt, dtype=np.float64)
    if gt.ndim == 3:
        gt = gt[:, None]
    if stages is not None and len(out.aux_masks) != stages:
        raise ValueError(f"model produced {len(out.aux_masks)} stages, config expects {stages}")
    if out.style_loss is None:
        raise ValueError("total_loss needs a forward pass run with the ground-truth mask")
    style = out.style_loss
    final = mask_losses(out.final_mask, Tensor(gt))
    stage_terms = []
    for aux in out.aux_masks:
        h, w = aux.shape[-2:]
        stage_terms.append(mask_losses(aux, Tensor(resize_gt(gt, h, w))))
    terms = [style, *final] + [t for triple in stage_terms for t in triple]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return LossBreakdown(
        style=style.item(),
        final_bce=final[0].item(), final_ssim=final[1].item(), final_iou=final[2].item(),
        stages=[tuple(t.item() for t in triple) for triple in stage_terms],
        total=total.item(),
        tensor=total,
    )
