"""Pixel-level AP, F1 and IoU, per image and dataset-averaged."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .tensor import no_grad


def average_precision(pred, gt):
    """Pixel AP in percent: sum over ranks of precision@k * delta-recall@k.

    Pixels are ranked by descending score; ties keep index order. Returns
    None when ``gt`` has no positive pixel.
    """
    scores = np.asarray(pred, dtype=np.float64).ravel()
    labels = np.asarray(gt).ravel() > 0.5
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    return 100.0 * float(precision[hits].sum()) / n_pos


def pooled_average_precision(preds, gts):
    """AP over all pixels of all images pooled together."""
    return average_precision(np.concatenate([np.ravel(p) for p in preds]),
                             np.concatenate([np.ravel(g) for g in gts]))


def confusion(pred, gt, threshold=0.5):
    p = np.asarray(pred).ravel() >= threshold
    g = np.asarray(gt).ravel() > 0.5
    tp = int(np.sum(p & g))
    fp = int(np.sum(p & ~g))
    fn = int(np.sum(~p & g))
    return tp, fp, fn


def f1_and_iou(pred, gt, threshold=0.5):
    """(F1 as a fraction, IoU in percent); an empty-vs-empty pair is perfect."""
    tp, fp, fn = confusion(pred, gt, threshold)
    if tp + fp + fn == 0:
        return 1.0, 100.0
    return 2.0 * tp / (2 * tp + fp + fn), 100.0 * tp / (tp + fp + fn)


@dataclass
class ImageMetrics:
    image_id: str
    ap: float  # None when the ground truth is empty
    f1: float
    iou: float
    s_inter: float = None
    s_intra: float = None


@dataclass
class EvalReport:
    ap: float
    f1: float
    iou: float
    threshold: float = 0.5
    ap_protocol: str = "macro"
    n_images: int = 0
    ap_excluded: int = 0
    s_inter: float = None
    s_intra: float = None
    style_images: int = 0
    per_image: list = field(default_factory=list)

    _KEYS = ("ap", "f1", "iou", "threshold", "ap_protocol", "n_images", "ap_excluded",
             "s_inter", "s_intra", "style_images")

    def to_text(self):
        lines = []
        for k in self._KEYS:
            v = getattr(self, k)
            lines.append(f"{k} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        vals = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            vals[key.strip()] = _parse(value.strip())
        return cls(**{k: vals[k] for k in cls._KEYS if k in vals})

    def per_image_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id", "ap", "f1", "iou"])
        for m in self.per_image:
            w.writerow([m.image_id, _fmt(m.ap), _fmt(m.f1), _fmt(m.iou)])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(s):
    if s == "none":
        return None
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def summarize(per_image, threshold=0.5, ap_protocol="macro", preds=None, gts=None):
    if not per_image:
        raise ValueError("cannot evaluate an empty dataset")
    aps = [m.ap for m in per_image if m.ap is not None]
    if ap_protocol == "macro":
        ap = float(np.mean(aps)) if aps else None
    elif ap_protocol == "pooled":
        ap = pooled_average_precision(preds, gts)
    else:
        raise ValueError(f"unknown AP protocol {ap_protocol!r}")
    style = [m for m in per_image if m.s_inter is not None]
    return EvalReport(
        ap=ap,
        f1=float(np.mean([m.f1 for m in per_image])),
        iou=float(np.mean([m.iou for m in per_image])),
        threshold=threshold,
        ap_protocol=ap_protocol,
        n_images=len(per_image),
        ap_excluded=len(per_image) - len(aps),
        s_inter=float(np.mean([m.s_inter for m in style])) if style else None,
        s_intra=float(np.mean([m.s_intra for m in style])) if style else None,
        style_images=len(style),
        per_image=list(per_image),
    )


def evaluate_predictions(preds, gts, ids=None, threshold=0.5, ap_protocol="macro", style=None):
    """Metrics for precomputed probability maps. ``style`` is an optional list of
    (s_inter, s_intra) or None per image."""
    ids = ids if ids is not None else [f"{k:04d}" for k in range(len(preds))]
    per_image = []
    for k, (p, g) in enumerate(zip(preds, gts)):
        f1, iou = f1_and_iou(p, g, threshold)
        si, sa = (style[k] if style is not None and style[k] is not None else (None, None))
        per_image.append(ImageMetrics(ids[k], average_precision(p, g), f1, iou, si, sa))
    return summarize(per_image, threshold, ap_protocol, preds, gts)


def _model_outputs(model, dataset, batch_size, zero_voting):
    """(probability maps, style stats) for ``dataset`` in order."""
    preds, style = [], []
    semantic = model.config.semantic_mode
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start:start + batch_size]
        images = np.stack([s.image for s in chunk])
        masks = np.stack([s.gt_mask for s in chunk])
        sem = np.stack([s.sem_labels for s in chunk]) if semantic else None
        with no_grad():
            out = model.forward(images, sem_labels=sem, gt_mask=masks, zero_voting=zero_voting)
        preds.extend(out.final_mask.data[:, 0])
        for rep in out.style_report:
            style.append(None if rep.degenerate else (rep.s_inter, rep.s_intra))
    return preds, style


def _outputs_star(args):
    return _model_outputs(*args)


def evaluate_dataset(model, dataset, threshold=0.5, ap_protocol="macro", batch_size=16,
                     zero_voting=False, jobs=1):
    """Run ``model`` over ``dataset`` (list of CompositeSample) in order.

    ``model`` may also be any callable ``samples -> list of [H,W] maps`` (used
    for oracle predictors); then no style statistics are reported. With
    ``jobs > 1`` contiguous chunks run in worker processes and are joined in
    order, so the report does not depend on ``jobs``.
    """
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    ids = [str(s.meta.get("id", f"{k:04d}")) for k, s in enumerate(dataset)]
    gts = [np.asarray(s.gt_mask, dtype=np.float64) for s in dataset]
    if not hasattr(model, "forward"):
        preds = [np.asarray(p, dtype=np.float64) for p in model(dataset)]
        return evaluate_predictions(preds, gts, ids, threshold, ap_protocol)
    if jobs > 1 and len(dataset) > batch_size:
        step = batch_size * -(-len(dataset) // (batch_size * jobs))
        parts = [(model, dataset[i:i + step], batch_size, zero_voting) for i in range(0, len(dataset), step)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_outputs_star, parts))
        preds = [p for r in results for p in r[0]]
        style = [s for r in results for s in r[1]]
    else:
        preds, style = _model_outputs(model, dataset, batch_size, zero_voting)
    return evaluate_predictions(preds, gts, ids, threshold, ap_protocol, style)
