"""Procedural inharmonious composites with masks and semantic label maps.

A scene is a sky/ground backdrop plus a few objects, all lit by one global
tint and one light direction. Objects of the same semantic class share an
albedo. Inharmonious regions are whole objects whose pixels get a
per-channel affine color shift ``a * x + b`` (clamped to [0, 1]).

Label ids: 0 sky, 1 ground, 2.. object classes.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .pngio import load_png, save_png, save_png_uint8, to_uint8

SKY, GROUND = 0, 1
FIRST_OBJECT_CLASS = 2
SHAPE_KINDS = ("ellipse", "rect", "blob")
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass
class GeneratorConfig:
    size: tuple = (48, 48)
    regions: tuple = (1, 1)
    scale_range: tuple = (0.6, 1.4)
    offset_range: tuple = (-0.25, 0.25)
    min_scale_dev: float = 0.1
    min_offset_dev: float = 0.05
    num_classes: int = 8
    distractors: tuple = (1, 3)
    classes_per_image: tuple = (1, 3)
    radius_single: tuple = (0.17, 0.30)
    radius_multi: tuple = (0.07, 0.13)
    class_hue_spread: float = 0.15
    texture: float = 0.04
    shading: float = 0.12
    max_area_fraction: float = 0.5
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        self.size = tuple(int(v) for v in self.size)
        self.regions = tuple(int(v) for v in self.regions)
        lo, hi = self.regions
        if not 1 <= lo <= hi <= 9:
            raise ValueError(f"region count range must lie within [1, 9], got {lo}..{hi}")
        if self.num_classes < FIRST_OBJECT_CLASS + 1:
            raise ValueError("need at least one object class")

    @property
    def multi(self):
        return self.regions[1] > 1

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class CompositeSample:
    image: np.ndarray  # [3,H,W] in [0,1], 8-bit quantized
    gt_mask: np.ndarray  # [H,W] in {0,1}
    sem_labels: np.ndarray  # [H,W] int
    meta: dict = field(default_factory=dict)
    base: np.ndarray = None  # harmonious image before the shift (generator output only)


def _quantize(img):
    return to_uint8(img).astype(np.float64) / 255.0


def shift_passes_floor(a, b, min_scale_dev=0.1, min_offset_dev=0.05):
    """True when at least one channel deviates enough from the identity."""
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.any((np.abs(a - 1.0) >= min_scale_dev) | (np.abs(b) >= min_offset_dev)))


def apply_shift(image, mask, a, b):
    """Per-channel ``a * x + b`` inside ``mask``, clamped to [0, 1]."""
    out = image.copy()
    sel = mask.astype(bool)
    for c in range(3):
        out[c][sel] = np.clip(a[c] * image[c][sel] + b[c], 0.0, 1.0)
    return out


def _shape_mask(kind, h, w, cy, cx, r, rng):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "ellipse":
        ry, rx = r * rng.uniform(0.7, 1.0), r * rng.uniform(0.7, 1.0)
        return (dy / ry) ** 2 + (dx / rx) ** 2 <= 1.0
    if kind == "rect":
        hy, hx = r * rng.uniform(0.6, 0.9), r * rng.uniform(0.6, 0.9)
        return (np.abs(dy) <= hy) & (np.abs(dx) <= hx)
    # star-shaped polygon with mild radius jitter
    k = int(rng.integers(7, 10))
    ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    rad = r * rng.uniform(0.75, 1.0, k)
    theta = np.arctan2(dy, dx) % (2 * np.pi)
    dist = np.hypot(dy, dx)
    ang_ext = np.concatenate([ang - 2 * np.pi, ang, ang + 2 * np.pi])
    rad_ext = np.concatenate([rad, rad, rad])
    return dist <= np.interp(theta, ang_ext, rad_ext)


def _smooth_noise(rng, h, w, cell=6):
    coarse = rng.uniform(-1, 1, (h // cell + 2, w // cell + 2))
    fine = ndimage.zoom(coarse, cell, order=1)[:h, :w]
    return fine + 0.5 * rng.uniform(-1, 1, (h, w))


def _render_scene(rng, cfg, n_regions):
    h, w = cfg.size
    tint = rng.uniform(0.55, 1.0, 3)
    tint /= tint.max()
    light = rng.normal(size=2)
    light /= np.linalg.norm(light)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    labels = np.empty((h, w), dtype=np.int64)
    horizon = int(rng.uniform(0.3, 0.6) * h)
    labels[:horizon] = SKY
    labels[horizon:] = GROUND
    lum = np.empty((h, w))
    top, bottom = rng.uniform(0.6, 0.95), rng.uniform(0.4, 0.7)
    lum[:horizon] = (top + (bottom - top) * (yy[:horizon] / max(horizon, 1)))
    lum[horizon:] = rng.uniform(0.25, 0.55) * (1.0 + 2.5 * cfg.texture * _smooth_noise(rng, h - horizon, w))
    albedo = np.ones((3, h, w)) * lum

    # object classes present in this image, each with its own albedo
    n_cls = int(rng.integers(cfg.classes_per_image[0], cfg.classes_per_image[1] + 1))
    classes = rng.choice(np.arange(FIRST_OBJECT_CLASS, cfg.num_classes), size=n_cls, replace=False)
    class_color = {int(c): rng.uniform(0.25, 0.9) * (1.0 + cfg.class_hue_spread * rng.uniform(-1, 1, 3))
                   for c in classes}

    n_distract = int(rng.integers(cfg.distractors[0], cfg.distractors[1] + 1))
    radius = cfg.radius_multi if cfg.multi else cfg.radius_single
    wanted = n_regions + n_distract
    occupied = np.zeros((h, w), dtype=bool)
    objects = []
    for _ in range(cfg.max_retries):
        if len(objects) == wanted:
            break
        # the first n_regions objects respect the area budget of the inharmonious set
        r = rng.uniform(*radius) * min(h, w)
        cy = rng.uniform(r, h - 1 - r)
        cx = rng.uniform(r, w - 1 - r)
        cls = int(rng.choice(classes))
        kind = SHAPE_KINDS[(cls - FIRST_OBJECT_CLASS) % len(SHAPE_KINDS)]
        m = _shape_mask(kind, h, w, cy, cx, r, rng)
        if m.sum() < 4:
            continue
        if np.any(m & ndimage.binary_dilation(occupied, FOUR_CONNECTED)):
            continue
        _, ncomp = ndimage.label(m, FOUR_CONNECTED)
        if ncomp != 1:
            continue
        objects.append((m, cls, cy, cx, r))
        occupied |= m
    for m, cls, cy, cx, r in objects:
        labels[m] = cls
        shade = 1.0 + cfg.shading * ((yy - cy) * light[0] + (xx - cx) * light[1]) / r
        albedo[:, m] = (class_color[cls][:, None] * shade[m][None, :])

    texture = 1.0 + cfg.texture * _smooth_noise(rng, h, w, cell=4)
    base = np.clip(albedo * tint[:, None, None] * texture[None], 0.0, 1.0)
    return _quantize(base), labels, objects


def _sample_shift(rng, cfg):
    while True:
        a = rng.uniform(*cfg.scale_range, 3)
        b = rng.uniform(*cfg.offset_range, 3)
        if shift_passes_floor(a, b, cfg.min_scale_dev, cfg.min_offset_dev):
            return a, b


def generate_one(cfg, index):
    """Deterministic sample ``index`` for ``cfg.seed``."""
    rng = np.random.default_rng([cfg.seed, index])
    h, w = cfg.size
    budget = cfg.max_area_fraction * h * w
    for attempt in range(cfg.max_retries):
        requested = int(rng.integers(cfg.regions[0], cfg.regions[1] + 1))
        base, labels, objects = _render_scene(rng, cfg, requested)
        if not objects:
            continue
        # choose inharmonious objects under the area budget (strictly below 50%)
        order = rng.permutation(len(objects))
        chosen, area = [], 0
        for i in order:
            if len(chosen) == requested:
                break
            a_i = int(objects[i][0].sum())
            if area + a_i < budget:
                chosen.append(int(i))
                area += a_i
        if len(chosen) < cfg.regions[0]:
            continue
        image = base
        mask = np.zeros((h, w), dtype=bool)
        shifts = []
        ok = True
        for i in sorted(chosen):
            m = objects[i][0]
            for _ in range(cfg.max_retries):
                a, b = _sample_shift(rng, cfg)
                shifted = _quantize(apply_shift(image, m, a, b))
                if np.all(np.any(shifted[:, m] != base[:, m], axis=0)):
                    break
            else:
                ok = False
                break
            image = shifted
            mask |= m
            shifts.append((a, b))
        if not ok:
            continue
        flags = [] if len(chosen) == requested else ["fewer_regions"]
        meta = {
            "index": index,
            "seed": cfg.seed,
            "attempt": attempt,
            "regions": len(chosen),
            "requested": requested,
            "flags": flags,
            "shifts": [(a.tolist(), b.tolist()) for a, b in shifts],
        }
        return CompositeSample(image, mask.astype(np.float64), labels, meta, base)
    raise RuntimeError(f"could not generate sample {index} within {cfg.max_retries} attempts")


def _generate_star(args):
    return generate_one(*args)


def generate(cfg, n, start=0, jobs=1):
    if n < 1:
        raise ValueError("n must be >= 1")
    tasks = [(cfg, start + i) for i in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_generate_star, tasks))
    return [generate_one(*t) for t in tasks]


# -- dataset directory -----------------------------------------------------
MANIFEST = "manifest.txt"
MANIFEST_HEADER = "id\timage\tmask\tlabels\tseed\tregions\tflags\tshifts"


def _fmt_shifts(shifts):
    return ";".join(
        "a=" + ",".join(repr(round(v, 6)) for v in a) + "|b=" + ",".join(repr(round(v, 6)) for v in b)
        for a, b in shifts
    ) or "-"


def write_dataset(samples, out_dir, cfg=None):
    for sub in ("images", "masks", "labels"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    lines = []
    if cfg is not None:
        h, w = cfg.size
        lines.append(f"# austkit dataset v1 size={h}x{w} seed={cfg.seed} regions={cfg.regions[0]}..{cfg.regions[1]}")
    lines.append(MANIFEST_HEADER)
    for k, s in enumerate(samples):
        name = f"{k:04d}.png"
        save_png(os.path.join(out_dir, "images", name), s.image)
        save_png(os.path.join(out_dir, "masks", name), s.gt_mask)
        save_png_uint8(os.path.join(out_dir, "labels", name), s.sem_labels.astype(np.uint8))
        meta = s.meta
        lines.append("\t".join([
            f"{k:04d}", f"images/{name}", f"masks/{name}", f"labels/{name}",
            f"{meta.get('seed', '-')}:{meta.get('index', k)}", str(meta.get("regions", "-")),
            ",".join(meta.get("flags", [])) or "-", _fmt_shifts(meta.get("shifts", [])),
        ]))
    with open(os.path.join(out_dir, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(data_dir):
    path = os.path.join(data_dir, MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"{data_dir} has no {MANIFEST}")
    rows = []
    with open(path) as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split("\t")
                continue
            rows.append(dict(zip(header, line.split("\t"))))
    return rows


def load_dataset(data_dir, limit=None):
    samples = []
    for row in read_manifest(data_dir)[:limit]:
        image = load_png(os.path.join(data_dir, row["image"]))
        mask = (load_png(os.path.join(data_dir, row["mask"])) >= 0.5).astype(np.float64)
        labels = load_png(os.path.join(data_dir, row["labels"]), raw=True).astype(np.int64)
        meta = {"id": row["id"], "seed": row["seed"], "regions": int(row["regions"]),
                "flags": [] if row["flags"] == "-" else row["flags"].split(",")}
        samples.append(CompositeSample(image, mask, labels, meta))
    return samples


def count_components(mask):
    _, n = ndimage.label(np.asarray(mask) > 0.5, FOUR_CONNECTED)
    return n
