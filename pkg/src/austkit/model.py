"""AustNet-toy: two tiny encoders, color map, voting-guided UNet decoder."""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import colorspace, style, voting
from .losses import LossBreakdown, total_loss
from .nn import Adam, AdamState, Conv2dParams, Module
from .tensor import Tensor, backward, concat, graph_nodes, no_grad, relu, resize_bilinear, sigmoid


@dataclass
class ModelConfig:
    input_size: tuple = (48, 48)
    style_channels: int = 32
    encoder_widths: tuple = (16, 32, 64)
    decoder_stages: int = 3
    decoder_channels: int = 32
    head_channels: int = 16
    colormap_hidden: int = 16
    semantic_mode: bool = False
    num_semantic_classes: int = 8
    normalize_scores: bool = True
    margin: float = style.DEFAULT_MARGIN
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.encoder_widths = tuple(int(v) for v in self.encoder_widths)
        h, w = self.input_size
        if h % 8 or w % 8 or h <= 0 or w <= 0:
            raise ValueError(f"input size {h}x{w} must be positive and divisible by 8")
        if not 1 <= self.decoder_stages <= 3:
            raise ValueError(f"decoder_stages must be 1..3 (three x2 upsamplings), got {self.decoder_stages}")
        if len(self.encoder_widths) != 3:
            raise ValueError("encoder_widths needs three entries")

    @property
    def style_size(self):
        return self.input_size[0] // 8, self.input_size[1] // 8

    def stage_sizes(self):
        """Spatial size of the auxiliary mask of each decoder stage."""
        h, w = self.input_size
        return [(h // 2 ** (3 - k), w // 2 ** (3 - k)) for k in range(self.decoder_stages)]

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ForwardOutput:
    final_mask: Tensor
    aux_masks: list
    score_maps: list  # normalized (or raw, per config) maps fed to the decoder
    raw_score_maps: list
    style_features: style.StyleFeatureMap
    style_loss: Tensor = None
    style_report: list = None
    extras: dict = field(default_factory=dict)


class DecoderStage(Module):
    def __init__(self, body, aux_head):
        self.body = body
        self.aux_head = aux_head


class AustNet(Module):
    def __init__(self, config, rng=None):
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        c = config.style_channels
        widths = config.encoder_widths
        dc = config.decoder_channels
        self.color_map = colorspace.ColorMapParams.init(rng, hidden=config.colormap_hidden)
        self.main_encoder = style.TinyEncoder.init(rng, widths=widths, out_ch=c, final_relu=True)
        self.style_encoder = style.TinyEncoder.init(rng, widths=widths, out_ch=c, final_relu=False)
        # fusion at 1/2, 1/4, 1/8
        scale_ch = [widths[1], widths[2], c]
        self.fuse = [Conv2dParams.init(rng, 2 * ch, ch, 1, padding=0) for ch in scale_ch]
        stages = []
        for k in range(config.decoder_stages):
            skip = scale_ch[2 - k]
            in_ch = skip if k == 0 else dc + skip + 1
            stages.append(DecoderStage(
                Conv2dParams.init(rng, in_ch, dc, 3),
                Conv2dParams.init(rng, dc, 1, 1, padding=0, gain=0.5),
            ))
        self.stages = stages
        self.final_body = Conv2dParams.init(rng, dc + widths[0] + 1, config.head_channels, 3)
        self.final_head = Conv2dParams.init(rng, config.head_channels, 1, 1, padding=0, gain=0.5)

    # ------------------------------------------------------------------
    def semantic_weights(self, sem_labels):
        cfg = self.config
        feats = voting.one_hot_semantics(sem_labels, cfg.num_semantic_classes, 8)
        return Tensor(voting.semantic_similarity_matrix(feats))

    def forward(self, images, sem_labels=None, gt_mask=None, zero_voting=False):
        cfg = self.config
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float64))
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        if tuple(x.shape[-2:]) != cfg.input_size or x.shape[1] != 3:
            raise ValueError(f"expected [N,3,{cfg.input_size[0]},{cfg.input_size[1]}] images, got {x.shape}")
        if cfg.semantic_mode and sem_labels is None:
            raise ValueError("semantic_mode is on but no semantic labels were given")
        nb = x.shape[0]
        h, w = cfg.style_size

        main = self.main_encoder(x)
        yuv = colorspace.rgb_to_yuv(colorspace.ImagePlane(colorspace.ColorSpace.RGB, x))
        mapped = colorspace.color_map(yuv, self.color_map)
        fsty, style_feats = style.encode_style(mapped, self.style_encoder)
        fused = [relu(f(concat([main[i + 1], style_feats[i + 1]], axis=1)))
                 for i, f in enumerate(self.fuse)]

        sim = voting.style_similarity_matrix(fsty)
        wsem = None
        if cfg.semantic_mode:
            wsem = self.semantic_weights(np.asarray(sem_labels).reshape(nb, *cfg.input_size))

        aux_masks, scores, raw_scores = [], [], []
        d = None
        prev_score = None
        for k, stage in enumerate(self.stages):
            skip = fused[2 - k]
            sh, sw = skip.shape[-2:]
            if k == 0:
                inp = skip
            else:
                inp = concat([resize_bilinear(d, sh, sw), skip, resize_bilinear(prev_score, sh, sw)], axis=1)
            d = relu(stage.body(inp))
            m = sigmoid(stage.aux_head(d))
            aux_masks.append(m)
            m_small = resize_bilinear(m, h, w)
            raw = voting.vote(sim, m_small, wsem)
            s = voting.normalize_score_map(raw, m_small) if cfg.normalize_scores else raw
            if zero_voting:
                s = Tensor(np.zeros(s.shape))
            raw_scores.append(raw)
            scores.append(s)
            prev_score = s

        H, W = cfg.input_size
        inp = concat([resize_bilinear(d, H, W), main[0], resize_bilinear(prev_score, H, W)], axis=1)
        final = sigmoid(self.final_head(relu(self.final_body(inp))))

        out = ForwardOutput(final, aux_masks, scores, raw_scores, fsty)
        if gt_mask is not None:
            gt = np.asarray(gt_mask, dtype=np.float64).reshape(nb, 1, *cfg.input_size)
            small = style.downsample_mask(gt, 8)
            out.style_loss, out.style_report = style.style_loss(fsty.features, small, cfg.margin)
        return out

    __call__ = forward

    def predict(self, images, sem_labels=None, zero_voting=False):
        with no_grad():
            return self.forward(images, sem_labels, zero_voting=zero_voting)


# -- training ------------------------------------------------------------------
class NonFiniteLossError(FloatingPointError):
    pass


def _first_nonfinite(root):
    for t in graph_nodes(root):
        if not np.all(np.isfinite(t.data)):
            return t
    return None


def train_step(model, batch, optimizer, state, lr=None):
    """One Adam step on ``batch = (images, masks, sem_labels_or_None)``."""
    images, masks, sem = batch
    model.zero_grad()
    out = model.forward(images, sem_labels=sem, gt_mask=masks)
    breakdown = total_loss(out, masks, stages=model.config.decoder_stages)
    if not np.isfinite(breakdown.total):
        bad = _first_nonfinite(breakdown.tensor)
        names = {id(p): name for name, p in model.named_parameters().items()}
        if bad is None:
            where = "unknown node"
        elif id(bad) in names:
            where = f"parameter '{names[id(bad)]}'"
        else:
            where = f"op '{bad.op}' (node {bad.node_id}, shape {bad.shape})"
        raise NonFiniteLossError(f"non-finite loss; first non-finite tensor is {where}")
    backward(breakdown.tensor)
    params = model.named_parameters()
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteLossError(f"non-finite gradient in parameter '{name}'")
    optimizer.step(params, state, lr=lr)
    breakdown.tensor = None
    return breakdown, state


# -- checkpoint container ------------------------------------------------------
CKPT_MAGIC = b"AUSTCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model, path):
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    params = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = params[name].data
            key = name.encode("utf-8")
            fh.write(struct.pack("<I", len(key)))
            fh.write(key)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError("truncated checkpoint")
    return buf


def read_checkpoint(path):
    """Return (config dict, {name: array})."""
    with open(path, "rb") as fh:
        if _read(fh, len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not an austkit checkpoint")
        version, cfg_len = struct.unpack("<II", _read(fh, 8))
        if version != CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        cfg = json.loads(_read(fh, cfg_len).decode("utf-8"))
        (count,) = struct.unpack("<I", _read(fh, 4))
        blobs = {}
        for _ in range(count):
            (klen,) = struct.unpack("<I", _read(fh, 4))
            name = _read(fh, klen).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read(fh, 4))
            shape = struct.unpack(f"<{ndim}I", _read(fh, 4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            blobs[name] = np.frombuffer(_read(fh, 8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    return cfg, blobs


def load_params(model, blobs):
    params = model.named_parameters()
    missing = set(params) - set(blobs)
    extra = set(blobs) - set(params)
    if missing or extra:
        raise CheckpointError(f"parameter names differ (missing={sorted(missing)}, unexpected={sorted(extra)})")
    for name, p in params.items():
        if blobs[name].shape != p.shape:
            raise CheckpointError(f"shape mismatch for '{name}': checkpoint {blobs[name].shape}, model {p.shape}")
    for name, p in params.items():
        p.data = blobs[name].copy()
    return model


def load_checkpoint(path, config=None):
    cfg, blobs = read_checkpoint(path)
    config = ModelConfig.from_dict(cfg) if config is None else config
    return load_params(AustNet(config), blobs)
