"""RGB/YUV conversion and the learned position- and channel-specific color map."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .nn import Conv2dParams, Module
from .tensor import Tensor, as_tensor, matmul, relu, reshape

# BT.601 full range. Rows produce Y, U, V from R, G, B.
_KR, _KB = 0.299, 0.114
_KG = 1.0 - _KR - _KB
BT601_RGB_TO_YUV = np.array([
    [_KR, _KG, _KB],
    [-0.5 * _KR / (1 - _KB), -0.5 * _KG / (1 - _KB), 0.5],
    [0.5, -0.5 * _KG / (1 - _KR), -0.5 * _KB / (1 - _KR)],
])
BT601_YUV_TO_RGB = np.linalg.inv(BT601_RGB_TO_YUV)

CONVERSION_TABLES = {"bt601": (BT601_RGB_TO_YUV, BT601_YUV_TO_RGB)}


class ColorSpace(enum.Enum):
    RGB = "rgb"
    YUV = "yuv"
    MAPPED = "mapped"


class ColorSpaceError(ValueError):
    pass


@dataclass
class ImagePlane:
    """Pixels ``[3,H,W]`` or batched ``[N,3,H,W]`` in a declared color space."""

    space: ColorSpace
    pixels: Tensor

    def __post_init__(self):
        self.pixels = as_tensor(self.pixels)
        if self.pixels.ndim not in (3, 4) or self.pixels.shape[-3] != 3:
            raise ColorSpaceError(f"expected [3,H,W] or [N,3,H,W] pixels, got {self.pixels.shape}")

    @property
    def batched(self):
        return self.pixels.ndim == 4


def mix_channels(x, matrix):
    """Apply a 3x3 per-pixel linear transform to ``[N,3,H,W]``."""
    n, c, h, w = x.shape
    y = matmul(Tensor(matrix), reshape(x, (n, c, h * w)))
    return reshape(y, (n, c, h, w))


def _as_batch(img):
    p = img.pixels
    return p if img.batched else reshape(p, (1,) + p.shape)


def _like(img, space, batch):
    return ImagePlane(space, batch if img.batched else reshape(batch, batch.shape[1:]))


def rgb_to_yuv(img, table="bt601"):
    if img.space is not ColorSpace.RGB:
        raise ColorSpaceError(f"rgb_to_yuv needs an RGB image, got {img.space.name}")
    return _like(img, ColorSpace.YUV, mix_channels(_as_batch(img), CONVERSION_TABLES[table][0]))


def yuv_to_rgb(img, table="bt601"):
    if img.space is not ColorSpace.YUV:
        raise ColorSpaceError(f"yuv_to_rgb needs a YUV image, got {img.space.name}")
    return _like(img, ColorSpace.RGB, mix_channels(_as_batch(img), CONVERSION_TABLES[table][1]))


def apply_affine(image, a, b):
    """Elementwise ``a * image + b``; all three share shape ``[N,3,H,W]``."""
    return a * image + b


class ColorMapParams(Module):
    """Conv block (3x3 -> ReLU -> 7x7) emitting P = [A, B] with 6 channels.

    The 7x7 bias starts at A=1, B=0 so the initial map is the identity.
    """

    def __init__(self, conv1, conv2):
        if conv2.out_channels != 6:
            raise ValueError(f"color map head must emit 6 channels, got {conv2.out_channels}")
        self.conv1 = conv1
        self.conv2 = conv2

    @classmethod
    def init(cls, rng, hidden=16, head_gain=0.1):
        conv1 = Conv2dParams.init(rng, 3, hidden, 3, padding=1)
        conv2 = Conv2dParams.init(rng, hidden, 6, 7, padding=3, gain=head_gain,
                                  bias=[1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        return cls(conv1, conv2)

    def coefficients(self, yuv):
        """(A, B), each ``[N,3,H,W]``, for a batched YUV tensor."""
        p = self.conv2(relu(self.conv1(yuv)))
        return p[:, 0:3], p[:, 3:6]


def color_map(img, params):
    if img.space is not ColorSpace.YUV:
        raise ColorSpaceError(f"color_map needs a YUV image, got {img.space.name}")
    x = _as_batch(img)
    a, b = params.coefficients(x)
    return _like(img, ColorSpace.MAPPED, apply_affine(x, a, b))
