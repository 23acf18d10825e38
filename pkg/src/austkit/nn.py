"""Parameter containers, convolution layers and the Adam optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, conv2d, conv_output_size


class Module:
    """Anything holding parameters. Walks attributes to name them."""

    def named_parameters(self, prefix=""):
        out = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())


class Conv2dParams(Module):
    """Kernel ``[outC, inC, kH, kW]``, bias ``[outC]``, stride and padding."""

    def __init__(self, kernel, bias, stride=1, padding=0):
        if stride < 1:
            raise ValueError(f"stride must be positive, got {stride}")
        if padding < 0:
            raise ValueError(f"padding must be non-negative, got {padding}")
        self.kernel = kernel if isinstance(kernel, Tensor) else Tensor(kernel, requires_grad=True)
        self.bias = bias if isinstance(bias, Tensor) else Tensor(bias, requires_grad=True)
        self.stride = stride
        self.padding = padding

    @classmethod
    def init(cls, rng, in_ch, out_ch, k, stride=1, padding=None, gain=1.0, bias=0.0):
        """He-normal kernel scaled by ``gain``; ``padding`` defaults to k // 2."""
        std = gain * math.sqrt(2.0 / (in_ch * k * k))
        kernel = rng.normal(0.0, std, size=(out_ch, in_ch, k, k))
        b = np.broadcast_to(np.asarray(bias, dtype=np.float64), (out_ch,)).copy()
        return cls(kernel, b, stride, k // 2 if padding is None else padding)

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    def output_size(self, h, w):
        kh, kw = self.kernel.shape[2:]
        return (conv_output_size(h, kh, self.stride, self.padding),
                conv_output_size(w, kw, self.stride, self.padding))

    def __call__(self, x):
        return conv2d(x, self.kernel, self.bias, self.stride, self.padding)


def cosine_lr(step, total, lr_max, lr_min=0.0):
    if total <= 0:
        return lr_max
    t = min(step, total) / total
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t))


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class Adam:
    """Adam with L2 weight decay folded into the gradient (torch semantics)."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def step(self, params, state, lr=None):
        lr = self.lr if lr is None else lr
        state.step += 1
        t = state.step
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = np.zeros_like(p.data)
                state.v[name] = np.zeros_like(p.data)
            v = state.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return state
