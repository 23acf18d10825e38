"""Pure-numpy convolution kernels; same contract as the compiled module.

  xp    padded input, C-contiguous (N, C, Hp, Wp)
  wmat  kernel as (O, K) with K = C*kh*kw ordered (c, i, j)
  out   (O, P) with P = N*Ho*Wo ordered (n, y, x)
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride):
    n, c, hp, wp = xp.shape
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    # (N, C, Ho, Wo, kh, kw) -> (C, kh, kw, N, Ho, Wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * ho * wo)


def col2im(cols, n, c, hp, wp, kh, kw, stride):
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if cols.shape != (c * kh * kw, n * ho * wo):
        raise ValueError("cols shape does not match the requested geometry")
    blocks = cols.reshape(c, kh, kw, n, ho, wo).transpose(3, 0, 1, 2, 4, 5)
    out = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += blocks[:, :, i, j]
    return out


def conv_forward(xp, wmat, kh, kw, stride):
    if wmat.shape[1] != xp.shape[1] * kh * kw:
        raise ValueError("kernel matrix does not match input channels")
    return wmat @ im2col(xp, kh, kw, stride)


def conv_backward(xp, wmat, gmat, kh, kw, stride, need_dx, need_dw):
    n, c, hp, wp = xp.shape
    dx = dw = None
    if need_dw:
        dw = gmat @ im2col(xp, kh, kw, stride).T
    if need_dx:
        dx = col2im(wmat.T @ gmat, n, c, hp, wp, kh, kw, stride)
    return dx, dw
