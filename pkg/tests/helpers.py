"""Shared oracles for the test suite: finite differences and brute-force loops."""

import numpy as np

from austkit.tensor import Tensor, backward

FD_STEP = 1e-5
GRAD_RTOL = 1e-4


def relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| scaled by the larger of the two gradients' max magnitude."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / scale)


def numeric_grad(f, x, h=FD_STEP, coords=None):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place).

    With ``coords`` (flat indices) only those entries are probed; the result
    then has one entry per coordinate.
    """
    flat = x.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = []
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out.append((fp - fm) / (2 * h))
    out = np.array(out)
    return out.reshape(x.shape) if coords is None else out


def gradcheck(fn, arrays, coords_per_input=None, rng=None):
    """Compare backward() against central differences for ``fn(*tensors) -> scalar Tensor``.

    Returns the worst relative error over all inputs.
    """
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    backward(loss)
    worst = 0.0
    for t in tensors:
        def f():
            return float(fn(*[Tensor(u.data) for u in tensors]).data)
        coords = None
        if coords_per_input is not None and t.data.size > coords_per_input:
            coords = rng.choice(t.data.size, coords_per_input, replace=False)
        num = numeric_grad(f, t.data, coords=coords)
        ana = t.grad if coords is None else t.grad.reshape(-1)[coords]
        worst = max(worst, relative_error(ana, num))
    return worst


def conv2d_loops(x, w, b, stride, pad):
    """Direct nested-sum cross-correlation."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for a in range(n):
        for q in range(o):
            for y in range(ho):
                for z in range(wo):
                    s = 0.0 if b is None else b[q]
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                s += xp[a, ch, y * stride + i, z * stride + j] * w[q, ch, i, j]
                    out[a, q, y, z] = s
    return out


def cosine(u, v, eps=1e-8):
    return float(np.dot(u, v) / (max(np.linalg.norm(u), eps) * max(np.linalg.norm(v), eps)))


def pair_loop_similarities(features, mask):
    """(s_inter, s_intra) for one [C,h,w] map by explicit ordered-pair loops."""
    c = features.shape[0]
    f = features.reshape(c, -1).T
    m = np.asarray(mask).reshape(-1)
    inter, intra = [], []
    for p in range(len(m)):
        for q in range(len(m)):
            if p == q:
                continue
            (intra if m[p] == m[q] else inter).append(cosine(f[p], f[q]))
    return float(np.mean(inter)), float(np.mean(intra))


def vote_loops(v, mask, sem=None):
    """S[p1] = sum_p2 (1 - M[p2]) W[p1,p2] V[p1,p2] for one image."""
    m = np.asarray(mask).reshape(-1)
    n = len(m)
    s = np.zeros(n)
    for p1 in range(n):
        for p2 in range(n):
            w = 1.0 - m[p2]
            if sem is not None:
                w *= sem[p1, p2]
            s[p1] += w * v[p1, p2]
    return s
