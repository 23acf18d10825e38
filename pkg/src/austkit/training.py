"""Minibatch training loop around ``model.train_step``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import train_step
from .nn import Adam, AdamState, cosine_lr


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    seed: int = 0
    ckpt_every: int = 0


def batch_order(n, steps, batch_size, seed):
    """Index batches for ``steps`` steps: reshuffled epochs, deterministic in ``seed``."""
    rng = np.random.default_rng([seed, 0x7EA1])
    out, pool = [], []
    for _ in range(steps):
        batch = []
        while len(batch) < batch_size:
            if not pool:
                pool = list(rng.permutation(n))
            take = min(batch_size - len(batch), len(pool))
            batch.extend(pool[:take])
            pool = pool[take:]
        out.append(np.array(batch))
    return out


def stack_batch(samples, idx, semantic):
    images = np.stack([samples[i].image for i in idx])
    masks = np.stack([samples[i].gt_mask for i in idx])
    sem = np.stack([samples[i].sem_labels for i in idx]) if semantic else None
    return images, masks, sem


def fit(model, samples, tc, on_step=None, on_checkpoint=None):
    """Train ``model`` in place on a list of CompositeSample.

    ``on_step(step, lr, breakdown)`` is called after every step (1-based) and
    ``on_checkpoint(step)`` every ``tc.ckpt_every`` steps and at the end.
    """
    if not samples:
        raise ValueError("training set is empty")
    opt = Adam(lr=tc.lr, weight_decay=tc.weight_decay)
    state = AdamState()
    semantic = model.config.semantic_mode
    bs = min(tc.batch_size, len(samples))
    for step, idx in enumerate(batch_order(len(samples), tc.steps, bs, tc.seed), start=1):
        lr = cosine_lr(step - 1, tc.steps, tc.lr, tc.lr_min)
        breakdown, state = train_step(model, stack_batch(samples, idx, semantic), opt, state, lr=lr)
        if on_step is not None:
            on_step(step, lr, breakdown)
        if on_checkpoint is not None and tc.ckpt_every and step % tc.ckpt_every == 0 and step != tc.steps:
            on_checkpoint(step)
    if on_checkpoint is not None:
        on_checkpoint(tc.steps)
    return state
