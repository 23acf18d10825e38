"""Compare the compiled and pure-numpy convolution backends.

Runs the conv shapes of the default 48x48 model at batch 8 (forward and
backward) plus one full training step, for every available backend.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from austkit import kernels
from austkit.model import AustNet, ModelConfig, train_step
from austkit.nn import Adam, AdamState

# (name, C_in, C_out, k, stride, H) for the layers of the default model
LAYERS = [
    ("colormap 7x7", 16, 6, 7, 1, 48),
    ("encoder 3x3 s1", 3, 16, 3, 1, 48),
    ("encoder 3x3 s2", 16, 32, 3, 2, 48),
    ("decoder 3x3", 65, 32, 3, 1, 24),
    ("head 3x3", 49, 16, 3, 1, 48),
]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_layer(c_in, c_out, k, stride, h, repeat, rng, batch=8):
    pad = k // 2
    xp = np.ascontiguousarray(np.pad(rng.standard_normal((batch, c_in, h, h)),
                                     ((0, 0), (0, 0), (pad, pad), (pad, pad))))
    wmat = rng.standard_normal((c_out, c_in * k * k))
    out = kernels.conv_forward(xp, wmat, k, k, stride)
    g = rng.standard_normal(out.shape)
    fwd = best_of(lambda: kernels.conv_forward(xp, wmat, k, k, stride), repeat)
    bwd = best_of(lambda: kernels.conv_backward(xp, wmat, g, k, k, stride, True, True), repeat)
    return fwd, bwd


def bench_step(repeat, rng):
    model = AustNet(ModelConfig())
    x = rng.random((8, 3, 48, 48))
    gt = np.zeros((8, 48, 48))
    gt[:, 10:30, 12:28] = 1.0
    opt, state = Adam(), AdamState()
    train_step(model, (x, gt, None), opt, state)  # warm-up
    return best_of(lambda: train_step(model, (x, gt, None), opt, state), repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    results = {}
    for name in backends:
        prev = kernels.use_backend(name)
        rng = np.random.default_rng(0)
        rows = {label: bench_layer(*spec, args.repeat, rng) for label, *spec in LAYERS}
        rows["train step (batch 8)"] = (bench_step(args.repeat, rng), None)
        results[name] = rows
        kernels.use_backend(prev)
    print(f"{'case':<22}" + "".join(f"{b + ' fwd':>14}{b + ' bwd':>14}" for b in backends)
          + ("   speedup fwd/bwd" if len(backends) == 2 else ""))
    for label in results[backends[0]]:
        line = f"{label:<22}"
        for b in backends:
            f, bw = results[b][label]
            line += f"{f * 1e3:>12.2f}ms" + (f"{bw * 1e3:>12.2f}ms" if bw is not None else f"{'':>14}")
        if len(backends) == 2:
            (pf, pb), (cf, cb) = results["python"][label], results["cython"][label]
            line += f"   {pf / cf:5.1f}x" + (f" / {pb / cb:4.1f}x" if pb is not None else "")
        print(line)
    if "cython" not in backends:
        print("compiled backend unavailable; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
