"""``austkit`` command line: gen, train, eval, predict, inspect.

Options resolve as flags > JSON config file (``--config``) > defaults, and
every command writes the resolved options to ``config.json`` in its output
directory. Exit codes: 0 ok, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import datagen, metrics
from .model import AustNet, CheckpointError, ModelConfig, NonFiniteLossError, load_checkpoint, save_checkpoint
from .pngio import PNGError, load_png, save_png, save_png_uint8
from .training import TrainConfig, fit

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
SEED_ENV = "AUSTKIT_SEED"


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(f"{self.prog}: {message}")


# defaults per command; every key is also a flag dest
DEFAULTS = {
    "gen": dict(n=64, out=None, seed=0, regions="1..1", size="48x48", jobs=1),
    "train": dict(data=None, out=None, steps=2000, batch_size=8, lr=1e-3, lr_min=0.0, weight_decay=1e-4,
                  seed=0, ckpt_every=0, n=None, semantic=False, normalize_scores=True, decoder_stages=3,
                  style_channels=32, margin=0.5),
    "eval": dict(ckpt=None, data=None, out=None, threshold=0.5, ap_protocol="macro", zero_voting=False,
                 jobs=1, n=None, oracle=False, seed=0),
    "predict": dict(ckpt=None, data=None, image=None, labels=None, out=None, zero_voting=False, n=None, seed=0),
    "inspect": dict(ckpt=None, image=None, labels=None, out=None, zero_voting=False, seed=0),
}
REQUIRED = {"gen": ("out",), "train": ("data", "out"), "eval": ("data", "out"),
            "predict": ("ckpt", "out"), "inspect": ("ckpt", "image", "out")}


def build_parser():
    p = _Parser(prog="austkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values (flags override it)")
        sp.add_argument("--seed", type=int, help=f"random seed (fallback: ${SEED_ENV}, then 0)")

    g = sub.add_parser("gen", help="generate a synthetic composite dataset")
    common(g)
    g.add_argument("--n", type=int, help="number of samples")
    g.add_argument("--out", help="dataset directory")
    g.add_argument("--regions", help="inharmonious region count range, e.g. 1..1 or 2..9")
    g.add_argument("--size", help="image size HxW, multiples of 8")
    g.add_argument("--jobs", type=int, help="worker processes")

    t = sub.add_parser("train", help="train a model on a dataset directory")
    common(t)
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", help="run directory")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float, help="peak learning rate of the cosine schedule")
    t.add_argument("--lr-min", type=float)
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--ckpt-every", type=int, help="extra checkpoint every N steps (0: final only)")
    t.add_argument("--n", type=int, help="use only the first N training samples")
    t.add_argument("--semantic", action=argparse.BooleanOptionalAction, help="semantic-guided voting")
    t.add_argument("--normalize-scores", action=argparse.BooleanOptionalAction,
                   help="divide vote scores by the voter mass")
    t.add_argument("--decoder-stages", type=int)
    t.add_argument("--style-channels", type=int)
    t.add_argument("--margin", type=float)

    e = sub.add_parser("eval", help="evaluate a checkpoint (AP, F1, IoU)")
    common(e)
    e.add_argument("--ckpt", help="checkpoint file")
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--out", help="report directory")
    e.add_argument("--threshold", type=float)
    e.add_argument("--ap-protocol", choices=("macro", "pooled"))
    e.add_argument("--zero-voting", action=argparse.BooleanOptionalAction)
    e.add_argument("--jobs", type=int, help="worker processes")
    e.add_argument("--n", type=int, help="evaluate only the first N samples")
    e.add_argument("--oracle", action=argparse.BooleanOptionalAction, help=argparse.SUPPRESS)

    pr = sub.add_parser("predict", help="write predicted masks")
    common(pr)
    pr.add_argument("--ckpt", help="checkpoint file")
    pr.add_argument("--data", help="dataset directory")
    pr.add_argument("--image", help="single RGB PNG instead of a dataset")
    pr.add_argument("--labels", help="semantic label PNG for --image (semantic models)")
    pr.add_argument("--out", help="output directory")
    pr.add_argument("--zero-voting", action=argparse.BooleanOptionalAction)
    pr.add_argument("--n", type=int)

    i = sub.add_parser("inspect", help="dump per-stage voting maps and masks for one image")
    common(i)
    i.add_argument("--ckpt", help="checkpoint file")
    i.add_argument("--image", help="RGB PNG")
    i.add_argument("--labels", help="semantic label PNG (semantic models)")
    i.add_argument("--out", help="output directory")
    i.add_argument("--zero-voting", action=argparse.BooleanOptionalAction)
    return p


def resolve(command, args, environ=None):
    """Merge flags, config file and defaults into one dict."""
    environ = os.environ if environ is None else environ
    defaults = DEFAULTS[command]
    from_file = {}
    if args.config:
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UserError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(from_file, dict):
            raise UserError(f"config file {args.config} must hold a JSON object")
        unknown = sorted(set(from_file) - set(defaults))
        if unknown:
            raise UserError(f"unknown keys in config file for '{command}': {', '.join(unknown)}")
    cfg = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
        elif key in from_file:
            cfg[key] = from_file[key]
        elif key == "seed" and environ.get(SEED_ENV):
            try:
                cfg[key] = int(environ[SEED_ENV])
            except ValueError:
                raise UserError(f"${SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
        else:
            cfg[key] = default
    if command == "eval" and not cfg["oracle"] and cfg["ckpt"] is None:
        raise UserError("eval: --ckpt is required")
    for key in REQUIRED[command]:
        if cfg[key] is None:
            raise UserError(f"{command}: --{key.replace('_', '-')} is required")
    return cfg


def _write_config(out_dir, command, cfg):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({"command": command, **cfg}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_range(text):
    try:
        lo, _, hi = str(text).partition("..")
        lo, hi = int(lo), int(hi or lo)
    except ValueError:
        raise UserError(f"bad region range {text!r}; expected A..B") from None
    if not 1 <= lo <= hi <= 9:
        raise UserError(f"region range {lo}..{hi} must lie within 1..9")
    return lo, hi


def parse_size(text):
    try:
        h, _, w = str(text).lower().partition("x")
        h, w = int(h), int(w or h)
    except ValueError:
        raise UserError(f"bad size {text!r}; expected HxW") from None
    if h <= 0 or w <= 0 or h % 8 or w % 8:
        raise UserError(f"size {h}x{w} must be positive multiples of 8")
    return h, w


def _load_data(path, n=None):
    if not os.path.isdir(path):
        raise UserError(f"dataset directory {path} does not exist")
    try:
        samples = datagen.load_dataset(path, n)
    except (FileNotFoundError, PNGError, KeyError) as exc:
        raise UserError(f"cannot load dataset {path}: {exc}") from None
    if not samples:
        raise UserError(f"dataset {path} is empty")
    return samples


def _load_model(path):
    if not os.path.isfile(path):
        raise UserError(f"checkpoint {path} does not exist")
    try:
        return load_checkpoint(path)
    except (CheckpointError, ValueError) as exc:
        raise UserError(str(exc)) from None


# -- commands --------------------------------------------------------------------
def cmd_gen(cfg):
    lo, hi = parse_range(cfg["regions"])
    if cfg["n"] < 1:
        raise UserError("gen: --n must be at least 1")
    gcfg = datagen.GeneratorConfig(size=parse_size(cfg["size"]), regions=(lo, hi), seed=cfg["seed"])
    samples = datagen.generate(gcfg, cfg["n"], jobs=max(1, cfg["jobs"]))
    datagen.write_dataset(samples, cfg["out"], gcfg)
    _write_config(cfg["out"], "gen", cfg)
    fewer = sum("fewer_regions" in s.meta.get("flags", []) for s in samples)
    print(f"wrote {len(samples)} samples to {cfg['out']}" + (f" ({fewer} with fewer regions)" if fewer else ""))


def model_config_from(cfg, samples):
    h, w = samples[0].image.shape[-2:]
    return ModelConfig(input_size=(h, w), style_channels=cfg["style_channels"],
                       decoder_stages=cfg["decoder_stages"], semantic_mode=bool(cfg["semantic"]),
                       normalize_scores=bool(cfg["normalize_scores"]), margin=cfg["margin"], seed=cfg["seed"])


LOSS_COLUMNS = ("step", "lr")


def cmd_train(cfg):
    samples = _load_data(cfg["data"], cfg["n"])
    if cfg["steps"] < 0:
        raise UserError("train: --steps must be >= 0")
    try:
        mcfg = model_config_from(cfg, samples)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    model = AustNet(mcfg)
    out = cfg["out"]
    _write_config(out, "train", cfg)
    tc = TrainConfig(steps=cfg["steps"], batch_size=cfg["batch_size"], lr=cfg["lr"], lr_min=cfg["lr_min"],
                     weight_decay=cfg["weight_decay"], seed=cfg["seed"], ckpt_every=cfg["ckpt_every"])
    log = open(os.path.join(out, "loss.csv"), "w")
    header = []

    def on_step(step, lr, breakdown):
        row = breakdown.as_row()
        if not header:
            header.extend(row)
            log.write(",".join(LOSS_COLUMNS + tuple(header)) + "\n")
        log.write(",".join([str(step), "%.17g" % lr] + ["%.17g" % row[k] for k in header]) + "\n")
        log.flush()
        if step == 1 or step % 100 == 0 or step == tc.steps:
            print(f"step {step}/{tc.steps} loss {breakdown.total:.4f}", flush=True)

    def on_checkpoint(step):
        if step == tc.steps:
            save_checkpoint(model, os.path.join(out, "model.ckpt"))
        else:
            os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
            save_checkpoint(model, os.path.join(out, "checkpoints", f"step{step:06d}.ckpt"))

    try:
        fit(model, samples, tc, on_step=on_step, on_checkpoint=on_checkpoint)
    finally:
        log.close()
    print(f"checkpoint written to {os.path.join(out, 'model.ckpt')}")


def oracle_predictor(samples):
    return [s.gt_mask for s in samples]


def cmd_eval(cfg):
    samples = _load_data(cfg["data"], cfg["n"])
    model = oracle_predictor if cfg["oracle"] else _load_model(cfg["ckpt"])
    report = metrics.evaluate_dataset(model, samples, threshold=cfg["threshold"],
                                      ap_protocol=cfg["ap_protocol"], zero_voting=bool(cfg["zero_voting"]),
                                      jobs=max(1, cfg["jobs"]))
    out = cfg["out"]
    _write_config(out, "eval", cfg)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(report.to_text())
    with open(os.path.join(out, "per_image.csv"), "w") as fh:
        fh.write(report.per_image_csv())
    print(f"AP {_pct(report.ap)}  F1 {report.f1:.4f}  IoU {report.iou:.2f}  ({report.n_images} images)")


def _pct(v):
    return "n/a" if v is None else f"{v:.2f}"


def _image_inputs(model, image_path, labels_path):
    try:
        image = load_png(image_path)
    except (OSError, PNGError) as exc:
        raise UserError(f"cannot read image {image_path}: {exc}") from None
    if image.ndim != 3:
        raise UserError(f"{image_path} is not an RGB image")
    if tuple(image.shape[-2:]) != model.config.input_size:
        raise UserError(f"image is {image.shape[1]}x{image.shape[2]}, model expects "
                        f"{model.config.input_size[0]}x{model.config.input_size[1]}")
    sem = None
    if model.config.semantic_mode:
        if labels_path is None:
            raise UserError("semantic model needs --labels")
        sem = load_png(labels_path, raw=True).astype(np.int64)[None]
    return image[None], sem


def cmd_predict(cfg):
    model = _load_model(cfg["ckpt"])
    out = cfg["out"]
    if (cfg["data"] is None) == (cfg["image"] is None):
        raise UserError("predict: give exactly one of --data or --image")
    if cfg["image"] is not None:
        images, sem = _image_inputs(model, cfg["image"], cfg["labels"])
        names = [os.path.splitext(os.path.basename(cfg["image"]))[0] + "_mask.png"]
    else:
        samples = _load_data(cfg["data"], cfg["n"])
        images = np.stack([s.image for s in samples])
        sem = np.stack([s.sem_labels for s in samples]) if model.config.semantic_mode else None
        names = [f"{s.meta['id']}.png" for s in samples]
    _write_config(out, "predict", cfg)
    os.makedirs(os.path.join(out, "masks"), exist_ok=True)
    for start in range(0, len(images), 16):
        chunk = slice(start, start + 16)
        res = model.predict(images[chunk], None if sem is None else sem[chunk], zero_voting=bool(cfg["zero_voting"]))
        for name, m in zip(names[chunk], res.final_mask.data[:, 0]):
            save_png(os.path.join(out, "masks", name), m)
    print(f"wrote {len(names)} masks to {os.path.join(out, 'masks')}")


def _minmax_u8(a):
    lo, hi = float(a.min()), float(a.max())
    scaled = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8), lo, hi


def cmd_inspect(cfg):
    model = _load_model(cfg["ckpt"])
    images, sem = _image_inputs(model, cfg["image"], cfg["labels"])
    res = model.predict(images, sem, zero_voting=bool(cfg["zero_voting"]))
    out = cfg["out"]
    _write_config(out, "inspect", cfg)
    lines = ["# file\tmin\tmax (dumps are min-max scaled to 0..255)"]
    dumps = []
    for k, (score, mask) in enumerate(zip(res.score_maps, res.aux_masks), 1):
        dumps.append((f"stage{k}_score.png", score.data[0, 0]))
        dumps.append((f"stage{k}_mask.png", mask.data[0, 0]))
    dumps.append(("final_mask.png", res.final_mask.data[0, 0]))
    for name, a in dumps:
        u8, lo, hi = _minmax_u8(a)
        save_png_uint8(os.path.join(out, name), u8)
        lines.append(f"{name}\t{lo!r}\t{hi!r}")
    with open(os.path.join(out, "scaling.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {len(dumps)} maps to {out}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "inspect": cmd_inspect}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args.command, args)
        COMMANDS[args.command](cfg)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except NonFiniteLossError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
