"""Command-line entry point: ``skyrmseg <command> [options]``.

Configuration is a flat set of ``key = value`` pairs resolved in the order
built-in defaults < preset < config file < command-line flags. Every command
writes its artifacts into a fresh timestamped run directory together with
the fully resolved configuration (``config.txt``). The directory is staged
under a hidden name and renamed only when the command succeeds, so a failed
command leaves no partial outputs behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import evaluation as ev
from . import unet
from .checkpoint import load_checkpoint
from .data import io
from .data.augment import AugmentSpec, tta_predict
from .data.dataset import load_dataset, save_dataset, split_summary
from .data.synth import SynthSpec, synth_generate
from .errors import ConfigError, DataError, SkyrmError, TrainingAborted
from .optimization import LossConfig, TrainConfig, fit, multi_run_stats

log = logging.getLogger("skyrmseg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

DEFAULT_PRESET = "benchmark3"
CONFIG_ECHO = "config.txt"


# ---------------------------------------------------------------------------
# Value parsing
# ---------------------------------------------------------------------------

def parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_size(text):
    """``128`` or ``128x96`` -> (h, w)."""
    if isinstance(text, tuple):
        return text
    parts = str(text).lower().replace(",", "x").split("x")
    if len(parts) == 1:
        return (int(parts[0]), int(parts[0]))
    if len(parts) == 2:
        return (int(parts[0]), int(parts[1]))
    raise ValueError(f"not a size: {text!r}")


def parse_weights(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    if isinstance(text, tuple):
        return text
    return tuple(float(v) for v in str(text).split(","))


def parse_path(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return str(text).strip()


def format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and len(value) == 2 and all(isinstance(v, int) for v in value):
        return f"{value[0]}x{value[1]}"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    name: str
    default: object
    parse: object
    section: str
    target: str | None = None  # field name in the section's dataclass
    help: str = ""


def _parser_for(default):
    if isinstance(default, bool):
        return parse_bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _dataclass_keys(cls, section, prefix="", skip=(), rename=None, overrides=None):
    rename = rename or {}
    overrides = overrides or {}
    inst = cls()
    keys = []
    for f in fields(cls):
        if f.name in skip:
            continue
        default = getattr(inst, f.name)
        parse = overrides.get(f.name) or _parser_for(default)
        keys.append(Key(prefix + rename.get(f.name, f.name), default, parse, section, f.name))
    return keys


def _build_keys():
    keys = []
    keys += _dataclass_keys(unet.UNetConfig, "model", skip=("in_channels",),
                            rename={"dropout_rate": "dropout"},
                            overrides={"input_size": parse_size})
    keys += _dataclass_keys(TrainConfig, "train", skip=("base_seed",))
    keys += _dataclass_keys(LossConfig, "loss", overrides={"class_weights": parse_weights})
    keys.append(Key("augment", False, parse_bool, "augment", None,
                    "enable the augmentation pipeline"))
    keys += _dataclass_keys(AugmentSpec, "augment", prefix="aug_")
    keys += _dataclass_keys(SynthSpec, "synth", prefix="synth_")
    for name, helptext in [
        ("data", "dataset root (split dirs with images/ and masks/)"),
        ("checkpoint", "model checkpoint file"),
        ("images", "image file or directory to predict on"),
        ("pred", "directory of predicted mask PNGs"),
        ("truth", "directory of ground-truth mask PNGs"),
        ("probe_image", "image for the inversion experiment"),
    ]:
        keys.append(Key(name, None, parse_path, "paths", None, helptext))
    keys += [
        Key("seed", 0, int, "run", None, "base random seed"),
        Key("threads", 0, int, "run", None, "worker thread cap (0 = library default)"),
        Key("tta", False, parse_bool, "predict", None, "test-time augmentation"),
        Key("eval_split", "test", str, "eval", None, "split scored when eval predicts itself"),
        Key("speckle_max", 10, int, "eval", None, "largest component counted as a speckle"),
        Key("connectivity", 8, int, "eval", None, "component connectivity (4 or 8)"),
        Key("hist_bin", 25, int, "eval", None, "size-histogram bin width (pixels)"),
        Key("hist_max", 2000, int, "eval", None, "size-histogram upper edge (pixels)"),
        Key("probe_size", 64, int, "probe", None, "side length of the uniform probe images"),
        Key("min_defect_size", 20, int, "bootstrap", None,
            "smallest predicted defect component merged into the labels"),
    ]
    return {k.name: k for k in keys}


KEYS = _build_keys()

_TABLE = {"epochs": 15, "early_stop_patience": 3, "plateau_patience": 2,
          "activation": "relu", "smoothing_alpha": 0.2}
PRESETS = {
    "benchmark2": {**_TABLE, "num_classes": 2, "dropout": 0.05, "augment": False},
    "benchmark3": {**_TABLE, "num_classes": 3, "dropout": 0.05, "augment": False},
    "master": {**_TABLE, "num_classes": 3, "dropout": 0.10, "augment": True,
               "aug_inversion": False},
    "inversion": {**_TABLE, "num_classes": 3, "dropout": 0.10, "augment": True,
                  "aug_inversion": True},
}


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------

class RunConfig(dict):
    """Fully resolved flat configuration plus the preset name."""

    preset: str = DEFAULT_PRESET

    def section(self, cls, section, **extra):
        kw = {k.target: self[k.name] for k in KEYS.values()
              if k.section == section and k.target is not None}
        kw.update(extra)
        return cls(**kw)

    def model_config(self):
        return self.section(unet.UNetConfig, "model")

    def train_config(self):
        return self.section(TrainConfig, "train", base_seed=self["seed"])

    def loss_config(self):
        return self.section(LossConfig, "loss")

    def augment_spec(self):
        return self.section(AugmentSpec, "augment") if self["augment"] else None

    def synth_spec(self):
        return self.section(SynthSpec, "synth")

    def require(self, name):
        value = self[name]
        if value is None:
            raise ConfigError(f"key {name!r} is required for this command")
        return value

    def echo(self):
        lines = [f"preset = {self.preset}"]
        section = None
        for k in KEYS.values():
            if k.section != section:
                section = k.section
                lines.append(f"# {section}")
            lines.append(f"{k.name} = {format_value(self[k.name])}")
        return "\n".join(lines) + "\n"


def _coerce(name, raw, origin):
    key = KEYS.get(name)
    if key is None:
        raise ConfigError(f"{origin}: unknown key {name!r}")
    try:
        return key.parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{origin}: cannot parse {name} = {raw!r} ({exc})") from None


def read_config_file(path):
    """Parse a ``key = value`` file into {key: raw string}."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"config file {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        name, value = (part.strip() for part in line.split("=", 1))
        if name != "preset" and name not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {name!r}")
        out[name] = (value, f"{path}:{lineno}")
    return out


def parse_config(config_file=None, overrides=None, preset=None):
    """Resolve defaults < preset < file < overrides into a RunConfig.

    ``overrides`` maps key -> raw value (string or already-typed). A preset
    named on the command line wins over one named in the file.
    """
    overrides = dict(overrides or {})
    file_values = read_config_file(config_file) if config_file else {}
    if preset is None and "preset" in file_values:
        preset = file_values.pop("preset")[0]
    file_values.pop("preset", None)
    preset = preset or DEFAULT_PRESET
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})")

    cfg = RunConfig({k.name: k.default for k in KEYS.values()})
    cfg.preset = preset
    cfg.update(PRESETS[preset])
    for name, (raw, origin) in file_values.items():
        cfg[name] = _coerce(name, raw, origin)
    for name, raw in overrides.items():
        cfg[name] = _coerce(name, raw, "command line")

    # surface invalid combinations now, naming the offending section
    for build in (cfg.model_config, cfg.train_config, cfg.loss_config, cfg.synth_spec):
        build()
    if cfg["augment"]:
        cfg.augment_spec()
    if cfg["connectivity"] not in (4, 8):
        raise ConfigError(f"connectivity must be 4 or 8, got {cfg['connectivity']}")
    return cfg


# ---------------------------------------------------------------------------
# Run directories
# ---------------------------------------------------------------------------

def output_root(cfg_out=None):
    return Path(cfg_out or os.environ.get("SKYRM_OUT") or "runs")


class RunDir:
    """Staged output directory, renamed into place on success."""

    def __init__(self, root, command):
        self.root = Path(root)
        stamp = time.strftime("%Y%m%d-%H%M%S") + f"-{time.time_ns() % 1_000_000_000:09d}"
        self.final = self.root / f"{stamp}-{command}"
        self.path = self.root / f".{self.final.name}.partial"

    def __enter__(self):
        self.path.mkdir(parents=True)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.path.rename(self.final)
        else:
            shutil.rmtree(self.path, ignore_errors=True)
        return False

    def __truediv__(self, name):
        return self.path / name


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _existing(cfg, name):
    path = Path(cfg.require(name))
    if not path.exists():
        raise DataError(f"{name}: {path} does not exist")
    return path


def _load_model(cfg):
    ckpt = load_checkpoint(_existing(cfg, "checkpoint"))
    return ckpt.config, ckpt.params, ckpt


def _probability_fn(config, params, tta):
    def plain(image):
        return unet.predict_proba(params, config, image)[0]

    if not tta:
        return plain

    def with_tta(image):
        return tta_predict(lambda im: unet.predict_proba(params, config, im), image)

    return with_tta


def _image_paths(path):
    path = Path(path)
    if path.is_file():
        return [path]
    images = io.list_images(path)
    if not images and (path / "images").is_dir():
        images = io.list_images(path / "images")
    if not images:
        raise DataError(f"{path}: no .png or .pgm images found")
    return images


def cmd_synth(cfg, run):
    spec = cfg.synth_spec()
    ds = synth_generate(spec, cfg["seed"])
    save_dataset(run / "dataset", ds)
    stats = split_summary(ds, cfg["connectivity"])
    with open(run / "split_summary.csv", "w") as fh:
        fh.write("split,images,sources,skyrmion_fraction,skyrmion_count,defect_fraction\n")
        for split, s in stats.items():
            fh.write(f"{split},{s.images},{s.sources},{s.skyrmion_fraction:.6f},"
                     f"{s.skyrmion_count},{s.defect_fraction:.6f}\n")
    return {"dataset": str(run.final / "dataset")}


def cmd_train(cfg, run):
    data = _existing(cfg, "data")
    config = cfg.model_config()
    train_cfg = cfg.train_config()
    loss_cfg = cfg.loss_config()
    augment = cfg.augment_spec()
    dataset = load_dataset(data, config.num_classes)
    ckpt_dir = run / "checkpoints"
    ckpt_dir.mkdir()

    def run_fn(seed, i):
        _, report = fit(config, dataset, train_cfg, loss_cfg, augment, seed=seed,
                        checkpoint_path=ckpt_dir / f"run{i}.skrm")
        return report

    report = multi_run_stats(run_fn, train_cfg.runs, base_seed=cfg["seed"])
    for r in report.runs:
        if r.checkpoint_path:
            r.checkpoint_path = str(run.final / "checkpoints" / Path(r.checkpoint_path).name)
    report.write_csv(run / "train_log.csv")
    report.write_json(run / "train_report.json")
    finished = [(r.best_mcc, i) for i, r in enumerate(report.runs)
                if r.aborted is None and r.best_epoch > 0]
    result = {"mean_mcc": report.mean_mcc, "sd_mcc": report.sd_mcc, "partial": report.partial}
    if finished:
        _, best = max(finished)
        shutil.copyfile(ckpt_dir / f"run{best}.skrm", run / "model.skrm")
        result["checkpoint"] = str(run.final / "model.skrm")
    if report.partial:
        result["exit"] = EXIT_RUNTIME
    return result


def cmd_predict(cfg, run):
    config, params, _ = _load_model(cfg)
    paths = _image_paths(_existing(cfg, "images"))
    proba = _probability_fn(config, params, cfg["tta"])
    out = run / "masks"
    out.mkdir()
    for p in paths:
        mask = unet.argmax_mask(proba(io.load_image(p))[None])[0]
        io.save_mask(out / f"{p.stem}.png", mask)
    return {"masks": str(run.final / "masks"), "count": len(paths)}


def _paired_masks(pred_dir, truth_dir):
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    if (truth_dir / "masks").is_dir():
        truth_dir = truth_dir / "masks"
    preds = sorted(pred_dir.glob("*.png"))
    if not preds:
        raise DataError(f"{pred_dir}: no mask PNGs found")
    triples = []
    for p in preds:
        t = truth_dir / p.name
        if not t.exists():
            raise DataError(f"{p}: no ground-truth mask {t}")
        pm, tm = io.load_mask(p), io.load_mask(t)
        if pm.shape != tm.shape:
            raise DataError(f"prediction {p} {pm.shape[0]}x{pm.shape[1]} and truth {t} "
                            f"{tm.shape[0]}x{tm.shape[1]} differ in size")
        triples.append((p.stem, pm, tm))
    return triples


def _predicted_split(cfg, run):
    config, params, _ = _load_model(cfg)
    data = _existing(cfg, "data")
    split = cfg["eval_split"]
    dataset = load_dataset(data, 3)
    samples = dataset.splits.get(split)
    if not samples:
        raise DataError(f"{data}: split {split!r} is missing or empty")
    proba = _probability_fn(config, params, cfg["tta"])
    out = run / "masks"
    out.mkdir()
    triples = []
    for s in samples:
        pred = unet.argmax_mask(proba(s.image)[None])[0]
        io.save_mask(out / f"{s.source_id}.png", pred)
        triples.append((s.source_id, pred, s.mask))
    return triples


def cmd_eval(cfg, run):
    if cfg["pred"] is not None:
        triples = _paired_masks(_existing(cfg, "pred"), _existing(cfg, "truth"))
    elif cfg["checkpoint"] is not None:
        triples = _predicted_split(cfg, run)
    else:
        raise ConfigError("eval needs key 'pred' (with 'truth') or 'checkpoint' (with 'data')")
    conn = cfg["connectivity"]
    rows, pooled = ev.evaluate_masks(triples, speckle_max=cfg["speckle_max"], connectivity=conn)
    ev.write_metrics_csv(run / "metrics.csv", rows)
    bins = ev.default_bins(cfg["hist_bin"], cfg["hist_max"])
    hist = ev.size_histogram([t[1] for t in triples], unet.SKYRMION, bins, conn)
    ref = ev.size_histogram([t[2] for t in triples], unet.SKYRMION, bins, conn)
    hist.write_csv(run / "histogram.csv")
    ref.write_csv(run / "histogram_truth.csv")
    ev.render_histogram_png(run / "histogram.png", hist, ref)
    summary = {
        "images": len(rows),
        "pooled_mcc": pooled,
        "mean_image_mcc": float(np.mean([r.mcc for r in rows])),
        "median_speckles": float(np.median([r.speckles for r in rows])),
        "pred_mean_size": hist.mean,
        "truth_mean_size": ref.mean,
        "pred_components": int(hist.counts.sum()),
        "truth_components": int(ref.counts.sum()),
    }
    (run / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_probe(cfg, run):
    config, params, _ = _load_model(cfg)
    k = config.num_classes

    def predict_stack(stack):
        return unet.argmax_mask(unet.predict_proba(params, config, stack))

    size = cfg["probe_size"]
    probe = ev.greyscale_probe(predict_stack, k, (size, size))
    probe.write_csv(run / "probe.csv")
    ev.render_probe_png(run / "probe.png", probe)
    summary = {
        "transitions": probe.transitions(),
        "dark_end": unet.CLASS_NAMES[int(probe.dominant[0])],
        "bright_end": unet.CLASS_NAMES[int(probe.dominant[-1])],
    }
    if cfg["probe_image"] is not None:
        image = io.load_image(_existing(cfg, "probe_image"))
        proba = _probability_fn(config, params, cfg["tta"])
        inv = ev.inversion_experiment(lambda im: unet.argmax_mask(proba(im)[None])[0], image, k)
        io.save_mask(run / "inversion_original.png", inv.mask_original)
        io.save_mask(run / "inversion_inverted.png", inv.mask_inverted)
        summary["inversion"] = inv.as_dict()
    (run / "probe.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def bootstrap_relabel(pred_mask, label_mask, min_defect_size=20, connectivity=8):
    """Merge predicted defect components into a 2-class label mask.

    Components of predicted defect pixels smaller than ``min_defect_size`` are
    dropped; existing skyrmion labels win over predicted defects.
    """
    out = np.asarray(label_mask, dtype=np.uint8).copy()
    for comp in ev.connected_components(pred_mask, unet.DEFECT, connectivity):
        if comp.size >= min_defect_size:
            sel = comp.pixels
            keep = out[sel[:, 0], sel[:, 1]] != unet.SKYRMION
            out[sel[keep, 0], sel[keep, 1]] = unet.DEFECT
    return out


def _split_dirs(root):
    root = Path(root)
    if (root / "images").is_dir():
        return [(None, root)]
    dirs = [(d.name, d) for d in sorted(root.iterdir()) if (d / "images").is_dir()]
    if not dirs:
        raise DataError(f"{root}: no images/ directory found")
    return dirs


def cmd_bootstrap(cfg, run):
    config, params, _ = _load_model(cfg)
    if cfg["num_classes"] != 3:
        raise ConfigError(f"bootstrap writes 3-class labels; num_classes is {cfg['num_classes']}")
    if config.num_classes != 3:
        raise ConfigError(f"checkpoint {cfg['checkpoint']} predicts {config.num_classes} "
                          f"classes; bootstrap needs a 3-class (defect-aware) model")
    data = _existing(cfg, "data")
    proba = _probability_fn(config, params, cfg["tta"])
    merged_px = 0
    n = 0
    for split, d in _split_dirs(data):
        out = run / "dataset" / split if split else run / "dataset"
        for p in io.list_images(d / "images"):
            mask_path = d / "masks" / f"{p.stem}.png"
            if not mask_path.exists():
                raise DataError(f"{p}: no matching mask {mask_path}")
            # any existing defect labels are discarded: the input is the 2-class view
            labels = io.load_mask(mask_path, num_classes=3, collapse_defects=True)
            image = io.load_image(p)
            if image.shape != labels.shape:
                raise DataError(f"image {p} and mask {mask_path} differ in size")
            pred = unet.argmax_mask(proba(image)[None])[0]
            merged = bootstrap_relabel(pred, labels, cfg["min_defect_size"],
                                       cfg["connectivity"])
            merged_px += int(np.count_nonzero(merged == unet.DEFECT))
            (out / "images").mkdir(parents=True, exist_ok=True)
            shutil.copyfile(p, out / "images" / p.name)
            io.save_mask(out / "masks" / f"{p.stem}.png", merged)
            n += 1
    return {"dataset": str(run.final / "dataset"), "images": n, "defect_pixels": merged_px}


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError):
        return None


def cmd_report(cfg, run, paths=()):
    root = output_root(cfg.get("out"))
    dirs = [Path(p) for p in paths] if paths else sorted(
        d for d in root.iterdir() if d.is_dir() and not d.name.startswith("."))
    entries = []
    for d in dirs:
        if not d.is_dir():
            raise DataError(f"{d}: not a run directory")
        entry = {"run": d.name}
        for name in ("train_report.json", "summary.json", "probe.json"):
            blob = _read_json(d / name)
            if blob is not None:
                entry[name.removesuffix(".json")] = blob
        entries.append(entry)
    lines = ["# Run report", ""]
    for e in entries:
        lines.append(f"## {e['run']}")
        tr = e.get("train_report")
        if tr:
            lines.append(f"- training: {tr['runs']} run(s), validation MCC "
                         f"{tr['mean_mcc']:.4f} (SD {tr['sd_mcc']:.4f})"
                         + (" [partial]" if tr.get("partial") else ""))
        sm = e.get("summary")
        if sm:
            lines.append(f"- evaluation: {sm['images']} image(s), pooled MCC "
                         f"{sm['pooled_mcc']:.4f}, median speckles {sm['median_speckles']:g}")
        pr = e.get("probe")
        if pr:
            lines.append(f"- probe: transitions at {pr['transitions']}, dark end "
                         f"{pr['dark_end']}, bright end {pr['bright_end']}")
        lines.append("")
    text = "\n".join(lines)
    (run / "report.md").write_text(text)
    (run / "report.json").write_text(json.dumps(entries, indent=2) + "\n")
    print(text)
    return {"runs": len(entries)}


COMMANDS = {
    "train": (cmd_train, "train one or more models and write checkpoints and reports"),
    "predict": (cmd_predict, "write predicted mask PNGs for images"),
    "eval": (cmd_eval, "score predicted masks against ground truth"),
    "probe": (cmd_probe, "uniform-greyscale probe and optional inversion experiment"),
    "synth": (cmd_synth, "generate a synthetic labelled dataset"),
    "bootstrap": (cmd_bootstrap, "weakly relabel 2-class data with a defect-aware model"),
    "report": (cmd_report, "summarize run directories"),
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="key = value configuration file")
    g.add_argument("--preset", choices=sorted(PRESETS), help=f"default {DEFAULT_PRESET}")
    g.add_argument("--out", help="output root (default $SKYRM_OUT or ./runs)")
    g.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    keys = common.add_argument_group("configuration keys")
    for k in KEYS.values():
        flag = "--" + k.name.replace("_", "-")
        keys.add_argument(flag, dest=f"key:{k.name}", default=argparse.SUPPRESS,
                          metavar="V", help=k.help or f"default {format_value(k.default)}")

    parser = argparse.ArgumentParser(prog="skyrmseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        sp = sub.add_parser(name, parents=[common], help=helptext)
        if name == "report":
            sp.add_argument("paths", nargs="*", help="run directories (default: all under --out)")
    return parser


def run_command(argv=None):
    """Parse ``argv`` and execute. Returns (exit code, result dict or None)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    overrides = {k.split(":", 1)[1]: v for k, v in vars(args).items() if k.startswith("key:")}
    try:
        cfg = parse_config(args.config, overrides, args.preset)
        cfg["out"] = args.out
        fn = COMMANDS[args.command][0]
        limits = cfg["threads"] if cfg["threads"] > 0 else None
        with threadpool_limits(limits=limits):
            with RunDir(output_root(args.out), args.command) as run:
                (run / CONFIG_ECHO).write_text(cfg.echo())
                if args.command == "report":
                    result = fn(cfg, run, args.paths)
                else:
                    result = fn(cfg, run)
        result = dict(result or {})
        result["run_dir"] = str(run.final)
        print(json.dumps(result, default=str))
        return result.pop("exit", EXIT_OK), result
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG, None
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA, None
    except (TrainingAborted, SkyrmError) as exc:
        log.error("runtime error: %s", exc)
        return EXIT_RUNTIME, None


def main(argv=None):
    code, _ = run_command(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
