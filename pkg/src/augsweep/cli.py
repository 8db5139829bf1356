"""Command-line entry point: ``augsweep {augment,train,sweep,gradcam,report}``.

A single INI config file may hold ``[train]``, ``[model]`` and ``[data]``
sections plus one section per augmentation technique; command-line flags
override it. Every artifact-producing command writes ``manifest.json`` into
``--out``. Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

import torch

from augsweep import kernels
from augsweep.augment import AugmentationPipeline, parse_techniques
from augsweep.dataio import (
    CheckpointError,
    DataError,
    GlyphSpec,
    distort_images,
    load_checkpoint,
    load_image_dir,
    read_png,
    save_checkpoint,
    synth_glyphs,
    write_png,
)
from augsweep.gradcam import export_misclassified, gradcam, overlay
from augsweep.imagecore import resize
from augsweep.nn.model import ModelConfig, build_model, count_params
from augsweep.sweep import DEFAULT_TECHNIQUES, parse_csv, render_report, run_sweep
from augsweep.trainer import TrainConfig, TrainingError, evaluate, predict_logits, split_dataset, train

log = logging.getLogger("augsweep")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        try:
            cp.read_string(p.read_text())
        except configparser.Error as exc:
            raise UsageError(f"cannot parse config {p}: {exc}") from exc
    return cp


def config_text(cp: configparser.ConfigParser) -> str:
    return "\n".join(
        f"[{s}]\n" + "".join(f"{k} = {v}\n" for k, v in cp[s].items()) for s in cp.sections()
    )


def _coerce(cls, raw: dict):
    defaults = cls()
    out = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        v, d = raw[f.name], getattr(defaults, f.name)
        if isinstance(d, tuple):
            out[f.name] = tuple(int(x) for x in str(v).replace("(", "").replace(")", "").split(",") if x.strip())
        elif isinstance(d, bool):
            out[f.name] = str(v).lower() in ("1", "true", "yes", "on")
        elif isinstance(d, int):
            out[f.name] = int(v)
        elif isinstance(d, float):
            out[f.name] = float(v)
        else:
            out[f.name] = v
    unknown = set(raw) - {f.name for f in fields(cls)}
    if unknown:
        raise UsageError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**out)


def train_config(cp, args) -> TrainConfig:
    raw = dict(cp["train"]) if cp.has_section("train") else {}
    for key, flag in (("max_epochs", "epochs"), ("learning_rate", "lr"), ("batch_size", "batch_size"),
                      ("patience", "patience"), ("seed", "seed")):
        val = getattr(args, flag, None)
        if val is not None:
            raw[key] = val
    try:
        return _coerce(TrainConfig, raw)
    except ValueError as exc:
        raise UsageError(f"invalid train config: {exc}") from exc


def model_config(cp, num_classes: int, input_size: int) -> ModelConfig:
    raw = dict(cp["model"]) if cp.has_section("model") else {}
    raw.setdefault("num_classes", num_classes)
    raw.setdefault("input_size", input_size)
    try:
        return _coerce(ModelConfig, raw)
    except ValueError as exc:
        raise UsageError(f"invalid model config: {exc}") from exc


def data_section(cp) -> dict:
    return dict(cp["data"]) if cp.has_section("data") else {}


def load_data(args, cp, seed: int):
    """Dataset plus its stratified split; synthetic test images get a fixed mild distortion."""
    sec = data_section(cp)
    size = int(sec.get("image_size", 64))
    if args.synthetic:
        spec = GlyphSpec(
            num_classes=int(sec.get("num_classes", 10)),
            samples_per_class=int(sec.get("samples_per_class", 200)),
            image_size=size,
            stroke_jitter=float(sec.get("stroke_jitter", 0.05)),
            seed=seed,
        )
        data = synth_glyphs(spec)
        split = split_dataset(data.labels, seed)
        if str(sec.get("test_distortion", "true")).lower() in ("1", "true", "yes", "on"):
            data = distort_images(data, split.test, seed)
        return data, split
    if not args.data_dir:
        raise UsageError("pass --data-dir or --synthetic")
    data = load_image_dir(args.data_dir, size)
    return data, split_dataset(data.labels, seed)


def pipeline_from(cp, args, seed: int) -> AugmentationPipeline:
    pl = AugmentationPipeline.from_config(config_text(cp), seed=seed)
    if getattr(args, "techniques", None):
        chosen = parse_techniques(args.techniques)
        pl = AugmentationPipeline({t: pl.ops.get(t) for t in chosen}, seed=seed)
    return pl


def technique_params(cp) -> dict:
    return AugmentationPipeline.from_config(config_text(cp)).ops


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, command: str, seed: int, cp, started: str, outputs, extra=None) -> Path:
    text = config_text(cp)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "seed": seed,
        "config": text,
        "config_digest": hashlib.sha256(text.encode()).hexdigest()[:16],
        "kernel_backend": kernels.backend(),
        "torch_threads": torch.get_num_threads(),
        "started": started,
        "finished": _now(),
        "outputs": sorted(str(Path(o).relative_to(out)) for o in outputs),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_augment(args) -> int:
    started = _now()
    cp = read_config(args.config)
    seed = args.seed if args.seed is not None else 0
    pl = pipeline_from(cp, args, seed)
    if not Path(args.image).is_file():
        raise UsageError(f"image not found: {args.image}")
    img = read_png(args.image)
    out = _out_dir(args)
    rng_for = lambda: pl.rng(0, 0)  # noqa: E731
    written = []
    for t, params in pl.ops.items():
        single = AugmentationPipeline({t: params}, seed=seed)
        path = out / f"{t.abbrev}.png"
        write_png(single.apply(img, rng_for()), path)
        written.append(path)
    composed = out / f"{pl.label.replace(' ', '')}.png"
    write_png(pl.apply(img, rng_for()), composed)
    if composed not in written:
        written.append(composed)
    write_manifest(out, "augment", seed, cp, started, written, {"pipeline": pl.label})
    print(f"wrote {len(written)} image(s) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    cp = read_config(args.config)
    cfg = train_config(cp, args)
    pl = pipeline_from(cp, args, cfg.seed)
    data, split = load_data(args, cp, cfg.seed)
    mcfg = model_config(cp, data.num_classes, data.image(0).width)
    out = _out_dir(args)
    model = build_model(mcfg, seed=cfg.seed)
    model, hist = train(model, data, split, pl, cfg)
    metrics = evaluate(model, split.test, data)
    ckpt = out / "model.augs"
    save_checkpoint(model, ckpt)
    hist_path = out / "history.csv"
    hist_path.write_text(hist.to_csv())
    met_path = out / "metrics.json"
    met = metrics.as_dict() | {
        "label": pl.label, "stopped_epoch": hist.stopped_epoch, "best_epoch": hist.best_epoch,
        "parameter_count": count_params(model),
    }
    met_path.write_text(json.dumps(met, indent=2) + "\n")
    write_manifest(out, "train", cfg.seed, cp, started, [ckpt, hist_path, met_path],
                   {"train_config": asdict(cfg), "model_config": json.loads(mcfg.to_text())})
    print(f"[{pl.label}] test accuracy {100 * metrics.accuracy:.2f}% "
          f"(stopped at epoch {hist.stopped_epoch}, best {hist.best_epoch})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = _now()
    cp = read_config(args.config)
    cfg = train_config(cp, args)
    techniques = parse_techniques(args.techniques) if args.techniques else DEFAULT_TECHNIQUES
    data, split = load_data(args, cp, cfg.seed)
    mcfg = model_config(cp, data.num_classes, data.image(0).width)
    out = _out_dir(args)
    hist_dir = out / "histories"
    hist_dir.mkdir(exist_ok=True)
    written = []

    def save_history(row):
        if row.history is not None:
            p = hist_dir / f"{row.label.replace(' ', '')}.csv"
            p.write_text(row.history.to_csv())
            written.append(p)

    report = run_sweep(data, split, cfg, techniques, mcfg, params=technique_params(cp), on_row=save_history)
    md, csv_path = out / "report.md", out / "report.csv"
    md.write_text(render_report(report, "markdown"))
    csv_path.write_text(render_report(report, "csv"))
    written += [md, csv_path]
    write_manifest(out, "sweep", cfg.seed, cp, started, written,
                   {"report": report.metadata, "best_label": report.best_label})
    print(render_report(report, "markdown"), end="")
    failed = [r.label for r in report.rows if not r.ok]
    if failed:
        print(f"failed rows: {', '.join(failed)}", file=sys.stderr)
    return EXIT_OK if len(failed) < len(report.rows) else EXIT_RUNTIME


def cmd_gradcam(args) -> int:
    started = _now()
    cp = read_config(args.config)
    seed = args.seed if args.seed is not None else 0
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model = load_checkpoint(args.checkpoint)
    out = _out_dir(args)
    written = []
    if args.image:
        img = read_png(args.image)
        size = model.cfg.input_size
        logits = predict_logits(model, [resize(img, size, size)])
        pred = int(logits.argmax(dim=1)[0])
        target = pred if args.target_class is None else args.target_class
        cam = gradcam(model, img, target, args.layer)
        path = out / f"{Path(args.image).stem}_{pred}_{args.label or 'unknown'}.png"
        write_png(overlay(cam, img), path)
        written.append(path)
    else:
        if not args.misclassified:
            raise UsageError("pass --image, or a dataset with --misclassified")
        data, split = load_data(args, cp, seed)
        if data.num_classes != model.cfg.num_classes:
            raise CheckpointError(
                f"checkpoint has {model.cfg.num_classes} classes, dataset has {data.num_classes}"
            )
        written = export_misclassified(model, data, split.test, out, args.layer)
        if not written:
            note = out / "misclassified.txt"
            note.write_text("none\n")
            written.append(note)
            print("no misclassified test samples: none")
    write_manifest(out, "gradcam", seed, cp, started, written, {"layer": args.layer})
    print(f"wrote {len(written)} file(s) to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"report CSV not found: {src}")
    report = parse_csv(src.read_text())
    text = render_report(report, "csv" if args.format == "csv" else "markdown")
    if args.out:
        out = _out_dir(args)
        dest = out / ("report.csv" if args.format == "csv" else "report.md")
        dest.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="augsweep", description="Augmentation ablation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=None, help="torch intra-op threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)
        if data:
            sp.add_argument("--data-dir")
            sp.add_argument("--synthetic", action="store_true",
                            help="10 classes x 200 synthetic glyphs at 64 px")

    def training(sp):
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--patience", type=int)

    sp = sub.add_parser("augment", help="preview each enabled technique and their composition")
    common(sp, data=False)
    sp.add_argument("--image", required=True)
    sp.add_argument("--techniques", help="comma list, e.g. RA,CJ")
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("train", help="train one model with one augmentation pipeline")
    common(sp)
    training(sp)
    sp.add_argument("--techniques")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="train every technique subset and tabulate test metrics")
    common(sp)
    training(sp)
    sp.add_argument("--techniques", help="comma list (default RR,RA,C,CJ)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gradcam", help="Grad-CAM overlays for an image or misclassified test samples")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image")
    sp.add_argument("--label", help="true label of --image, used in the file name")
    sp.add_argument("--target-class", type=int)
    sp.add_argument("--misclassified", action="store_true")
    sp.add_argument("--layer", default="stage4")
    sp.set_defaults(func=cmd_gradcam)

    sp = sub.add_parser("report", help="re-render a sweep report.csv")
    sp.add_argument("--input", required=True, help="report.csv")
    sp.add_argument("--format", choices=["md", "csv"], default="md")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (UsageError, CheckpointError, ValueError, DataError) as exc:
        print(f"augsweep: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, RuntimeError, OSError) as exc:
        print(f"augsweep: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
