"""Augmentation-combination sweep and its result tables."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from augsweep.augment import LABEL_ORDER, enumerate_combinations
from augsweep.nn.model import ModelConfig, build_model, count_params
from augsweep.trainer import SplitIndices, TrainConfig, TrainHistory, evaluate, train

log = logging.getLogger(__name__)

CSV_COLUMNS = ["label", "precision", "recall", "f1", "accuracy", "stopped_epoch", "wall_seconds"]
DEFAULT_TECHNIQUES = [t.abbrev for t in LABEL_ORDER]


@dataclass
class SweepRow:
    label: str
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    accuracy: float | None = None
    stopped_epoch: int = 0
    wall_seconds: float = 0.0
    error: str | None = None
    digest: str = ""
    history: TrainHistory | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def n_techniques(self) -> int:
        return 0 if self.label == "None" else self.label.count("+") + 1


@dataclass
class SweepReport:
    rows: list
    best_label: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.best_label is None:
            self.best_label = pick_best(self.rows)

    def row(self, label: str) -> SweepRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def pick_best(rows) -> str | None:
    """Highest accuracy; ties go to fewer techniques, then the smaller label."""
    ok = [r for r in rows if r.ok and r.accuracy is not None]
    if not ok:
        return None
    return min(ok, key=lambda r: (-r.accuracy, r.n_techniques, r.label)).label


def split_digest(split: SplitIndices) -> str:
    h = hashlib.sha256()
    for part in (split.train, split.val, split.test):
        h.update(np.asarray(part, dtype=np.int64).tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


def run_digest(model_cfg: ModelConfig, train_cfg: TrainConfig, split: SplitIndices, init_seed: int) -> str:
    text = f"{model_cfg.to_text()}|{train_cfg}|{split_digest(split)}|{init_seed}"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def run_sweep(data, split: SplitIndices, cfg: TrainConfig, techniques=None,
              model_cfg: ModelConfig | None = None, init_seed: int | None = None,
              params: dict | None = None, on_row=None) -> SweepReport:
    """Train one identically initialised model per technique subset and score it on the test split."""
    techniques = DEFAULT_TECHNIQUES if techniques is None else techniques
    model_cfg = model_cfg or ModelConfig(num_classes=data.num_classes)
    init_seed = cfg.seed if init_seed is None else init_seed
    pipelines = enumerate_combinations(techniques, params=params, seed=cfg.seed)
    digest = run_digest(model_cfg, cfg, split, init_seed)
    start = time.perf_counter()
    rows = []
    n_params = None
    for pl in pipelines:
        t0 = time.perf_counter()
        row = SweepRow(pl.label, digest=digest)
        try:
            model = build_model(model_cfg, seed=init_seed)
            n_params = count_params(model)
            model, hist = train(model, data, split, pl, cfg)
            m = evaluate(model, split.test, data)
            row.precision, row.recall, row.f1, row.accuracy = m.precision, m.recall, m.f1, m.accuracy
            row.stopped_epoch = hist.stopped_epoch
            row.history = hist
        except Exception as exc:  # one failed row must not sink the sweep
            log.exception("sweep row %s failed", pl.label)
            row.error = f"{type(exc).__name__}: {exc}"
        row.wall_seconds = time.perf_counter() - t0
        rows.append(row)
        log.info("row %-18s acc=%s epochs=%d %.1fs", row.label,
                 "ERROR" if not row.ok else f"{row.accuracy:.4f}", row.stopped_epoch, row.wall_seconds)
        if on_row is not None:
            on_row(row)
    meta = {
        "dataset": getattr(data, "name", "dataset"),
        "seed": cfg.seed,
        "init_seed": init_seed,
        "model_config_digest": model_cfg.digest(),
        "run_digest": digest,
        "parameter_count": n_params if n_params is not None else count_params(build_model(model_cfg)),
        "total_wall_seconds": time.perf_counter() - start,
    }
    return SweepReport(rows, metadata=meta)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def fmt_percent(x: float, decimals: int) -> str:
    return f"{100.0 * x:.{decimals}f}%"


def render_markdown(r: SweepReport) -> str:
    lines = [
        "| Augmentation Technique | precision | recall | f1-score | accuracy |",
        "|---|---|---|---|---|",
    ]
    for row in r.rows:
        if not row.ok:
            lines.append(f"| {row.label} | ERROR | ERROR | ERROR | ERROR |")
            continue
        acc = fmt_percent(row.accuracy, 2)
        if row.label == r.best_label:
            acc = f"**{acc}**"
        lines.append(
            f"| {row.label} | {fmt_percent(row.precision, 0)} | {fmt_percent(row.recall, 0)} "
            f"| {fmt_percent(row.f1, 0)} | {acc} |"
        )
    return "\n".join(lines) + "\n"


def render_csv(r: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in r.rows:
        if row.ok:
            metrics = [repr(float(v)) for v in (row.precision, row.recall, row.f1, row.accuracy)]
        else:
            metrics = ["ERROR"] * 4
        w.writerow([row.label, *metrics, row.stopped_epoch, repr(float(row.wall_seconds))])
    return buf.getvalue()


def render_report(r: SweepReport, fmt: str = "markdown") -> str:
    if not r.rows:
        raise ValueError("cannot render an empty report")
    if fmt in ("markdown", "md"):
        return render_markdown(r)
    if fmt == "csv":
        return render_csv(r)
    raise ValueError(f"unknown report format {fmt!r}")


def parse_csv(text: str, metadata: dict | None = None) -> SweepReport:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    rows = []
    for rec in reader:
        row = SweepRow(rec["label"], stopped_epoch=int(rec["stopped_epoch"]),
                       wall_seconds=float(rec["wall_seconds"]))
        if rec["accuracy"] == "ERROR":
            row.error = "ERROR"
        else:
            row.precision, row.recall, row.f1, row.accuracy = (
                float(rec[k]) for k in ("precision", "recall", "f1", "accuracy")
            )
        rows.append(row)
    return SweepReport(rows, metadata=dict(metadata or {}))
