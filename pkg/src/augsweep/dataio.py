"""Datasets (PNG class trees, synthetic glyphs) and checkpoint files.

Checkpoint layout, all integers little-endian::

    b"AUGS1\\n"
    u32 config_len, config_len bytes of UTF-8 JSON (ModelConfig)
    u32 block_count
    block_count x { u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dims,
                    prod(dims) x float32 }
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from augsweep.augment import apply_affine, compose, rotation_matrix
from augsweep.imagecore import ImageBuffer, resize
from augsweep.nn.model import EfficientViTClassifier, ModelConfig

MAGIC = b"AUGS1\n"


class DataError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class Dataset:
    samples: list
    class_names: list
    name: str = "dataset"

    def __post_init__(self):
        n = len(self.class_names)
        chans = set()
        for img, label in self.samples:
            if not 0 <= int(label) < n:
                raise DataError(f"label {label} outside [0, {n})")
            chans.add(img.channels)
        if len(chans) > 1:
            raise DataError("all images must share a channel count")

    def __len__(self):
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> list[int]:
        return [int(lbl) for _, lbl in self.samples]

    def image(self, i: int) -> ImageBuffer:
        return self.samples[i][0]

    def replace(self, updates: dict) -> "Dataset":
        samples = list(self.samples)
        for i, img in updates.items():
            samples[i] = (img, samples[i][1])
        return Dataset(samples, list(self.class_names), self.name)


# ---------------------------------------------------------------------------
# PNG trees
# ---------------------------------------------------------------------------


def read_png(path) -> ImageBuffer:
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise DataError(f"unsupported image format: {path}")
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise DataError(f"unsupported image format {im.format}: {path}")
            im.load()
            if im.mode in ("L", "1", "LA", "I", "I;16"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    return ImageBuffer(arr)


def write_png(img: ImageBuffer, path) -> None:
    px = img.pixels[:, :, 0] if img.channels == 1 else img.pixels
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(px)).save(buf, format="PNG", optimize=False)
    Path(path).write_bytes(buf.getvalue())


def load_image_dir(path, size: int = 64) -> Dataset:
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"no class directories under {root}")
    samples = []
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.is_file())
        if not files:
            raise DataError(f"empty class directory: {cdir}")
        for f in files:
            samples.append((resize(read_png(f), size, size), label))
    if len({img.channels for img, _ in samples}) > 1:
        samples = [(img.to_rgb(), lbl) for img, lbl in samples]
    return Dataset(samples, [d.name for d in class_dirs], name=root.name)


# ---------------------------------------------------------------------------
# synthetic glyphs
# ---------------------------------------------------------------------------

# Unit-square strokes, y pointing down. ("line", x0, y0, x1, y1) or
# ("arc", cx, cy, r, start_deg, end_deg). Pairs 0/1, 2/3, 8/9 are deliberately
# close to each other.
GLYPH_TEMPLATES = [
    [("arc", 0.5, 0.5, 0.3, 0, 360), ("line", 0.2, 0.2, 0.8, 0.2)],
    [("arc", 0.5, 0.5, 0.3, 40, 320), ("line", 0.2, 0.2, 0.8, 0.2)],
    [("line", 0.5, 0.2, 0.5, 0.8), ("line", 0.2, 0.2, 0.8, 0.2)],
    [("line", 0.5, 0.2, 0.5, 0.8), ("line", 0.2, 0.5, 0.8, 0.5), ("line", 0.2, 0.2, 0.8, 0.2)],
    [("line", 0.3, 0.2, 0.3, 0.8), ("line", 0.3, 0.8, 0.75, 0.8)],
    [("line", 0.25, 0.2, 0.75, 0.2), ("line", 0.75, 0.2, 0.25, 0.8), ("line", 0.25, 0.8, 0.75, 0.8)],
    [("line", 0.25, 0.2, 0.75, 0.8), ("line", 0.75, 0.2, 0.25, 0.8)],
    [("line", 0.25, 0.2, 0.25, 0.55), ("line", 0.75, 0.2, 0.75, 0.55), ("arc", 0.5, 0.55, 0.25, 0, 180)],
    [("arc", 0.5, 0.38, 0.17, 0, 360), ("line", 0.67, 0.38, 0.6, 0.82), ("line", 0.2, 0.2, 0.8, 0.2)],
    [("arc", 0.5, 0.38, 0.17, 0, 360), ("line", 0.33, 0.38, 0.4, 0.82), ("line", 0.2, 0.2, 0.8, 0.2)],
]


@dataclass(frozen=True)
class GlyphSpec:
    num_classes: int = 10
    samples_per_class: int = 200
    image_size: int = 64
    stroke_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(GLYPH_TEMPLATES):
            raise ValueError(f"num_classes must lie in [1, {len(GLYPH_TEMPLATES)}]")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.stroke_jitter < 0:
            raise ValueError("stroke_jitter must be non-negative")


def _stroke_points(stroke, size, jitter, rng):
    kind, *vals = stroke
    if kind == "line":
        pts = np.array(vals, dtype=np.float64).reshape(2, 2) * size
        if jitter > 0:
            pts += rng.uniform(-jitter * size, jitter * size, pts.shape)
        return pts
    cx, cy, r, a0, a1 = vals
    c = np.array([cx, cy]) * size
    rad = r * size
    if jitter > 0:
        c = c + rng.uniform(-jitter * size, jitter * size, 2)
        rad = rad + rng.uniform(-jitter * size, jitter * size)
    steps = max(8, int(abs(a1 - a0) / 10))
    ang = np.radians(np.linspace(a0, a1, steps + 1))
    return np.stack([c[0] + rad * np.cos(ang), c[1] + rad * np.sin(ang)], axis=1)


def _distance_to_polyline(px, py, pts):
    d = np.full(px.shape, np.inf)
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        dx, dy = x1 - x0, y1 - y0
        ll = dx * dx + dy * dy
        t = np.zeros_like(px) if ll == 0 else np.clip(((px - x0) * dx + (py - y0) * dy) / ll, 0.0, 1.0)
        d = np.minimum(d, np.hypot(px - (x0 + t * dx), py - (y0 + t * dy)))
    return d


def render_glyph(template, size: int, jitter: float, rng, width: float = 2.0) -> ImageBuffer:
    """Dark strokes of ``width`` px on white; 1-px antialiasing ramp outside the core."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    # pixel centers in the unit-square frame
    px, py = xs + 0.5, ys + 0.5
    dist = np.full((size, size), np.inf)
    for stroke in template:
        dist = np.minimum(dist, _distance_to_polyline(px, py, _stroke_points(stroke, size, jitter, rng)))
    val = 255.0 * np.clip(dist - width / 2.0, 0.0, 1.0)
    return ImageBuffer(np.floor(val + 0.5).astype(np.uint8))


def synth_glyphs(spec: GlyphSpec = GlyphSpec()) -> Dataset:
    samples = []
    for cls in range(spec.num_classes):
        template = GLYPH_TEMPLATES[cls]
        for i in range(spec.samples_per_class):
            rng = np.random.default_rng([spec.seed, cls, i])
            width = 2.0 if spec.stroke_jitter == 0 else float(rng.integers(1, 4))
            samples.append((render_glyph(template, spec.image_size, spec.stroke_jitter, rng, width), cls))
    names = [f"glyph{c}" for c in range(spec.num_classes)]
    return Dataset(samples, names, name="synthetic-glyphs")


def distort_images(data: Dataset, indices, seed: int, max_rotation_deg: float = 10.0,
                   max_shift_frac: float = 0.1, fill: int = 255) -> Dataset:
    """Apply one fixed, seeded mild rotation + shift to each listed sample."""
    updates = {}
    for i in indices:
        img = data.image(i)
        rng = np.random.default_rng([int(seed), int(i), 7])
        angle = rng.uniform(-max_rotation_deg, max_rotation_deg)
        dx = rng.uniform(-max_shift_frac, max_shift_frac) * img.width
        dy = rng.uniform(-max_shift_frac, max_shift_frac) * img.height
        m = compose(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]]), rotation_matrix(angle))
        updates[i] = apply_affine(img, m, fill)
    return data.replace(updates)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _blocks(model: torch.nn.Module):
    for name, t in model.state_dict().items():
        if t.is_floating_point():
            yield name, t


def checkpoint_bytes(model: EfficientViTClassifier) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    cfg = model.cfg.to_text().encode("utf-8")
    out.write(struct.pack("<I", len(cfg)))
    out.write(cfg)
    blocks = list(_blocks(model))
    out.write(struct.pack("<I", len(blocks)))
    for name, t in blocks:
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", t.dim()))
        out.write(struct.pack(f"<{t.dim()}I", *t.shape))
        out.write(t.detach().cpu().numpy().astype("<f4").tobytes())
    return out.getvalue()


def save_checkpoint(model: EfficientViTClassifier, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(data: bytes, expected: ModelConfig | None = None) -> EfficientViTClassifier:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not an AUGS1 checkpoint")
    (cfg_len,) = r.unpack("<I")
    try:
        cfg = ModelConfig.from_text(r.take(cfg_len).decode("utf-8"))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"unreadable model config: {exc}") from exc
    if expected is not None and cfg != expected:
        raise CheckpointError("checkpoint config does not match the expected model config")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims)
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after the last parameter block")
    model = EfficientViTClassifier(cfg)
    state = model.state_dict()
    expected_names = {k for k, v in state.items() if v.is_floating_point()}
    if set(tensors) != expected_names:
        raise CheckpointError("parameter blocks do not match the model config")
    for k, t in tensors.items():
        if tuple(state[k].shape) != tuple(t.shape):
            raise CheckpointError(f"shape mismatch for {k}: {tuple(t.shape)} vs {tuple(state[k].shape)}")
    model.load_state_dict(tensors, strict=False)
    model.initialized = True
    return model.eval()


def load_checkpoint(path, expected: ModelConfig | None = None) -> EfficientViTClassifier:
    return checkpoint_from_bytes(Path(path).read_bytes(), expected)
