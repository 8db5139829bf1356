"""Augmentation operators, their random parameter samplers and pipelines.

The four techniques and their short labels:

    CLAHE           C
    RandomRotation  RR
    RandomAffine    RA
    ColorJitter     CJ

A pipeline always applies its enabled techniques in the order
C -> RR -> RA -> CJ, whatever order they were given in. Labels list techniques
in the order RR, RA, C, CJ (``"RA + CJ"``), and an empty pipeline is ``"None"``.
"""

from __future__ import annotations

import configparser
import enum
import itertools
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from augsweep import kernels
from augsweep.imagecore import ImageBuffer, ImageError


class DimensionError(ImageError):
    pass


class SingularTransformError(ValueError):
    pass


class Technique(enum.Enum):
    CLAHE = "C"
    RandomRotation = "RR"
    RandomAffine = "RA"
    ColorJitter = "CJ"

    @property
    def abbrev(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name) -> "Technique":
        if isinstance(name, Technique):
            return name
        key = str(name).strip()
        for t in cls:
            if key.lower() in (t.name.lower(), t.value.lower()):
                return t
        raise ValueError(f"unknown augmentation technique {name!r}")


APPLY_ORDER = (Technique.CLAHE, Technique.RandomRotation, Technique.RandomAffine, Technique.ColorJitter)
LABEL_ORDER = (Technique.RandomRotation, Technique.RandomAffine, Technique.CLAHE, Technique.ColorJitter)


@dataclass(frozen=True)
class ClaheParams:
    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 2.0
    bins: int = 256

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError("CLAHE tile grid must be at least 1x1")
        if self.bins < 2 or self.bins > 256:
            raise ValueError("CLAHE bins must lie in [2, 256]")
        if not self.clip_limit > 0:
            raise ValueError("CLAHE clip_limit must be positive")


@dataclass(frozen=True)
class RotationParams:
    min_deg: float = -45.0
    max_deg: float = 45.0
    fill: int = 255

    def __post_init__(self):
        if not (-360 < self.min_deg <= self.max_deg < 360):
            raise ValueError(f"invalid rotation range [{self.min_deg}, {self.max_deg}]")
        _check_fill(self.fill)


@dataclass(frozen=True)
class AffineParams:
    max_translate_frac: float = 0.1
    max_shear_deg: float = 20.0
    fill: int = 255
    # False: shifts drawn from [0, f*size] instead of [-f*size, f*size]
    symmetric_translate: bool = True

    def __post_init__(self):
        if not 0.0 <= self.max_translate_frac <= 1.0:
            raise ValueError("max_translate_frac must lie in [0, 1]")
        if not 0.0 <= self.max_shear_deg < 90.0:
            raise ValueError("max_shear_deg must lie in [0, 90)")
        _check_fill(self.fill)


@dataclass(frozen=True)
class JitterParams:
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.1

    def __post_init__(self):
        if min(self.brightness, self.contrast, self.saturation) < 0:
            raise ValueError("jitter strengths must be non-negative")
        if not 0.0 <= self.hue <= 0.5:
            raise ValueError("hue jitter must lie in [0, 0.5]")


PARAM_TYPES = {
    Technique.CLAHE: ClaheParams,
    Technique.RandomRotation: RotationParams,
    Technique.RandomAffine: AffineParams,
    Technique.ColorJitter: JitterParams,
}


def _check_fill(fill):
    if not 0 <= int(fill) <= 255:
        raise ValueError(f"fill intensity {fill} outside [0, 255]")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def histogram_equalize(img: ImageBuffer, levels: int = 256) -> ImageBuffer:
    """Global histogram equalization; the unclipped single-tile reference for CLAHE."""
    return ImageBuffer(kernels.equalize_plane(img.plane(), levels))


def clahe(img: ImageBuffer, p: ClaheParams = ClaheParams()) -> ImageBuffer:
    if img.channels != 1:
        raise DimensionError(f"clahe expects a 1-channel image, got {img.channels} channels")
    if img.height < p.tiles_y or img.width < p.tiles_x:
        raise DimensionError(
            f"image {img.width}x{img.height} is smaller than the {p.tiles_x}x{p.tiles_y} tile grid"
        )
    out = kernels.clahe_plane(img.plane(), p.tiles_y, p.tiles_x, p.clip_limit, p.bins)
    return ImageBuffer(out)


def _clahe_any(img: ImageBuffer, p: ClaheParams) -> ImageBuffer:
    if img.channels == 1:
        return clahe(img, p)
    if img.height < p.tiles_y or img.width < p.tiles_x:
        raise DimensionError(
            f"image {img.width}x{img.height} is smaller than the {p.tiles_x}x{p.tiles_y} tile grid"
        )
    return ImageBuffer(kernels.clahe_rgb(img.pixels, p.tiles_y, p.tiles_x, p.clip_limit, p.bins))


def _inverse_map(img: ImageBuffer, m: np.ndarray) -> np.ndarray:
    """Pixel-space inverse of a center-relative forward matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (2, 3):
        raise ValueError(f"affine matrix must be 2x3, got {m.shape}")
    (a, b, tx), (c, d, ty) = m
    det = a * d - b * c
    if not math.isfinite(det) or abs(det) < 1e-12:
        raise SingularTransformError(f"affine linear part is singular (det={det!r})")
    ia, ib, ic, id_ = d / det, -b / det, -c / det, a / det
    cx = (img.width - 1) / 2.0
    cy = (img.height - 1) / 2.0
    # src = A^-1 (dst - center - t) + center
    ox, oy = cx + tx, cy + ty
    return np.array(
        [[ia, ib, cx - (ia * ox + ib * oy)], [ic, id_, cy - (ic * ox + id_ * oy)]],
        dtype=np.float64,
    )


def apply_affine(img: ImageBuffer, m, fill: int = 255) -> ImageBuffer:
    """Warp ``img`` by the 2x3 matrix ``m`` acting on center-relative coordinates."""
    inv = _inverse_map(img, m)
    return ImageBuffer(kernels.warp_affine(img.pixels, inv, int(fill)))


def compose(b, a) -> np.ndarray:
    """The 2x3 matrix of applying ``a`` first, then ``b``."""
    ha = np.vstack([np.asarray(a, dtype=np.float64), [0.0, 0.0, 1.0]])
    hb = np.vstack([np.asarray(b, dtype=np.float64), [0.0, 0.0, 1.0]])
    return (hb @ ha)[:2]


def rotation_matrix(angle_deg: float) -> np.ndarray:
    # positive angles turn content counter-clockwise on screen (y axis points down)
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, s, 0.0], [-s, c, 0.0]])


def rotate(img: ImageBuffer, angle_deg: float, fill: int = 255) -> ImageBuffer:
    if not math.isfinite(angle_deg):
        raise ValueError("rotation angle must be finite")
    return apply_affine(img, rotation_matrix(angle_deg), fill)


def color_jitter_apply(img: ImageBuffer, b: float, c: float, s: float, h: float) -> ImageBuffer:
    """Brightness, contrast, saturation, then hue, each rounded back to 8 bits.

    Saturation and hue only act on 3-channel images; on grayscale they are no-ops.
    """
    if min(b, c, s) < 0:
        raise ValueError("jitter factors must be non-negative")
    if not -0.5 <= h <= 0.5:
        raise ValueError("hue shift must lie in [-0.5, 0.5]")
    return ImageBuffer(kernels.color_jitter(img.pixels, float(b), float(c), float(s), float(h)))


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def sample_rotation(p: RotationParams, rng: np.random.Generator) -> float:
    return float(rng.uniform(p.min_deg, p.max_deg))


def sample_affine(p: AffineParams, rng: np.random.Generator, width: int = 64, height: int = 64) -> np.ndarray:
    fw = p.max_translate_frac * width
    fh = p.max_translate_frac * height
    if p.symmetric_translate:
        dx = rng.uniform(-fw, fw)
        dy = rng.uniform(-fh, fh)
    else:
        dx = rng.uniform(0.0, fw)
        dy = rng.uniform(0.0, fh)
    shear = rng.uniform(-p.max_shear_deg, p.max_shear_deg)
    shear_m = np.array([[1.0, math.tan(math.radians(shear)), 0.0], [0.0, 1.0, 0.0]])
    shift_m = np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]])
    return compose(shift_m, shear_m)


def shear_deg_of(m) -> float:
    return math.degrees(math.atan(m[0][1]))


def sample_jitter(p: JitterParams, rng: np.random.Generator) -> tuple[float, float, float, float]:
    b = rng.uniform(max(0.0, 1.0 - p.brightness), 1.0 + p.brightness)
    c = rng.uniform(max(0.0, 1.0 - p.contrast), 1.0 + p.contrast)
    s = rng.uniform(max(0.0, 1.0 - p.saturation), 1.0 + p.saturation)
    h = rng.uniform(-p.hue, p.hue)
    return float(b), float(c), float(s), float(h)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def label_for(techniques) -> str:
    ts = {Technique.parse(t) for t in techniques}
    if not ts:
        return "None"
    return " + ".join(t.abbrev for t in LABEL_ORDER if t in ts)


def substream(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent counter-based generator for one (epoch, sample) pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(epoch), int(index)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class AugmentationPipeline:
    ops: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        items = self.ops.items() if isinstance(self.ops, dict) else [(t, None) for t in self.ops]
        parsed = {}
        for name, params in items:
            t = Technique.parse(name)
            if t in parsed:
                raise ValueError(f"technique {t.name} listed twice")
            ptype = PARAM_TYPES[t]
            if params is None:
                params = ptype()
            elif isinstance(params, dict):
                params = ptype(**params)
            elif not isinstance(params, ptype):
                raise TypeError(f"{t.name} expects {ptype.__name__}, got {type(params).__name__}")
            parsed[t] = params
        self.ops = {t: parsed[t] for t in APPLY_ORDER if t in parsed}

    @property
    def techniques(self) -> tuple[Technique, ...]:
        return tuple(self.ops)

    @property
    def label(self) -> str:
        return label_for(self.ops)

    def rng(self, epoch: int, index: int) -> np.random.Generator:
        return substream(self.seed, epoch, index)

    def apply(self, img: ImageBuffer, rng: np.random.Generator) -> ImageBuffer:
        return pipeline_apply(self, img, rng)

    def to_config(self) -> str:
        cp = configparser.ConfigParser()
        cp["pipeline"] = {"seed": str(self.seed)}
        for t, params in self.ops.items():
            cp[t.name] = {k: str(v) for k, v in asdict(params).items()}
        lines = []
        for section in cp.sections():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in cp[section].items())
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_config(cls, text: str, seed: int | None = None) -> "AugmentationPipeline":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_string(text)
        ops = {}
        cfg_seed = 0
        for section in cp.sections():
            if section.lower() == "pipeline":
                cfg_seed = cp[section].getint("seed", fallback=0)
                continue
            if section.lower() in ("train", "model", "data"):
                continue
            t = Technique.parse(section)
            ops[t] = parse_params(PARAM_TYPES[t], dict(cp[section]))
        return cls(ops=ops, seed=cfg_seed if seed is None else seed)


def parse_params(ptype, raw: dict):
    known = {f.name: f for f in fields(ptype)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"unknown parameter {key!r} for {ptype.__name__}")
        default = getattr(ptype(), key)
        if isinstance(default, bool):
            kwargs[key] = str(value).strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return ptype(**kwargs)


def apply_technique(t: Technique, params, img: ImageBuffer, rng: np.random.Generator) -> ImageBuffer:
    if t is Technique.CLAHE:
        return _clahe_any(img, params)
    if t is Technique.RandomRotation:
        return rotate(img, sample_rotation(params, rng), params.fill)
    if t is Technique.RandomAffine:
        m = sample_affine(params, rng, img.width, img.height)
        return apply_affine(img, m, params.fill)
    if t is Technique.ColorJitter:
        return color_jitter_apply(img, *sample_jitter(params, rng))
    raise ValueError(t)


def pipeline_apply(pl: AugmentationPipeline, img: ImageBuffer, rng: np.random.Generator) -> ImageBuffer:
    out = img
    for t, params in pl.ops.items():
        out = apply_technique(t, params, out, rng)
    return out


def enumerate_combinations(techniques, params: dict | None = None, seed: int = 0) -> list[AugmentationPipeline]:
    """Every subset of ``techniques``: by size, then by position in the given list."""
    ts = [Technique.parse(t) for t in techniques]
    if not 1 <= len(ts) <= 8:
        raise ValueError("need between 1 and 8 techniques")
    if len(set(ts)) != len(ts):
        raise ValueError(f"duplicate technique in {[t.abbrev for t in ts]}")
    params = {Technique.parse(k): v for k, v in (params or {}).items()}
    out = []
    for k in range(len(ts) + 1):
        for subset in itertools.combinations(ts, k):
            out.append(AugmentationPipeline({t: params.get(t) for t in subset}, seed=seed))
    return out


def parse_techniques(text: str) -> list[Technique]:
    return [Technique.parse(tok) for tok in text.split(",") if tok.strip()]
