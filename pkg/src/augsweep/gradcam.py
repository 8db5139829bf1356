"""Grad-CAM maps over a stage feature map, and heatmap overlays."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from augsweep.dataio import write_png
from augsweep.imagecore import ImageBuffer, resize, resize_array, to_tensor
from augsweep.trainer import predict_logits

LAYERS = {"stage1": 0, "stage2": 1, "stage3": 2, "stage4": 3}
DEFAULT_LAYER = "stage4"
ZERO_COLOR = (0, 0, 255)
ONE_COLOR = (255, 0, 0)


class ModelStateError(RuntimeError):
    pass


@dataclass
class CamMap:
    values: np.ndarray
    source_layer: str
    target_class: int


def gradcam(model, img: ImageBuffer, target_class: int, layer: str = DEFAULT_LAYER) -> CamMap:
    """Rectified, gradient-weighted channel sum of ``layer`` for one class logit, scaled to max 1.

    An all-zero raw map stays all zero.
    """
    if not getattr(model, "initialized", False):
        raise ModelStateError("model has no initialized or loaded weights")
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}; choose from {sorted(LAYERS)}")
    n_cls = model.cfg.num_classes
    if not 0 <= int(target_class) < n_cls:
        raise ValueError(f"target_class {target_class} outside [0, {n_cls})")
    size = model.cfg.input_size
    img = resize(img, size, size)
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            x = to_tensor(img, dtype=dtype)[None]
            feats = model.features(x)
            logits = model.head(*feats[1:])
            fmap = feats[LAYERS[layer]]
            (grads,) = torch.autograd.grad(logits[0, int(target_class)], fmap)
    finally:
        model.train(was_training)
    weights = grads.mean(dim=(2, 3), keepdim=True)
    raw = torch.relu((weights * fmap).sum(dim=1))[0].detach().double().numpy()
    peak = raw.max()
    values = raw / peak if peak > 0 else np.zeros_like(raw)
    return CamMap(values, layer, int(target_class))


def color_ramp(t: np.ndarray) -> np.ndarray:
    """Linear blue (0) to red (1) ramp; returns float RGB in [0, 255]."""
    t = np.clip(t, 0.0, 1.0)[..., None]
    lo = np.asarray(ZERO_COLOR, dtype=np.float64)
    hi = np.asarray(ONE_COLOR, dtype=np.float64)
    return (1.0 - t) * lo + t * hi


def overlay(cam: CamMap, img: ImageBuffer, alpha: float = 0.5) -> ImageBuffer:
    """Upsample the map to the image, color it and blend over the grayscale image."""
    up = resize_array(cam.values, img.height, img.width)
    heat = color_ramp(up)
    gray = img.to_gray().pixels.astype(np.float64)
    out = (1.0 - alpha) * gray + alpha * heat
    return ImageBuffer(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def export_misclassified(model, data, indices, out_dir, layer: str = DEFAULT_LAYER) -> list[Path]:
    """Write an overlay for every misclassified sample among ``indices``.

    Files are named ``<sample_id>_<predicted>_<actual>.png`` with class names;
    the map explains the predicted class. Returns the written paths.
    """
    indices = list(indices)
    if not indices:
        return []
    out_dir = Path(out_dir)
    images = [resize(data.image(i), model.cfg.input_size, model.cfg.input_size) for i in indices]
    preds = predict_logits(model, images).argmax(dim=1).tolist()
    written = []
    for i, img, pred in zip(indices, images, preds):
        actual = data.samples[i][1]
        if pred == actual:
            continue
        cam = gradcam(model, img, pred, layer)
        path = out_dir / f"{i}_{data.class_names[pred]}_{data.class_names[actual]}.png"
        out_dir.mkdir(parents=True, exist_ok=True)
        write_png(overlay(cam, data.image(i)), path)
        written.append(path)
    return written
