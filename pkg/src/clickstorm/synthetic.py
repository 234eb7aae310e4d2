"""Seeded generator for the desk-scale synthetic evaluation suite.

Produces small images of simple shapes (disks, rings, L-shapes, thin bars)
over textured backgrounds, plus matching ground-truth masks and a dataset
manifest, so the whole evaluation pipeline can be exercised without any
external data. Generation is fully determined by (seed, count, size).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["generate_suite", "make_sample"]

_SHAPES = ("disk", "ring", "lshape", "bar")


def _texture(rng: np.random.Generator, h: int, w: int, terms: int = 3) -> np.ndarray:
    """Smooth pseudo-random field in [-1, 1]."""
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    field = np.zeros((h, w))
    for _ in range(terms):
        fx, fy = rng.uniform(0.15, 0.9, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += np.sin(fx * xs + fy * ys + phase)
    return field / terms


def _shape_mask(rng: np.random.Generator, kind: str, size: int) -> np.ndarray:
    ys = np.arange(size)[:, None]
    xs = np.arange(size)[None, :]
    if kind == "disk":
        cx, cy = rng.uniform(0.38, 0.62, size=2) * size
        r = rng.uniform(0.18, 0.28) * size
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    if kind == "ring":
        cx, cy = rng.uniform(0.42, 0.58, size=2) * size
        outer = rng.uniform(0.26, 0.34) * size
        inner = outer - max(4.0, 0.19 * size)
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        return (d2 <= outer * outer) & (d2 > inner * inner)
    if kind == "lshape":
        mask = np.zeros((size, size), dtype=bool)
        x0 = int(rng.uniform(0.18, 0.32) * size)
        y0 = int(rng.uniform(0.18, 0.32) * size)
        long = int(rng.uniform(0.45, 0.58) * size)
        thick = max(4, int(rng.uniform(0.22, 0.3) * size))
        mask[y0:y0 + long, x0:x0 + thick] = True
        mask[y0 + long - thick:y0 + long, x0:x0 + long] = True
        return mask[:size, :size]
    if kind == "bar":
        mask = np.zeros((size, size), dtype=bool)
        thick = max(4, int(0.19 * size))
        offset = int(rng.uniform(0.25, 0.6) * size)
        start = int(rng.uniform(0.12, 0.22) * size)
        length = int(rng.uniform(0.55, 0.7) * size)
        if rng.uniform() < 0.5:
            mask[offset:offset + thick, start:start + length] = True
        else:
            mask[start:start + length, offset:offset + thick] = True
        return mask[:size, :size]
    raise ValueError(f"unknown shape kind {kind!r}")


def make_sample(seed: int, index: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    """One (image, mask) pair; the shape kind cycles with the index."""
    rng = np.random.default_rng([seed, index])
    kind = _SHAPES[index % len(_SHAPES)]
    mask = _shape_mask(rng, kind, size)
    # high object/background contrast, mild texture inside the object
    background = 0.40 + 0.16 * _texture(rng, size, size)
    foreground = 0.78 + 0.05 * _texture(rng, size, size)
    intensity = np.where(mask, foreground, background)
    offsets = rng.uniform(-0.04, 0.04, size=3)
    image = np.clip(intensity[:, :, None] + offsets[None, None, :], 0.0, 1.0)
    return image, mask


def generate_suite(out_dir, count: int = 50, size: int = 32, seed: int = 0) -> Path:
    """Write images, masks, and a manifest; returns the manifest path."""
    if count < 1 or size < 8:
        raise ValueError("need count >= 1 and size >= 8")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for index in range(count):
        image, mask = make_sample(seed, index, size)
        image_id = f"syn{index:04d}"
        image_rel = f"images/{image_id}.png"
        mask_rel = f"masks/{image_id}.png"
        Image.fromarray(np.round(image * 255.0).astype(np.uint8), "RGB").save(out / image_rel)
        Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save(out / mask_rel)
        entries.append({"image": image_rel, "mask": mask_rel, "id": image_id})
    manifest = {"name": f"synthetic-{size}px-{count}", "entries": entries}
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest_path
