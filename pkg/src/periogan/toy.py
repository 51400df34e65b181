"""Procedural NIR-like periocular images for smoke tests and demos.

Each image is a dark pupil inside a textured iris on a brighter sclera band,
framed by eyelid shading. Gender shifts pupil size and skin tone slightly so
conditional models have something to learn.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

TOY_LABELING = {
    "rules": [
        {"pattern": "*_left_*", "eye_side": "left"},
        {"pattern": "*_right_*", "eye_side": "right"},
        {"pattern": "female_*", "gender": "female"},
        {"pattern": "male_*", "gender": "male"},
    ],
    "defaults": {"class_label": "bonafide"},
}


def eye_image(rng: np.random.Generator, width: int, height: int, gender: str = "female",
              side: str = "left") -> np.ndarray:
    """One uint8 (height, width) image."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    u, v = xx / width, yy / height
    cx = 0.5 + rng.uniform(-0.08, 0.08) + (0.03 if side == "left" else -0.03)
    cy = 0.5 + rng.uniform(-0.06, 0.06)
    skin = 0.45 + (0.08 if gender == "male" else 0.0) + rng.uniform(-0.05, 0.05)
    img = skin + 0.1 * (v - 0.5)
    lid = np.abs(v - cy) < 0.28 * np.sqrt(np.clip(1 - ((u - cx) / 0.45) ** 2, 0, 1))
    img = np.where(lid, 0.75 + rng.uniform(-0.05, 0.05), img)
    r = np.hypot((u - cx) * width, (v - cy) * height) / min(width, height)
    iris_r = 0.2 + rng.uniform(-0.02, 0.02)
    angle = np.arctan2(v - cy, u - cx)
    texture = 0.05 * np.sin(12 * angle + rng.uniform(0, 2 * np.pi))
    img = np.where(lid & (r < iris_r), 0.35 + texture, img)
    pupil_r = (0.09 if gender == "male" else 0.07) + rng.uniform(-0.01, 0.01)
    img = np.where(r < pupil_r, 0.06, img)
    img = img + rng.normal(0, 0.02, img.shape)
    return np.clip(img * 255, 0, 255).astype(np.uint8)


def write_toy_corpus(directory, n: int = 500, size: tuple[int, int] = (32, 32), seed: int = 0,
                     write_labeling: bool = True) -> Path:
    """Write ``n`` gender- and side-balanced PNGs named ``{gender}_{side}_{i}.png``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        gender = ("female", "male")[i % 2]
        side = ("left", "right")[(i // 2) % 2]
        Image.fromarray(eye_image(rng, size[0], size[1], gender, side)).save(out / f"{gender}_{side}_{i:05d}.png")
    if write_labeling:
        (out.parent / f"{out.name}_labeling.json").write_text(json.dumps(TOY_LABELING, indent=2))
    return out
