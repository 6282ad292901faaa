#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Proceduralne kolorowe obrazy do eksperymentów w małej skali i testów."""

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

PALETTE = [
    (51, 122, 183),
    (217, 83, 79),
    (92, 184, 92),
    (240, 173, 78),
    (91, 192, 222),
    (142, 68, 173),
    (120, 90, 60),
    (230, 230, 210),
]


def generate_toy_image(size, seed):
    """Rysuje obraz size x size: gradient tła i kilka wypełnionych figur.

    Kolory pochodzą z niewielkiej palety, więc chrominancja ma strukturę,
    której model może się nauczyć z jasności.
    """
    rng = np.random.default_rng(seed)
    scale = 4
    canvas = size * scale
    top = np.array(PALETTE[rng.integers(len(PALETTE))], dtype=np.float64)
    bottom = np.array(PALETTE[rng.integers(len(PALETTE))], dtype=np.float64)
    ramp = np.linspace(0.0, 1.0, canvas)[:, None, None]
    background = (top * (1 - ramp) + bottom * ramp) * np.ones((1, canvas, 1))
    img = Image.fromarray(background.astype(np.uint8))
    draw = ImageDraw.Draw(img)

    for _ in range(int(rng.integers(2, 5))):
        x0, y0 = rng.integers(0, canvas, size=2)
        w, h = rng.integers(canvas // 6, canvas // 2, size=2)
        fill = PALETTE[rng.integers(len(PALETTE))]
        box = (int(x0), int(y0), int(x0 + w), int(y0 + h))
        if rng.random() < 0.5:
            draw.ellipse(box, fill=fill)
        else:
            draw.rectangle(box, fill=fill)

    img = img.filter(ImageFilter.GaussianBlur(radius=scale / 2))
    img = img.resize((size, size), Image.Resampling.BILINEAR)
    return np.array(img, dtype=np.uint8)


def generate_toy_images(count, size, seed=0):
    """Lista count obrazów uint8 (size, size, 3), deterministyczna dla danego ziarna."""
    return [generate_toy_image(size, seed * 100003 + index) for index in range(count)]


def write_toy_dataset(directory, count, size, seed=0):
    """Zapisuje obrazy jako PNG; zwraca listę ścieżek."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for index, pixels in enumerate(generate_toy_images(count, size, seed)):
        path = directory / f"toy_{index:05d}.png"
        Image.fromarray(pixels).save(path, format="PNG")
        paths.append(path)
    return paths
