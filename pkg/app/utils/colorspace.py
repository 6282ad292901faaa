#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Konwersje kolorów między 8-bitowymi obrazami RGB a znormalizowaną przestrzenią Lab.

Konwencja (stała, zapisywana w punkcie kontrolnym modelu):
- CIE L*a*b*, biel D65, obserwator 2°, krzywa przejścia sRGB (skimage.color)
- L = L* / 100, a = a* / 128, b = b* / 128; chrominancja przycinana do [-1, 1]
- zapis do 8 bitów: round(255 * v) z zaokrągleniem połówek od zera, potem [0, 255]

Obrazy RGB to tablice numpy H x W x 3: uint8 (forma zapisu) albo float w [0, 1]
(forma robocza).
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from skimage import color
from skimage.color.colorconv import rgb_from_xyz

from app.utils.errors import InvalidImageError

L_SCALE = 100.0
AB_SCALE = 128.0
ILLUMINANT = "D65"
OBSERVER = "2"
GAMUT_TOLERANCE = 1e-4

COLORSPACE_CONSTANTS = {
    "standard": "CIELAB/sRGB",
    "illuminant": ILLUMINANT,
    "observer": OBSERVER,
    "l_scale": L_SCALE,
    "ab_scale": AB_SCALE,
    "rounding": "half-away-from-zero",
}


@dataclass
class LabImage:
    """Płaszczyzna luminancji L (H x W) i dwie płaszczyzny chrominancji c (2 x H x W)."""

    L: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.L.ndim != 2:
            raise InvalidImageError(f"Płaszczyzna L musi mieć kształt (H, W), ma {self.L.shape}")
        if self.c.shape != (2,) + self.L.shape:
            raise InvalidImageError(f"Chrominancja musi mieć kształt {(2,) + self.L.shape}, ma {self.c.shape}")

    @property
    def shape(self):
        return self.L.shape

    def clipped(self):
        """Kopia przycięta do zakresów typu: L w [0, 1], c w [-1, 1]."""
        return LabImage(np.clip(self.L, 0.0, 1.0), np.clip(self.c, -1.0, 1.0))


def _integer_levels(arr):
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise InvalidImageError(
            f"Obraz całkowitoliczbowy {arr.dtype} ma wartości spoza 0..255: [{arr.min()}, {arr.max()}]"
        )
    return arr


def as_working_form(img):
    """Zamienia obraz RGB (całkowity 0..255 lub float) na formę roboczą float64 w [0, 1]."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise InvalidImageError(f"Obraz RGB musi mieć kształt (H, W, 3), ma {arr.shape}")
    if np.issubdtype(arr.dtype, np.integer):
        return _integer_levels(arr).astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidImageError("Obraz RGB zawiera wartości nieskończone lub NaN")
    return arr


def rgb_to_lab(img):
    """RGB (forma zapisu lub robocza) -> znormalizowany LabImage."""
    rgb = np.clip(as_working_form(img), 0.0, 1.0)
    lab = color.rgb2lab(rgb, illuminant=ILLUMINANT, observer=OBSERVER)
    L = np.clip(lab[..., 0] / L_SCALE, 0.0, 1.0)
    c = np.clip(np.moveaxis(lab[..., 1:], -1, 0) / AB_SCALE, -1.0, 1.0)
    return LabImage(L, c)


def _to_cielab(lab):
    return np.concatenate([lab.L[..., None] * L_SCALE, np.moveaxis(lab.c, 0, -1) * AB_SCALE], axis=-1)


def _check_finite(lab):
    if not (np.all(np.isfinite(lab.L)) and np.all(np.isfinite(lab.c))):
        raise InvalidImageError("Obraz Lab zawiera wartości nieskończone lub NaN")


def lab_to_rgb(lab):
    """LabImage -> RGB w formie roboczej; kolory spoza gamutu przycinane kanałami do [0, 1]."""
    _check_finite(lab)
    with warnings.catch_warnings():
        # skimage ostrzega o pikselach z Z < 0, czyli spoza gamutu - i tak przycinamy
        warnings.simplefilter("ignore")
        rgb = color.lab2rgb(_to_cielab(lab.clipped()), illuminant=ILLUMINANT, observer=OBSERVER)
    return np.clip(rgb, 0.0, 1.0)


def _linear_rgb(cielab):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        xyz = color.lab2xyz(cielab, illuminant=ILLUMINANT, observer=OBSERVER)
    return xyz @ rgb_from_xyz.T


def in_gamut_mask(lab):
    """Maska H x W pikseli, które da się wyświetlić w sRGB bez przycinania."""
    _check_finite(lab)
    linear = _linear_rgb(_to_cielab(lab.clipped()))
    out_of_range = np.any((lab.c < -1.0) | (lab.c > 1.0), axis=0)
    inside = np.all((linear >= -GAMUT_TOLERANCE) & (linear <= 1.0 + GAMUT_TOLERANCE), axis=-1)
    return inside & ~out_of_range


def gamut_clip_fraction(lab):
    """Ułamek pikseli, których chrominancja zostałaby zmieniona przy konwersji do RGB."""
    return float(1.0 - in_gamut_mask(lab).mean())


def fit_chroma_to_gamut(lab, iterations=24):
    """Zmniejsza chrominancję pikseli spoza gamutu przy stałym L (bisekcja skali).

    Znak a i b nie zmienia się, a L zostaje nietknięte, więc szary obraz
    przechodzi przez zapis bez zmian (poza zaokrągleniem).

    Returns:
        tuple: (LabImage w gamucie, ułamek pikseli, które trzeba było dopasować)
    """
    base = lab.clipped()
    outside = ~in_gamut_mask(lab)
    fraction = float(outside.mean())
    if not outside.any():
        return base, fraction

    L = base.L[outside]
    ab = np.moveaxis(base.c, 0, -1)[outside]
    lo = np.zeros(L.shape)
    hi = np.ones(L.shape)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        cielab = np.concatenate([L[:, None] * L_SCALE, ab * mid[:, None] * AB_SCALE], axis=-1)
        linear = _linear_rgb(cielab[:, None, :])[:, 0, :]
        ok = np.all((linear >= -GAMUT_TOLERANCE) & (linear <= 1.0 + GAMUT_TOLERANCE), axis=-1)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)

    c = base.c.copy()
    c[:, outside] = (ab * lo[:, None]).T
    return LabImage(base.L, c), fraction


def quantize_to_storage(img):
    """Forma robocza -> forma zapisu: round(255 * v) (połówki od zera), przycięte do [0, 255]."""
    arr = np.asarray(img)
    if np.issubdtype(arr.dtype, np.integer):
        return _integer_levels(arr).astype(np.uint8)
    scaled = np.clip(as_working_form(arr), 0.0, 1.0) * 255.0
    # wartości są nieujemne, więc floor(x + 0.5) to zaokrąglenie połówek od zera
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def load_png(path):
    """Wczytuje bezstratny obraz PNG jako uint8 H x W x 3 (obrazy szare są rozszerzane do RGB)."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            if image.format != "PNG":
                raise InvalidImageError(
                    f"Obsługiwane są tylko bezstratne pliki PNG, {path.name} ma format {image.format}"
                )
            return np.array(image.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise InvalidImageError(f"Nie można odczytać obrazu {path}: {e}") from e


def save_png(path, img):
    """Zapisuje obraz w formie zapisu jako 8-bitowy PNG RGB, bez dodatkowych chunków."""
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise InvalidImageError(f"Kontener musi być zapisany jako PNG, podano: {path.name}")
    arr = quantize_to_storage(img)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")
    return path
