#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import hashlib
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageOps
from torch.utils.data import Dataset

from app.utils.colorspace import rgb_to_lab
from app.utils.errors import DatasetError
from app.utils.logger import setup_logger

logger = setup_logger()

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}
RESIZE_FILTER = Image.Resampling.BILINEAR


class LabDataset(Dataset):
    """Zbiór obrazów w postaci Lab: L (N, H, W) i c (N, 2, H, W) jako tensory float32."""

    def __init__(self, L, c, names=None, features=None):
        self.L = torch.as_tensor(np.asarray(L), dtype=torch.float32)
        self.c = torch.as_tensor(np.asarray(c), dtype=torch.float32)
        self.names = list(names) if names is not None else [f"img_{i:05d}" for i in range(len(self.L))]
        self.features = None if features is None else torch.as_tensor(np.asarray(features), dtype=torch.float32)

    @classmethod
    def from_rgb_images(cls, images, names=None, features=None):
        """Buduje zbiór z listy obrazów RGB (uint8 lub float) o jednakowym rozmiarze."""
        if len(images) == 0:
            raise DatasetError("Zbiór danych jest pusty")
        labs = [rgb_to_lab(image) for image in images]
        return cls(np.stack([lab.L for lab in labs]), np.stack([lab.c for lab in labs]), names, features)

    def __len__(self):
        return len(self.L)

    def __getitem__(self, index):
        if self.features is None:
            return self.L[index], self.c[index]
        return self.L[index], self.c[index], self.features[index]

    @property
    def image_size(self):
        return tuple(self.L.shape[-2:])

    def subset(self, indices):
        indices = list(indices)
        features = None if self.features is None else self.features[indices]
        return LabDataset(self.L[indices], self.c[indices], [self.names[i] for i in indices], features)


def load_image(path, size):
    """Wczytuje obraz, przycina środek do kwadratu i skaluje dwuliniowo do size x size."""
    with Image.open(path) as image:
        image = image.convert("RGB")
        image = ImageOps.fit(image, (size, size), method=RESIZE_FILTER, centering=(0.5, 0.5))
        return np.array(image, dtype=np.uint8)


def split_is_validation(name, val_fraction):
    """Deterministyczny podział trening/walidacja po skrócie nazwy pliku."""
    digest = hashlib.sha1(name.encode("utf-8")).hexdigest()
    return (int(digest[:8], 16) % 10000) / 10000.0 < val_fraction


def ingest_dataset(directory, size, val_fraction=0.1, features_dir=None):
    """Wczytuje katalog obrazów do dwóch zbiorów Lab (trening, walidacja).

    Nieczytelne pliki są pomijane z ostrzeżeniem; pusty zbiór to błąd krytyczny.

    Returns:
        tuple: (LabDataset treningowy, LabDataset walidacyjny)
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"Katalog ze zbiorem danych nie istnieje: {directory}")

    images, names, features = [], [], []
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() not in IMAGE_SUFFIXES or not path.is_file():
            continue
        try:
            pixels = load_image(path, size)
        except Exception as e:
            logger.warning(f"⚠️ Pomijam nieczytelny plik {path.name}: {e}")
            continue
        if features_dir is not None:
            feature_path = Path(features_dir) / f"{path.stem}.npy"
            if not feature_path.exists():
                logger.warning(f"⚠️ Pomijam {path.name}: brak cech {feature_path.name}")
                continue
            features.append(np.load(feature_path).astype(np.float32))
        images.append(pixels)
        names.append(path.name)

    if not images:
        raise DatasetError(f"Brak czytelnych obrazów w katalogu {directory}")

    dataset = LabDataset.from_rgb_images(images, names, np.stack(features) if features else None)
    val_idx = [i for i, name in enumerate(names) if split_is_validation(name, val_fraction)]
    train_idx = [i for i, name in enumerate(names) if not split_is_validation(name, val_fraction)]
    if not train_idx:
        train_idx, val_idx = val_idx, []
    logger.info(f"✅ Wczytano {len(names)} obrazów {size}x{size} z {directory} "
                f"(trening: {len(train_idx)}, walidacja: {len(val_idx)})")
    return dataset.subset(train_idx), dataset.subset(val_idx)
