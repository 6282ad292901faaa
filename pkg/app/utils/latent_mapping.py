#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Moduł odwzorowania: bity -> zmienna ukryta z "przerwą" wokół zera, i z powrotem.

Bit 0 to wartość normalna < -alpha, bit 1 to wartość > alpha. Kolejność bitów:
kanał, potem wiersz, potem kolumna (spłaszczenie C tablicy 2 x H x W).
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from app.utils.errors import ShapeMismatch

DEFAULT_ALPHA = 0.1
MAX_ATTEMPTS = 64


@dataclass
class LatentCode:
    values: np.ndarray
    alpha: float = DEFAULT_ALPHA

    @property
    def shape(self):
        return self.values.shape


def capacity_bits(height, width):
    """Jeden bit na wymiar zmiennej ukrytej, dwa kanały chrominancji na piksel."""
    if height <= 0 or width <= 0:
        raise ValueError(f"Wymiary obrazu muszą być dodatnie: {height}x{width}")
    return 2 * height * width


def _uniform_stream(seed, attempt, count):
    """Strumień licznikowy: wartość i zależy tylko od (seed, attempt, i)."""
    bit_generator = np.random.Philox(np.random.SeedSequence([int(seed), int(attempt)]))
    return np.random.Generator(bit_generator).random(count)


def _truncated_tail(u, alpha):
    """Odwrotna dystrybuanta ogona N(0,1) powyżej alpha (dla wartości dodatnich)."""
    tail = ndtr(-alpha)
    return -ndtri(tail * (1.0 - u))


def encode_bits(bits, shape, alpha=DEFAULT_ALPHA, seed=0):
    """Próbkowanie odrzucające: dla bitu 0 losujemy N(0,1) aż z < -alpha, dla bitu 1 aż z > alpha.

    Args:
        bits: strumień 0/1 długości równej liczbie elementów shape
        shape: kształt zmiennej ukrytej, zwykle (2, H, W)
        alpha (float): połowa szerokości przerwy, w [0, 1)
        seed (int): ziarno strumienia losowego

    Returns:
        LatentCode: wartości float64 o zadanym kształcie
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha musi należeć do [0, 1), podano {alpha}")
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    size = int(np.prod(shape))
    if len(bits) != size:
        raise ShapeMismatch(f"Liczba bitów {len(bits)} różni się od wymiaru zmiennej ukrytej {size}")

    sign = np.where(bits == 1, 1.0, -1.0)
    values = np.zeros(size)
    pending = np.ones(size, dtype=bool)
    for attempt in range(MAX_ATTEMPTS):
        u = _uniform_stream(seed, attempt, size)
        # u == 0 dałoby -inf, taka próba zostaje po prostu odrzucona
        draws = ndtri(np.clip(u, np.finfo(float).tiny, None))
        accepted = pending & (draws * sign > alpha)
        values[accepted] = draws[accepted]
        pending &= ~accepted
        if not pending.any():
            break

    if pending.any():
        # prawdopodobieństwo ~0.54^64 na współrzędną; domykamy dokładnym ogonem
        u = _uniform_stream(seed, MAX_ATTEMPTS, size)
        values[pending] = sign[pending] * _truncated_tail(u[pending], alpha)

    return LatentCode(values=values.reshape(shape), alpha=float(alpha))


def decode_latent(z):
    """Znak -> bit: wartość < 0 daje 0, w przeciwnym razie 1 (zero to 1).

    Przyjmuje LatentCode, tablicę numpy albo tensor; dla wejścia z wymiarem
    wsadowym (B, 2, H, W) zwraca tablicę (B, 2*H*W).
    """
    values = z.values if isinstance(z, LatentCode) else z
    if hasattr(values, "detach"):
        values = values.detach().cpu().numpy()
    values = np.asarray(values)
    bits = (values >= 0).astype(np.uint8)
    if values.ndim == 4:
        return bits.reshape(values.shape[0], -1)
    return bits.ravel()


def gap_truncated_cdf(x, alpha=DEFAULT_ALPHA):
    """Dystrybuanta rozkładu N(0,1) z wyciętym przedziałem [-alpha, alpha] (bity równomierne)."""
    x = np.asarray(x, dtype=np.float64)
    mass = 2.0 * ndtr(-alpha)
    left = ndtr(np.minimum(x, -alpha)) / mass
    right = np.clip(ndtr(x) - ndtr(alpha), 0.0, None) / mass
    return np.where(x < alpha, left, 0.5 + right)
