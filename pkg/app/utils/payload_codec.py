#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Ramkowanie danych binarnych i opcjonalna korekcja błędów BCH.

Ramka: 32-bitowy nagłówek (długość w bajtach, big-endian), bity danych MSB-first,
a przy włączonym ECC całość dzielona na bloki po k bitów i kodowana systematycznym
kodem BCH(n, k). Reszta pojemności wypełniana jest zerami; przed odwzorowaniem
na zmienną ukrytą strumień jest wybielany kluczem (whiten_bits), więc bity wysyłane
przez kanał są równomierne niezależnie od długości danych.
"""

import math
from dataclasses import dataclass, asdict
from functools import lru_cache

import galois
import numpy as np

from app.utils.errors import ConfigError, FramingError, PayloadTooLarge, ShapeMismatch, UncorrectableBlock

HEADER_BITS = 32


def parse_bool(value):
    """Wartość logiczna z JSON albo z linii poleceń ("true", "false", "1", "0")."""
    if isinstance(value, str):
        return value.strip().lower() in ("true", "yes", "1")
    return bool(value)


@dataclass(frozen=True)
class EccConfig:
    enabled: bool = False
    n: int = 255
    k: int = 131

    @classmethod
    def from_section(cls, section):
        section = section or {}
        return cls(
            enabled=parse_bool(section.get("enabled", False)),
            n=int(section.get("n", 255)),
            k=int(section.get("k", 131)),
        )

    @classmethod
    def from_config(cls, config):
        return cls(
            enabled=config.get_bool("ecc", "enabled", False),
            n=config.get_int("ecc", "n", 255),
            k=config.get_int("ecc", "k", 131),
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class BitPayload:
    """Zaramkowany strumień bitów gotowy do odwzorowania na przestrzeń ukrytą."""

    bits: np.ndarray
    payload_bytes: int
    framed_bits: int
    parity_bits: int = 0

    @property
    def padding_bits(self):
        return len(self.bits) - self.framed_bits


@lru_cache(maxsize=8)
def _bch_code(n, k):
    try:
        return galois.BCH(n, k)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Nieprawidłowe parametry kodu BCH({n}, {k}): {e}", key="ecc.k") from e


def bch_correctable(n, k):
    """Liczba błędów t poprawianych w jednym bloku BCH(n, k)."""
    return int(_bch_code(n, k).t)


def bytes_to_bits(data):
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits):
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def _as_blocks(bits, width):
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if len(bits) % width:
        raise ShapeMismatch(f"Liczba bitów {len(bits)} nie jest wielokrotnością {width}")
    return bits.reshape(-1, width)


def bch_encode(bits, n, k):
    """Systematyczne kodowanie BCH kolejnych bloków po k bitów (wiadomość, potem parzystość)."""
    blocks = _as_blocks(bits, k)
    if len(blocks) == 0:
        return np.zeros(0, dtype=np.uint8)
    codewords = _bch_code(n, k).encode(galois.GF2(blocks))
    return np.asarray(codewords, dtype=np.uint8).ravel()


def bch_decode(bits, n, k, strict=True):
    """Dekoduje bloki po n bitów.

    Args:
        bits: strumień o długości będącej wielokrotnością n
        strict (bool): gdy False, nienaprawialne bloki zwracają surowe bity wiadomości

    Returns:
        tuple: (bity wiadomości, liczba poprawionych bitów)

    Raises:
        UncorrectableBlock: gdy strict i któryś blok ma więcej niż t błędów
    """
    blocks = _as_blocks(bits, n)
    if len(blocks) == 0:
        return np.zeros(0, dtype=np.uint8), 0
    messages, errors = _bch_code(n, k).decode(galois.GF2(blocks), errors=True)
    messages = np.asarray(messages, dtype=np.uint8).reshape(len(blocks), k)
    errors = np.atleast_1d(np.asarray(errors))
    failed = np.flatnonzero(errors < 0)
    if len(failed):
        if strict:
            raise UncorrectableBlock(
                f"Blok BCH({n}, {k}) nr {failed[0]} ma więcej niż {bch_correctable(n, k)} błędów",
                block_index=int(failed[0]),
            )
        messages[failed] = blocks[failed, :k]
    corrected = int(errors[errors > 0].sum())
    return messages.ravel(), corrected


def framed_size_bits(payload_len, ecc=None):
    """Liczba bitów zajmowanych przez ramkę (bez wypełnienia)."""
    message_bits = HEADER_BITS + 8 * payload_len
    if ecc is None or not ecc.enabled:
        return message_bits
    return math.ceil(message_bits / ecc.k) * ecc.n


def max_payload_bytes(capacity_bits, ecc=None):
    """Największa liczba bajtów, która po zaramkowaniu zmieści się w pojemności."""
    if ecc is not None and ecc.enabled:
        message_bits = (capacity_bits // ecc.n) * ecc.k
    else:
        message_bits = capacity_bits
    return max(0, (message_bits - HEADER_BITS) // 8)


def frame_payload(data, capacity_bits, ecc=None):
    """Bajty -> zaramkowany strumień dokładnie capacity_bits bitów.

    Raises:
        PayloadTooLarge: gdy ramka nie mieści się w pojemności
    """
    data = bytes(data)
    if framed_size_bits(len(data), ecc) > capacity_bits:
        raise PayloadTooLarge(len(data), max_payload_bytes(capacity_bits, ecc))

    header = np.array([(len(data) >> (HEADER_BITS - 1 - i)) & 1 for i in range(HEADER_BITS)], dtype=np.uint8)
    message = np.concatenate([header, bytes_to_bits(data)])
    parity_bits = 0
    if ecc is not None and ecc.enabled:
        blocks = math.ceil(len(message) / ecc.k)
        message = np.concatenate([message, np.zeros(blocks * ecc.k - len(message), dtype=np.uint8)])
        message = bch_encode(message, ecc.n, ecc.k)
        parity_bits = blocks * (ecc.n - ecc.k)

    framed_bits = len(message)
    bits = np.zeros(capacity_bits, dtype=np.uint8)
    bits[:framed_bits] = message
    return BitPayload(bits=bits, payload_bytes=len(data), framed_bits=framed_bits, parity_bits=parity_bits)


def whiten_bits(bits, key):
    """XOR z kluczowanym strumieniem pseudolosowym; ta sama operacja cofa wybielanie."""
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    stream = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(key), len(bits)])))
    return bits ^ stream.integers(0, 2, size=len(bits), dtype=np.uint8)


def _read_header(bits):
    return int("".join(str(int(b)) for b in bits[:HEADER_BITS]), 2)


def unframe_payload(bits, ecc=None, strict=True):
    """Zaramkowany strumień -> oryginalne bajty.

    Raises:
        FramingError: gdy nagłówek długości nie pasuje do pojemności
        UncorrectableBlock: gdy ECC nie zdołało naprawić bloku (tylko strict)
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    capacity = len(bits)

    if ecc is None or not ecc.enabled:
        if capacity < HEADER_BITS:
            raise FramingError(f"Strumień ma tylko {capacity} bitów, za mało na nagłówek")
        length = _read_header(bits)
        if framed_size_bits(length) > capacity:
            raise FramingError(f"Nagłówek deklaruje {length} B, a pojemność to {max_payload_bytes(capacity)} B")
        return bits_to_bytes(bits[HEADER_BITS:HEADER_BITS + 8 * length])

    header_blocks = math.ceil(HEADER_BITS / ecc.k)
    if header_blocks * ecc.n > capacity:
        raise FramingError(f"Strumień ma tylko {capacity} bitów, za mało na nagłówek z ECC")
    head, _ = bch_decode(bits[:header_blocks * ecc.n], ecc.n, ecc.k, strict=strict)
    length = _read_header(head)
    needed = framed_size_bits(length, ecc)
    if needed > capacity:
        raise FramingError(
            f"Nagłówek deklaruje {length} B, a pojemność z ECC to {max_payload_bytes(capacity, ecc)} B"
        )
    message, _ = bch_decode(bits[:needed], ecc.n, ecc.k, strict=strict)
    return bits_to_bytes(message[HEADER_BITS:HEADER_BITS + 8 * length])
