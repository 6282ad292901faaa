#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Wyjątki używane w całej aplikacji chromahide."""


class ChromaHideError(Exception):
    """Bazowy wyjątek aplikacji."""


class ConfigError(ChromaHideError):
    """Błędna lub niekompletna konfiguracja."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class InvalidImageError(ChromaHideError):
    """Obraz o złym kształcie, formacie albo z wartościami nieskończonymi."""


class DatasetError(ChromaHideError):
    """Brak katalogu ze zbiorem danych albo pusty zbiór."""


class ShapeMismatch(ChromaHideError):
    """Niezgodne wymiary tensorów lub długości strumieni bitów."""


class PayloadError(ChromaHideError):
    """Bazowy wyjątek warstwy ramkowania danych."""


class PayloadTooLarge(PayloadError):
    """Dane po zaramkowaniu nie mieszczą się w pojemności obrazu."""

    def __init__(self, payload_bytes, capacity_bytes):
        super().__init__(
            f"Dane ({payload_bytes} B) nie mieszczą się w kontenerze: "
            f"maksymalnie {capacity_bytes} B"
        )
        self.payload_bytes = payload_bytes
        self.capacity_bytes = capacity_bytes


class FramingError(PayloadError):
    """Nagłówek długości jest niespójny z pojemnością (zły model albo obraz)."""


class UncorrectableBlock(PayloadError):
    """Dekoder BCH nie potrafił poprawić bloku."""

    def __init__(self, message, block_index=None):
        super().__init__(message)
        self.block_index = block_index


class TrainingDivergence(ChromaHideError):
    """Wartości nieskończone w aktywacjach, funkcji straty lub wyjściu sieci."""


class UntrainedModel(ChromaHideError):
    """Próba ukrywania danych modelem, który nie był trenowany."""


class CheckpointError(ChromaHideError):
    """Nieczytelny punkt kontrolny albo niezgodna wersja formatu."""
