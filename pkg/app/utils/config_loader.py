#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import copy
import json
import os

from app.utils.errors import ConfigError
from app.utils.logger import setup_logger
from app.utils.payload_codec import bch_correctable

logger = setup_logger()

DEFAULT_CONFIG = {
    "general": {
        "log_level": "INFO",
        "log_rotation": "10 MB",
        "log_retention": "30 days",
        "seed": 0,
        "run_dir": "runs",
    },
    "data": {
        "path": None,
        "size": 128,
        "val_fraction": 0.1,
        "eval_path": None,
        "features_path": None,
    },
    "model": {
        "layers": 30,
        "hidden_channels": 64,
        "cond_channels": 16,
        "clamp": 2.0,
        "condition": "conv",
        "external_channels": 0,
    },
    "mapping": {
        "alpha": 0.1,
        "whitening_key": 0,
        "verify_attempts": 64,
    },
    "training": {
        "lr": 1e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "lr_decay_factor": 5.0,
        "plateau_window": 200,
        "plateau_patience": 3,
        "plateau_threshold": 0.001,
        "batch_size": 48,
        "epochs": 20,
        "rounds": 5,
        "iters_per_round": 4000,
        "recon_weight": 1.0,
        "dequant_noise": 1.0 / 255.0,
        "gamut_mapping": "chroma",
    },
    "ecc": {
        "enabled": False,
        "n": 255,
        "k": 131,
    },
    "eval": {
        "hosts": 16,
        "sizes": [16, 32, 64, 128],
        "histogram_bins": 32,
        "ecc_compare": True,
    },
}


def default_config_path():
    """Ścieżka do config/settings.json w katalogu projektu (lub w bieżącym katalogu)."""
    script_dir = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    config_path = os.path.join(script_dir, "config", "settings.json")
    if os.path.exists(config_path):
        return config_path
    return os.path.join(os.getcwd(), "config", "settings.json")


def _deep_merge(base, update):
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def _parse_override_value(raw):
    """Wartości z linii poleceń traktujemy jak JSON, a gdy się nie da - jak tekst."""
    if not isinstance(raw, str):
        return raw
    try:
        return json.loads(raw)
    except ValueError:
        return raw


class ConfigLoader:
    """Efektywna konfiguracja uruchomienia: wartości domyślne <- plik <- flagi."""

    def __init__(self, config_path=None, overrides=None, use_file=True):
        self.config_path = config_path or default_config_path()
        self.config = copy.deepcopy(DEFAULT_CONFIG)
        if use_file:
            _deep_merge(self.config, self._load_config(explicit=config_path is not None))
        for dotted_key, value in (overrides or {}).items():
            self.set_value_dotted(dotted_key, value)

    def _load_config(self, explicit):
        """Ładuje konfigurację z pliku."""
        if not os.path.exists(self.config_path):
            if explicit:
                raise ConfigError(f"Plik konfiguracyjny nie istnieje: {self.config_path}")
            logger.debug(f"Brak pliku konfiguracyjnego {self.config_path}, używam wartości domyślnych")
            return {}
        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError(f"Błąd podczas ładowania konfiguracji {self.config_path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Plik konfiguracyjny musi zawierać obiekt JSON: {self.config_path}")
        return loaded

    def get_value(self, section, key, default=None):
        """Pobiera wartość z konfiguracji."""
        try:
            value = self.config[section][key]
        except (KeyError, TypeError):
            return default
        return default if value is None else value

    def get_int(self, section, key, default=0):
        """Pobiera wartość liczbową całkowitą z konfiguracji."""
        value = self.get_value(section, key)
        if value is None:
            return default
        try:
            return int(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Klucz {section}.{key} musi być liczbą całkowitą, jest: {value!r}", key=f"{section}.{key}") from e

    def get_float(self, section, key, default=0.0):
        """Pobiera wartość zmiennoprzecinkową z konfiguracji."""
        value = self.get_value(section, key)
        if value is None:
            return default
        try:
            return float(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Klucz {section}.{key} musi być liczbą, jest: {value!r}", key=f"{section}.{key}") from e

    def get_bool(self, section, key, default=False):
        """Pobiera wartość logiczną z konfiguracji."""
        value = self.get_value(section, key)
        if value is None:
            return default
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            return value.lower() in ("true", "yes", "1")
        return bool(value)

    def section(self, name):
        """Zwraca kopię całej sekcji."""
        return copy.deepcopy(self.config.get(name, {}))

    def set_value(self, section, key, value):
        """Ustawia wartość w konfiguracji (bez zapisu na dysk)."""
        if section not in self.config or not isinstance(self.config[section], dict):
            self.config[section] = {}
        self.config[section][key] = value

    def set_value_dotted(self, dotted_key, value):
        if "." not in dotted_key:
            raise ConfigError(f"Nadpisanie musi mieć postać sekcja.klucz=wartość: {dotted_key}", key=dotted_key)
        section, key = dotted_key.split(".", 1)
        self.set_value(section, key, _parse_override_value(value))

    def validate(self, required=()):
        """Sprawdza kompletność i zakresy konfiguracji, zanim zacznie się praca.

        Args:
            required (iterable): klucze w postaci ``sekcja.klucz``, które muszą być ustawione

        Raises:
            ConfigError: z nazwą pierwszego brakującego lub błędnego klucza
        """
        for dotted_key in required:
            section, key = dotted_key.split(".", 1)
            if self.get_value(section, key) in (None, ""):
                raise ConfigError(f"Brak wymaganego klucza konfiguracji: {dotted_key}", key=dotted_key)

        checks = [
            ("model", "layers", self.get_int("model", "layers") >= 1),
            ("model", "hidden_channels", self.get_int("model", "hidden_channels") >= 1),
            ("model", "cond_channels", self.get_int("model", "cond_channels") >= 1),
            ("model", "clamp", self.get_float("model", "clamp") > 0),
            ("model", "condition", self.get_value("model", "condition") in ("conv", "external")),
            ("mapping", "alpha", 0.0 <= self.get_float("mapping", "alpha") < 1.0),
            ("mapping", "whitening_key", self.get_int("mapping", "whitening_key") >= 0),
            ("mapping", "verify_attempts", self.get_int("mapping", "verify_attempts") >= 1),
            ("data", "size", self.get_int("data", "size") >= 2 and self.get_int("data", "size") % 2 == 0),
            ("data", "val_fraction", 0.0 <= self.get_float("data", "val_fraction") < 1.0),
            ("training", "lr", self.get_float("training", "lr") > 0),
            ("training", "lr_decay_factor", self.get_float("training", "lr_decay_factor") > 1.0),
            ("training", "batch_size", self.get_int("training", "batch_size") >= 1),
            ("training", "epochs", self.get_int("training", "epochs") >= 0),
            ("training", "rounds", self.get_int("training", "rounds") >= 0),
            ("training", "iters_per_round", self.get_int("training", "iters_per_round") >= 0),
            ("training", "recon_weight", self.get_float("training", "recon_weight") >= 0),
            ("training", "dequant_noise", self.get_float("training", "dequant_noise") >= 0),
            ("training", "gamut_mapping", self.get_value("training", "gamut_mapping") in ("chroma", "clip")),
            ("ecc", "n", self.get_int("ecc", "n") > self.get_int("ecc", "k") > 0
             and self.get_int("ecc", "n") & (self.get_int("ecc", "n") + 1) == 0),
        ]
        for section, key, ok in checks:
            if not ok:
                value = self.get_value(section, key)
                raise ConfigError(f"Nieprawidłowa wartość {section}.{key}: {value!r}", key=f"{section}.{key}")
        # k musi być wymiarem istniejącego kodu BCH o długości n
        bch_correctable(self.get_int("ecc", "n"), self.get_int("ecc", "k"))
        return self

    def save_config(self, path):
        """Zapisuje efektywną konfigurację (np. do katalogu uruchomienia)."""
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as config_file:
            json.dump(self.config, config_file, ensure_ascii=False, indent=4, sort_keys=True)
        return path
