#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Komendy CLI. Każda funkcja cmd_* przyjmuje sparsowane argumenty i zwraca kod wyjścia:
0 - sukces, 1 - błąd wykonania, 2 - błąd użycia lub konfiguracji.
"""

import os
from pathlib import Path

import numpy as np

from app.utils.colorspace import load_png, save_png
from app.utils.config_loader import ConfigLoader
from app.utils.dataset import ingest_dataset
from app.utils.errors import CheckpointError, ChromaHideError, ConfigError, PayloadTooLarge
from app.utils.eval_harness import (
    ecc_for_comparison,
    evaluate_channel,
    run_capacity_sweep,
    run_rounds_ablation,
    write_report,
)
from app.utils.flow_core import FlowConfig, init_model
from app.utils.logger import add_run_sinks, remove_run_sinks, setup_logger
from app.utils.pipeline import StegoModel, StegoSettings, colorize, hide, reveal
from app.utils.training import TrainConfig, train_stage1, train_stage2

logger = setup_logger()

RUN_DIR_ENV = "CHROMAHIDE_RUN_DIR"
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def load_run_config(args, required=()):
    """Konfiguracja: wartości domyślne <- plik <- zmienna środowiskowa <- flagi."""
    overrides = {}
    if os.environ.get(RUN_DIR_ENV):
        overrides["general.run_dir"] = os.environ[RUN_DIR_ENV]
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"Nadpisanie musi mieć postać sekcja.klucz=wartość: {item}", key=item)
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    flag_keys = {
        "seed": "general.seed",
        "data": "data.path",
        "eval_data": "data.eval_path",
        "features_dir": "data.features_path",
        "run_dir": "general.run_dir",
    }
    for attr, dotted_key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[dotted_key] = value

    config = ConfigLoader(getattr(args, "config", None), overrides).validate(required=required)
    setup_logger(
        level=config.get_value("general", "log_level", "INFO"),
        rotation=config.get_value("general", "log_rotation", "10 MB"),
        retention=config.get_value("general", "log_retention", "30 days"),
    )
    return config


def prepare_run_dir(config, name):
    """runs/<nazwa>/ z podkatalogiem checkpoints/, ujściem progress.jsonl i kopią konfiguracji."""
    run_dir = Path(config.get_value("general", "run_dir", "runs")) / name
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    add_run_sinks(str(run_dir))
    config.save_config(str(run_dir / "config.json"))
    logger.info(f"Katalog uruchomienia: {run_dir}")
    return run_dir


def settings_from_config(config):
    return StegoSettings.from_config(config)


def _load_training_data(config):
    return ingest_dataset(
        config.get_value("data", "path"),
        config.get_int("data", "size", 128),
        val_fraction=config.get_float("data", "val_fraction", 0.1),
        features_dir=config.get_value("data", "features_path"),
    )


def _load_features(path):
    return None if path is None else np.load(path).astype(np.float32)


def cmd_train_stage1(args):
    config = load_run_config(args, required=("data.path",))
    run_dir = prepare_run_dir(config, args.name or "stage1")
    train_set, _ = _load_training_data(config)

    flow_config = FlowConfig.from_section(
        config.section("model"), size=config.get_int("data", "size", 128), seed=config.get_int("general", "seed")
    )
    model = init_model(flow_config)
    settings = settings_from_config(config)
    checkpoint = run_dir / "checkpoints" / "stage1.pt"
    train_stage1(train_set, TrainConfig.from_config(config), model,
                 checkpoint_path=checkpoint, checkpoint_extra=settings.to_extra())
    StegoModel(model, settings).save(checkpoint)
    logger.info(f"✅ Etap 1 zakończony, punkt kontrolny: {checkpoint}")
    return EXIT_OK


def cmd_train_stage2(args):
    config = load_run_config(args, required=("data.path",))
    run_dir = prepare_run_dir(config, args.name or "stage2")
    base = StegoModel.load(args.init_checkpoint)
    if base.flow.stage != "stage1":
        raise CheckpointError(
            f"Etap 2 wymaga punktu kontrolnego po etapie 1, {args.init_checkpoint} ma etap {base.flow.stage!r}"
        )
    train_set, _ = _load_training_data(config)

    settings = settings_from_config(config)
    checkpoint = run_dir / "checkpoints" / "stage2.pt"
    flow = train_stage2(base.flow, train_set, TrainConfig.from_config(config),
                        checkpoint_path=checkpoint, checkpoint_extra=settings.to_extra())
    StegoModel(flow, settings).save(checkpoint)
    logger.info(f"✅ Etap 2 zakończony, punkt kontrolny: {checkpoint}")
    return EXIT_OK


def cmd_hide(args):
    config = load_run_config(args)
    model = StegoModel.load(args.model)
    host = load_png(args.host)
    payload = Path(args.input).read_bytes()
    result = hide(payload, host, model, seed=config.get_int("general", "seed"),
                  features=_load_features(args.features))
    save_png(args.out, result.container)
    if result.bit_errors:
        logger.warning(f"⚠️ Kontener odczytuje {result.bit_errors} bitów błędnie po {result.attempts} próbach; "
                       "odczyt zależy od korekcji błędów")
    logger.info(f"✅ Ukryto {len(payload)} B w {args.out} ({result.bits_embedded} bitów, "
                f"poza gamutem: {result.clip_fraction:.2%})")
    return EXIT_OK


def cmd_reveal(args):
    load_run_config(args)
    model = StegoModel.load(args.model)
    container = load_png(args.container)
    payload = reveal(container, model, features=_load_features(args.features))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_bytes(payload)
    logger.info(f"✅ Odczytano {len(payload)} B do {args.out}")
    return EXIT_OK


def cmd_colorize(args):
    config = load_run_config(args)
    model = StegoModel.load(args.model)
    image, fraction = colorize(load_png(args.host), model, seed=config.get_int("general", "seed"),
                               temperature=args.temperature, features=_load_features(args.features))
    save_png(args.out, image)
    logger.info(f"✅ Koloryzacja zapisana w {args.out} (poza gamutem: {fraction:.2%})")
    return EXIT_OK


def _load_eval_data(config, size):
    """Hosty do ewaluacji: osobny katalog (transfer) albo część walidacyjna zbioru treningowego."""
    features_dir = config.get_value("data", "features_path")
    eval_path = config.get_value("data", "eval_path")
    if eval_path:
        hosts, _ = ingest_dataset(eval_path, size, val_fraction=0.0, features_dir=features_dir)
        return hosts
    train_set, val_set = ingest_dataset(config.get_value("data", "path"), size,
                                        val_fraction=config.get_float("data", "val_fraction", 0.1),
                                        features_dir=features_dir)
    return val_set if len(val_set) else train_set


def _metadata(config, model_path):
    return {"model": str(model_path), "seed": config.get_int("general", "seed"),
            "alpha": config.get_float("mapping", "alpha", 0.1)}


def cmd_eval(args):
    config = load_run_config(args)
    if not config.get_value("data", "eval_path") and not config.get_value("data", "path"):
        raise ConfigError("Brak wymaganego klucza konfiguracji: data.path", key="data.path")
    run_dir = prepare_run_dir(config, args.name or "eval")
    model = StegoModel.load(args.model)
    hosts = _load_eval_data(config, model.flow.config.height)
    eval_section = config.section("eval")
    seed = config.get_int("general", "seed")

    report = evaluate_channel(model, hosts, seed=seed, hosts=eval_section.get("hosts"),
                              ecc=ecc_for_comparison(model.settings.ecc, eval_section),
                              histogram_bins=int(eval_section.get("histogram_bins", 32)))
    sweep = None
    if model.flow.config.condition == "conv":
        sweep = run_capacity_sweep(model, eval_section.get("sizes", []), hosts=4, seed=seed)
    write_report(run_dir, report, sweep=sweep, metadata=_metadata(config, args.model))
    logger.info(f"✅ Dokładność: {report.acc_ideal:.2f}% bez zaokrąglenia, {report.acc_rounded:.2f}% z zaokrągleniem")
    return EXIT_OK


def cmd_ablate_rounds(args):
    config = load_run_config(args, required=("data.path",))
    run_dir = prepare_run_dir(config, args.name or "ablate-rounds")
    base = StegoModel.load(args.model)
    train_set, _ = _load_training_data(config)
    hosts = _load_eval_data(config, base.flow.config.height)
    eval_section = config.section("eval")

    report, _ = run_rounds_ablation(
        train_set, base, TrainConfig.from_config(config), eval_dataset=hosts,
        hosts=eval_section.get("hosts"), seed=config.get_int("general", "seed"),
        checkpoint_path=run_dir / "checkpoints" / "stage2.pt",
        ecc=ecc_for_comparison(base.settings.ecc, eval_section),
        histogram_bins=int(eval_section.get("histogram_bins", 32)),
    )
    write_report(run_dir, report, metadata=_metadata(config, args.model))
    return EXIT_OK


def run_command(handler, args):
    """Wywołuje komendę i zamienia wyjątki na kody wyjścia."""
    try:
        return handler(args)
    except ConfigError as e:
        logger.error(f"❌ Błąd konfiguracji: {e}")
        return EXIT_USAGE
    except PayloadTooLarge as e:
        logger.error(f"❌ {e}")
        return EXIT_FAILURE
    except ChromaHideError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_FAILURE
    except OSError as e:
        logger.error(f"❌ Błąd pliku: {e}")
        return EXIT_FAILURE
    finally:
        remove_run_sinks()
