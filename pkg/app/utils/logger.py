#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import os
import sys
import tempfile
from loguru import logger

_configured = False
_run_sink_ids = []


def _is_human_record(record):
    return "progress" not in record["extra"]


def _is_progress_record(record):
    return "progress" in record["extra"]


def setup_logger(level=None, rotation="10 MB", retention="30 days"):
    """Konfiguruje globalny logger loguru (tylko raz na proces) i go zwraca."""
    global _configured
    if _configured and level is None:
        return logger

    level = level or os.environ.get("CHROMAHIDE_LOG_LEVEL", "INFO")

    # Określenie katalogu logów względem katalogu projektu
    base_path = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    logs_dir = os.path.join(base_path, "logs")

    try:
        os.makedirs(logs_dir, exist_ok=True)
        log_file = os.path.join(logs_dir, "app.log")
    except Exception as e:
        print(f"Nie można utworzyć katalogu logów: {e}")
        # Awaryjnie użyj katalogu tymczasowego
        logs_dir = tempfile.gettempdir()
        log_file = os.path.join(logs_dir, "chromahide_app.log")

    logger.remove()  # Usunięcie domyślnego handlera (i poprzednich, przy rekonfiguracji)
    _run_sink_ids.clear()

    try:
        logger.add(
            log_file,
            rotation=rotation,
            retention=retention,
            level="DEBUG",
            format="{time:YYYY-MM-DD HH:mm:ss} | {level} | {name} | {message}",
            encoding="utf-8",
            filter=_is_human_record,
            backtrace=True,
            diagnose=False,
        )
    except Exception as e:
        print(f"Nie można dodać handlera pliku: {e}")

    logger.add(
        sys.stderr,
        level=level,
        format="{time:HH:mm:ss} | <level>{level: <8}</level> | {message}",
        colorize=True,
        filter=_is_human_record,
        backtrace=True,
        diagnose=False,
    )

    _configured = True
    return logger


def add_run_sinks(run_dir):
    """Dodaje ujście progress.jsonl dla jednego uruchomienia (treningu lub ewaluacji).

    Rekordy postępu wysyłane są przez ``logger.bind(progress=True)`` i trafiają
    wyłącznie do tego pliku, po jednym obiekcie JSON w linii.
    """
    os.makedirs(run_dir, exist_ok=True)
    sink_id = logger.add(
        os.path.join(run_dir, "progress.jsonl"),
        level="INFO",
        format="{message}",
        filter=_is_progress_record,
        encoding="utf-8",
    )
    _run_sink_ids.append(sink_id)
    return sink_id


def remove_run_sinks():
    """Odłącza wszystkie ujścia dodane przez add_run_sinks."""
    while _run_sink_ids:
        sink_id = _run_sink_ids.pop()
        try:
            logger.remove(sink_id)
        except ValueError:
            pass
