#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import argparse
import sys

from app.cli.commands import (
    cmd_ablate_rounds,
    cmd_colorize,
    cmd_eval,
    cmd_hide,
    cmd_reveal,
    cmd_train_stage1,
    cmd_train_stage2,
    run_command,
)


def _add_common(parser):
    parser.add_argument("--config", help="plik konfiguracji JSON (domyślnie config/settings.json)")
    parser.add_argument("--seed", type=int, help="ziarno wszystkich generatorów losowych")
    parser.add_argument("--run-dir", dest="run_dir", help="katalog uruchomień (domyślnie $CHROMAHIDE_RUN_DIR lub runs)")
    parser.add_argument("--name", help="nazwa uruchomienia (podkatalog w katalogu uruchomień)")
    parser.add_argument("--set", action="append", metavar="SEKCJA.KLUCZ=WARTOŚĆ",
                        help="nadpisanie wartości konfiguracji (można podać wielokrotnie)")


def _add_data(parser):
    parser.add_argument("--data", help="katalog z obrazami treningowymi (data.path)")
    parser.add_argument("--eval-data", dest="eval_data", help="osobny katalog hostów do ewaluacji (data.eval_path)")
    parser.add_argument("--features-dir", dest="features_dir",
                        help="katalog z cechami .npy dla warunkowania zewnętrznego (data.features_path)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chromahide",
        description="Ukrywanie danych w kolorach obrazów w skali szarości za pomocą warunkowej sieci odwracalnej",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    stage1 = commands.add_parser("train-stage1", help="etap 1: trening metodą największej wiarygodności")
    _add_common(stage1)
    _add_data(stage1)
    stage1.set_defaults(handler=cmd_train_stage1)

    stage2 = commands.add_parser("train-stage2", help="etap 2: trening rundowy odporny na zaokrąglenie")
    _add_common(stage2)
    _add_data(stage2)
    stage2.add_argument("--init-checkpoint", dest="init_checkpoint", required=True,
                        help="punkt kontrolny po etapie 1")
    stage2.set_defaults(handler=cmd_train_stage2)

    hide_cmd = commands.add_parser("hide", help="ukrycie pliku w kolorach hosta PNG")
    _add_common(hide_cmd)
    hide_cmd.add_argument("--model", required=True, help="punkt kontrolny modelu")
    hide_cmd.add_argument("--host", required=True, help="obraz hosta PNG (kolorowy lub szary)")
    hide_cmd.add_argument("--in", dest="input", required=True, help="plik z danymi do ukrycia")
    hide_cmd.add_argument("--out", required=True, help="wyjściowy kontener PNG")
    hide_cmd.add_argument("--features", help="cechy .npy hosta (warunkowanie zewnętrzne)")
    hide_cmd.set_defaults(handler=cmd_hide)

    reveal_cmd = commands.add_parser("reveal", help="odczyt danych z kontenera PNG")
    _add_common(reveal_cmd)
    reveal_cmd.add_argument("--model", required=True, help="punkt kontrolny modelu")
    reveal_cmd.add_argument("--container", required=True, help="kontener PNG")
    reveal_cmd.add_argument("--out", required=True, help="plik wyjściowy z odczytanymi danymi")
    reveal_cmd.add_argument("--features", help="cechy .npy kontenera (warunkowanie zewnętrzne)")
    reveal_cmd.set_defaults(handler=cmd_reveal)

    eval_cmd = commands.add_parser("eval", help="dokładność odczytu, pojemność i wierność obrazu szarego")
    _add_common(eval_cmd)
    _add_data(eval_cmd)
    eval_cmd.add_argument("--model", required=True, help="punkt kontrolny modelu")
    eval_cmd.set_defaults(handler=cmd_eval)

    ablate = commands.add_parser("ablate-rounds", help="ablacja liczby rund treningu etapu 2")
    _add_common(ablate)
    _add_data(ablate)
    ablate.add_argument("--model", required=True, help="punkt kontrolny po etapie 1")
    ablate.set_defaults(handler=cmd_ablate_rounds)

    colorize_cmd = commands.add_parser("colorize", help="koloryzacja obrazu szarego bez ukrywania danych")
    _add_common(colorize_cmd)
    colorize_cmd.add_argument("--model", required=True, help="punkt kontrolny modelu")
    colorize_cmd.add_argument("--host", required=True, help="obraz PNG")
    colorize_cmd.add_argument("--out", required=True, help="wyjściowy obraz PNG")
    colorize_cmd.add_argument("--temperature", type=float, default=1.0, help="odchylenie próbkowanej zmiennej ukrytej")
    colorize_cmd.add_argument("--features", help="cechy .npy hosta (warunkowanie zewnętrzne)")
    colorize_cmd.set_defaults(handler=cmd_colorize)

    return parser


def main(argv=None):
    """Parsuje argumenty i uruchamia komendę; zwraca kod wyjścia."""
    args = build_parser().parse_args(argv)
    return run_command(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())
