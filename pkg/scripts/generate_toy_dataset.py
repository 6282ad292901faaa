#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import argparse
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.utils.logger import setup_logger  # noqa: E402
from app.utils.toy_data import write_toy_dataset  # noqa: E402

logger = setup_logger()


def generate_toy_dataset():
    """Generuje proceduralny zbiór kolorowych obrazów PNG do eksperymentów w małej skali."""
    parser = argparse.ArgumentParser(description="Generator zbioru obrazów testowych")
    parser.add_argument("--out", default=os.path.join("data", "toy"), help="katalog wyjściowy")
    parser.add_argument("--count", type=int, default=200, help="liczba obrazów")
    parser.add_argument("--size", type=int, default=16, help="rozmiar boku obrazu w pikselach")
    parser.add_argument("--seed", type=int, default=0, help="ziarno generatora")
    args = parser.parse_args()

    paths = write_toy_dataset(args.out, args.count, args.size, seed=args.seed)
    logger.info(f"✅ Zapisano {len(paths)} obrazów {args.size}x{args.size} w {args.out}")


if __name__ == "__main__":
    generate_toy_dataset()
