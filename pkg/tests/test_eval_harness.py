#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import json

import numpy as np
import pytest

from conftest import quick_train_config
from app.utils.errors import ShapeMismatch
from app.utils.eval_harness import (
    PROXY_NOTE,
    chroma_divergence,
    chroma_histograms,
    ecc_for_comparison,
    evaluate_channel,
    format_rounds_table,
    revealing_accuracy,
    run_capacity_sweep,
    run_rounds_ablation,
    write_report,
)
from app.utils.logger import add_run_sinks, remove_run_sinks
from app.utils.payload_codec import EccConfig


def test_accuracy_of_identical_and_complementary_streams(rng):
    bits = rng.integers(0, 2, size=1000, dtype=np.uint8)
    assert revealing_accuracy(bits, bits) == 100.0
    assert revealing_accuracy(bits, 1 - bits) == 0.0


def test_accuracy_arithmetic(rng):
    bits = rng.integers(0, 2, size=32768, dtype=np.uint8)
    received = bits.copy()
    received[rng.choice(32768, size=3277, replace=False)] ^= 1
    assert revealing_accuracy(bits, received) == pytest.approx(90.0, abs=0.01)


def test_accuracy_requires_equal_lengths():
    with pytest.raises(ShapeMismatch):
        revealing_accuracy(np.zeros(10), np.zeros(11))


def test_histogram_divergence_bounds(rng):
    c = rng.uniform(-0.5, 0.5, size=(20, 2, 8, 8))
    hist = chroma_histograms(c, 16)
    assert hist.shape == (2, 16)
    np.testing.assert_allclose(hist.sum(axis=1), 1.0)
    assert chroma_divergence(hist, hist) == pytest.approx(0.0, abs=1e-12)
    shifted = chroma_histograms(c + 0.4, 16)
    assert 0.0 < chroma_divergence(hist, shifted) <= 1.0


def test_ecc_for_comparison():
    assert ecc_for_comparison(EccConfig(), {"ecc_compare": False}) is None
    assert ecc_for_comparison(EccConfig(), {"ecc_compare": "false"}) is None
    assert ecc_for_comparison(EccConfig(n=15, k=7), {"ecc_compare": True}) == EccConfig(enabled=True, n=15, k=7)
    enabled = EccConfig(enabled=True, n=63, k=36)
    assert ecc_for_comparison(enabled, {"ecc_compare": False}) == enabled


def test_channel_report(stage1_model, toy_dataset):
    report = evaluate_channel(stage1_model, toy_dataset, seed=3, hosts=8, ecc=EccConfig(enabled=True, n=15, k=7))
    assert report.acc_ideal == 100.0
    assert 0.0 <= report.acc_rounded <= 100.0
    assert report.capacity_bpp == 2.0
    assert report.l_preserved and report.grayscale_linf < 2 / 255
    assert report.acc_ideal_corrected == 100.0
    assert report.acc_rounded_corrected is not None
    assert report.hosts == 8 and report.image_size == (16, 16)
    assert 0.0 <= report.sign_margin_fraction <= report.margin_fraction <= 1.0
    assert report.to_dict()["proxy_note"] == PROXY_NOTE


def test_report_files_are_reproducible(stage1_model, toy_dataset, tmp_path):
    paths = []
    for name in ("a", "b"):
        report = evaluate_channel(stage1_model, toy_dataset, seed=1, hosts=4)
        paths.append(write_report(tmp_path / name, report, metadata={"seed": 1}))
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "a" / "report.txt").read_bytes() == (tmp_path / "b" / "report.txt").read_bytes()
    data = json.loads(paths[0].read_text())
    assert data["capacity_bpp"] == 2.0 and data["metadata"] == {"seed": 1}
    assert (tmp_path / "a" / "plots" / "chroma_histograms.png").exists()
    assert "steganalizy" in (tmp_path / "a" / "report.txt").read_text()


def test_capacity_sweep(stage1_model):
    rows = run_capacity_sweep(stage1_model, [16, 32], hosts=2, seed=0)
    assert [row["size"] for row in rows] == [16, 32]
    assert [row["capacity_bits"] for row in rows] == [512, 2048]
    assert all(row["bpp"] == 2.0 for row in rows)
    assert all(row["acc_ideal"] == 100.0 for row in rows)


def test_rounds_ablation_layout(stage1_model, toy_dataset, tmp_path):
    baseline = evaluate_channel(stage1_model, toy_dataset, seed=0, hosts=4)
    add_run_sinks(str(tmp_path / "run"))
    try:
        report, trained = run_rounds_ablation(toy_dataset, stage1_model, quick_train_config(rounds=1), hosts=4,
                                              seed=0, checkpoint_path=tmp_path / "stage2.pt")
    finally:
        remove_run_sinks()
    records = [json.loads(line) for line in (tmp_path / "run" / "progress.jsonl").read_text().splitlines()]
    assert [r["round"] for r in records if r["stage"] == "ablation"] == [0, 1]
    assert [entry["round"] for entry in report.per_round] == [0, 1]
    assert report.per_round[0]["acc_rounded"] == baseline.acc_rounded
    assert report.per_round[0]["acc_ideal"] == baseline.acc_ideal
    assert all(entry["acc_ideal"] == 100.0 for entry in report.per_round)
    assert trained.flow is not stage1_model.flow and stage1_model.flow.stage == "stage1"
    table = format_rounds_table(report).splitlines()
    assert len(table) == 4

    write_report(tmp_path / "ablation", report)
    assert (tmp_path / "ablation" / "plots" / "accuracy_vs_round.png").exists()


@pytest.mark.slow
def test_toy_ablation_improves_rounded_accuracy(toy_scale):
    dataset, model, config = toy_scale
    report, _ = run_rounds_ablation(dataset, model, config, hosts=50, seed=11)
    rounded = [entry["acc_rounded"] for entry in report.per_round]
    assert len(rounded) == config.rounds + 1
    assert rounded[-1] > rounded[0] or rounded[0] == 100.0
    assert all(entry["acc_ideal"] == 100.0 for entry in report.per_round)
