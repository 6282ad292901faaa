#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import copy
import json
import math

import numpy as np
import pytest
import torch
from scipy import stats

import app.utils.training as training
from conftest import quick_train_config, tiny_flow_config
from app.utils.config_loader import ConfigLoader
from app.utils.dataset import LabDataset
from app.utils.errors import ConfigError, ShapeMismatch, TrainingDivergence
from app.utils.flow_core import flow_forward, init_model, load_checkpoint
from app.utils.logger import add_run_sinks, remove_run_sinks
from app.utils.training import (
    PlateauScheduler,
    TrainConfig,
    container_accuracy,
    nll_loss,
    stage2_loss,
    train_stage1,
    train_stage2,
)
from app.utils.pipeline import generate_containers


def dataset_nll(model, dataset):
    with torch.no_grad():
        return nll_loss(*flow_forward(dataset.c, dataset.L, model)).total.item()


def test_nll_at_mode():
    z = torch.zeros(2, 4, 4)
    assert nll_loss(z, torch.tensor(0.0)).total.item() == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-6)


def test_nll_at_unit_variance():
    z = torch.ones(1, 2, 4, 4)
    value = nll_loss(z, torch.zeros(1)).total.item()
    assert value == pytest.approx(0.5 * (1 + math.log(2 * math.pi)), abs=1e-6)


def test_nll_matches_direct_density(rng):
    z = rng.standard_normal((3, 2, 4, 4))
    logdet = rng.normal(size=3)
    direct = np.mean([-(stats.norm.logpdf(z[i]).sum() + logdet[i]) / z[i].size for i in range(3)])
    value = nll_loss(torch.as_tensor(z), torch.as_tensor(logdet)).total.item()
    assert value == pytest.approx(direct, abs=1e-6)


def test_nll_rejects_non_finite():
    with pytest.raises(TrainingDivergence):
        nll_loss(torch.tensor([[float("nan"), 0.0]]), torch.zeros(1))


def test_stage2_loss_with_exact_reconstruction(rng):
    z = torch.as_tensor(rng.standard_normal((2, 2, 4, 4)))
    logdet = torch.tensor([0.3, -0.2], dtype=torch.float64)
    loss = stage2_loss(z, z.clone(), logdet)
    assert loss.recon_part.item() == 0.0
    assert loss.total.item() == pytest.approx(nll_loss(z, logdet).total.item())


def test_stage2_recon_is_euclidean_norm():
    z = torch.zeros(1, 2, 2, 2)
    z_prime = torch.zeros(1, 2, 2, 2)
    z_prime[0, 1, 0, 1] = 1.0
    loss = stage2_loss(z, z_prime, torch.zeros(1), weight=2.5)
    assert loss.recon_part.item() == pytest.approx(2.5)
    assert loss.total.item() == pytest.approx(loss.nll_part.item() + loss.recon_part.item())
    assert stage2_loss(z, z_prime, torch.zeros(1), weight=0.0).total.item() == pytest.approx(
        nll_loss(z_prime, torch.zeros(1)).total.item())


def test_stage2_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        stage2_loss(torch.zeros(1, 2, 2, 2), torch.zeros(1, 2, 4, 4), torch.zeros(1))


def test_train_config_from_configuration():
    config = TrainConfig.from_config(ConfigLoader(use_file=False, overrides={"training.rounds": "2"}))
    assert config.rounds == 2
    assert config.batch_size == 48 and config.iters_per_round == 4000
    assert config.lr_decay_factor == 5.0
    with pytest.raises(ConfigError):
        TrainConfig(rounds=-1).validate()


def test_plateau_divides_learning_rate():
    param = torch.nn.Parameter(torch.zeros(1))
    optimizer = torch.optim.Adam([param], lr=1e-3)
    scheduler = PlateauScheduler(optimizer, TrainConfig(plateau_window=2, plateau_patience=3))
    reduced = [scheduler.step(1.0) for _ in range(6)]
    assert not any(reduced) and scheduler.lr == pytest.approx(1e-3)
    reduced = [scheduler.step(1.0) for _ in range(2)]
    assert reduced[-1] and scheduler.lr == pytest.approx(2e-4)


def test_plateau_keeps_rate_while_improving():
    param = torch.nn.Parameter(torch.zeros(1))
    optimizer = torch.optim.Adam([param], lr=1e-3)
    scheduler = PlateauScheduler(optimizer, TrainConfig(plateau_window=2, plateau_patience=3))
    for value in np.linspace(10.0, 1.0, 40):
        scheduler.step(value)
    assert scheduler.lr == pytest.approx(1e-3)


def test_stage1_lowers_nll_and_writes_checkpoints(toy_dataset, tmp_path):
    model = init_model(tiny_flow_config())
    before = dataset_nll(model, toy_dataset)
    checkpoint = tmp_path / "stage1.pt"
    train_stage1(toy_dataset, quick_train_config(epochs=3), model, checkpoint_path=checkpoint)
    assert model.stage == "stage1"
    assert dataset_nll(model, toy_dataset) < before
    loaded, _ = load_checkpoint(checkpoint)
    assert loaded.stage == "stage1"


def test_stage1_is_reproducible(toy_dataset):
    first = train_stage1(toy_dataset, quick_train_config(), init_model(tiny_flow_config()))
    second = train_stage1(toy_dataset, quick_train_config(), init_model(tiny_flow_config()))
    for a, b in zip(first.state_dict().values(), second.state_dict().values()):
        assert torch.equal(a, b)


def test_progress_records_are_json_lines(toy_dataset, tmp_path):
    add_run_sinks(str(tmp_path))
    try:
        train_stage1(toy_dataset, quick_train_config(epochs=1), init_model(tiny_flow_config()))
    finally:
        remove_run_sinks()
    records = [json.loads(line) for line in (tmp_path / "progress.jsonl").read_text().splitlines()]
    assert records
    assert {"iteration", "round", "loss", "nll", "recon", "lr"} <= set(records[0])


def test_divergence_keeps_last_checkpoint(toy_dataset, tmp_path):
    model = init_model(tiny_flow_config())
    checkpoint = tmp_path / "stage1.pt"
    train_stage1(toy_dataset, quick_train_config(epochs=1), model, checkpoint_path=checkpoint)
    saved = checkpoint.read_bytes()

    broken = LabDataset(toy_dataset.L, torch.full_like(toy_dataset.c, float("nan")))
    with pytest.raises(TrainingDivergence):
        train_stage1(broken, quick_train_config(epochs=1), model, checkpoint_path=checkpoint)
    assert checkpoint.read_bytes() == saved


def test_stage2_divergence_keeps_last_round_checkpoint(stage1_model, toy_dataset, monkeypatch, tmp_path):
    real_loss = training.stage2_loss
    calls = []

    def exploding_in_round_two(z, z_prime, logdet, weight=1.0):
        calls.append(1)
        if len(calls) > 5:
            z_prime = z_prime * float("nan")
        return real_loss(z, z_prime, logdet, weight)

    monkeypatch.setattr(training, "stage2_loss", exploding_in_round_two)
    checkpoint = tmp_path / "stage2.pt"
    with pytest.raises(TrainingDivergence):
        train_stage2(copy.deepcopy(stage1_model.flow), toy_dataset, quick_train_config(rounds=2, iters_per_round=5),
                     checkpoint_path=checkpoint)
    assert not (tmp_path / "stage2_round2.pt").exists()
    last_round, _ = load_checkpoint(tmp_path / "stage2_round1.pt")
    latest, _ = load_checkpoint(checkpoint)
    assert last_round.stage == latest.stage == "stage2"
    for name, tensor in last_round.state_dict().items():
        assert torch.isfinite(tensor).all(), name
        assert torch.equal(tensor, latest.state_dict()[name])


def test_zero_rounds_leave_model_unchanged(stage1_model, toy_dataset):
    before = copy.deepcopy(stage1_model.flow.state_dict())
    result = train_stage2(stage1_model.flow, toy_dataset, quick_train_config(rounds=0))
    assert result is stage1_model.flow
    for name, tensor in result.state_dict().items():
        assert torch.equal(tensor, before[name])


def test_round_structure_freezes_and_copies(stage1_model, toy_dataset, monkeypatch, tmp_path):
    seen = []

    def recording(hiding, *args, **kwargs):
        assert all(not p.requires_grad for p in hiding.parameters())
        seen.append({name: t.clone() for name, t in hiding.state_dict().items()})
        return generate_containers(hiding, *args, **kwargs)

    after_round = []
    monkeypatch.setattr(training, "generate_containers", recording)
    start = copy.deepcopy(stage1_model.flow)
    result = train_stage2(copy.deepcopy(stage1_model.flow), toy_dataset, quick_train_config(rounds=2),
                          checkpoint_path=tmp_path / "stage2.pt",
                          on_round_end=lambda r, m: after_round.append(copy.deepcopy(m.state_dict())))

    assert len(seen) == 2 and len(after_round) == 2
    for name, tensor in start.state_dict().items():
        assert torch.equal(seen[0][name], tensor)
        # w rundzie 2 sieć ukrywająca ma dokładnie wagi R po rundzie 1
        assert torch.equal(seen[1][name], after_round[0][name])
    assert result.stage == "stage2"
    assert (tmp_path / "stage2_round1.pt").exists() and (tmp_path / "stage2_round2.pt").exists()
    assert load_checkpoint(tmp_path / "stage2.pt")[0].stage == "stage2"


@pytest.mark.slow
def test_toy_stage1_beats_identity_and_samples_stay_in_gamut(toy_scale):
    from app.utils.pipeline import colorize
    from app.utils.toy_data import generate_toy_images

    dataset, model, _ = toy_scale
    identity = init_model(model.flow.config)
    assert dataset_nll(model.flow, dataset) < dataset_nll(identity, dataset)
    fractions = [colorize(image, model, seed=i)[1] for i, image in enumerate(generate_toy_images(20, 16, seed=99))]
    assert np.mean(fractions) < 0.05


@pytest.mark.slow
def test_toy_round_training_reaches_exact_revealing(toy_scale):
    dataset, model, config = toy_scale
    flow = copy.deepcopy(model.flow)
    ideal = generate_containers(flow, dataset.L, config.alpha, seed=123, quantize=False)
    rounded = generate_containers(flow, dataset.L, config.alpha, seed=123)
    accuracies = [container_accuracy(flow, rounded)]
    ideal_accuracies = [container_accuracy(flow, ideal)]

    def measure(_, current):
        ideal_now = generate_containers(current, dataset.L, config.alpha, seed=123, quantize=False)
        rounded_now = generate_containers(current, dataset.L, config.alpha, seed=123)
        accuracies.append(container_accuracy(current, rounded_now))
        ideal_accuracies.append(container_accuracy(current, ideal_now))

    train_stage2(flow, dataset, config, on_round_end=measure)
    assert all(acc >= accuracies[0] for acc in accuracies[1:])
    assert all(b >= a - 1.0 for a, b in zip(accuracies, accuracies[1:]))
    assert accuracies[-1] >= 99.0
    assert all(acc == 100.0 for acc in ideal_accuracies)
