#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Trening dwuetapowy.

Etap 1: maksymalizacja wiarygodności - z = f(c; L) ma przypominać N(0, 1).
Etap 2: trening rundowy - w każdej rundzie zamrożona sieć ukrywająca H generuje
kontenery zapisane do 8 bitów (bez gradientów), sieć odczytująca R uczy się na
nich funkcją NLL + ||z - z'||_2, a na koniec rundy wagi R są kopiowane do H.
"""

import copy
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import ReduceLROnPlateau
from torch.utils.data import DataLoader

from app.utils.errors import ConfigError, ShapeMismatch, TrainingDivergence
from app.utils.flow_core import flow_forward, save_checkpoint
from app.utils.latent_mapping import decode_latent
from app.utils.logger import setup_logger
from app.utils.pipeline import generate_containers

logger = setup_logger()

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lr_decay_factor: float = 5.0
    plateau_window: int = 200
    plateau_patience: int = 3
    plateau_threshold: float = 1e-3
    batch_size: int = 48
    epochs: int = 20
    rounds: int = 5
    iters_per_round: int = 4000
    recon_weight: float = 1.0
    dequant_noise: float = 1.0 / 255.0
    gamut_mapping: str = "chroma"
    alpha: float = 0.1
    seed: int = 0

    @classmethod
    def from_config(cls, config):
        """Buduje konfigurację treningu z ConfigLoader (sekcje training, mapping, general)."""
        section = config.section("training")
        known = {name: section[name] for name in cls.__dataclass_fields__ if name in section}
        known["alpha"] = config.get_float("mapping", "alpha", 0.1)
        known["seed"] = config.get_int("general", "seed", 0)
        return cls(**known).validate()

    def validate(self):
        if self.rounds < 0 or self.iters_per_round < 0 or self.epochs < 0:
            raise ConfigError("Liczby rund, iteracji i epok nie mogą być ujemne", key="training.rounds")
        if self.lr <= 0 or self.lr_decay_factor <= 1.0 or self.batch_size < 1:
            raise ConfigError("Współczynniki treningu muszą być dodatnie", key="training.lr")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class LossValue:
    total: torch.Tensor
    nll_part: torch.Tensor
    recon_part: torch.Tensor

    def as_floats(self):
        return {
            "loss": float(self.total.detach()),
            "nll": float(self.nll_part.detach()),
            "recon": float(self.recon_part.detach()),
        }


def _batched(z, logdet):
    logdet = torch.as_tensor(logdet, dtype=z.dtype, device=z.device)
    if logdet.dim() == 0:
        return z.unsqueeze(0), logdet.unsqueeze(0)
    return z, logdet


def _check_finite(value, what):
    if not torch.isfinite(value).all():
        raise TrainingDivergence(f"Nieskończona wartość: {what}")


def nll_loss(z, logdet):
    """Ujemna log-wiarygodność na wymiar: [0.5 ||z||^2 + D/2 log 2pi - logdet] / D, średnio po wsadzie."""
    z, logdet = _batched(z, logdet)
    _check_finite(z, "z w funkcji NLL")
    dims = z[0].numel()
    per_sample = (0.5 * z.flatten(1).pow(2).sum(dim=1) + 0.5 * dims * LOG_2PI - logdet) / dims
    nll = per_sample.mean()
    _check_finite(nll, "funkcja NLL")
    return LossValue(total=nll, nll_part=nll, recon_part=torch.zeros_like(nll))


def stage2_loss(z, z_prime, logdet_prime, weight=1.0):
    """NLL(z', logdet') + weight * ||z - z'||_2 (norma całego tensora próbki, średnio po wsadzie)."""
    z = torch.as_tensor(z, dtype=z_prime.dtype, device=z_prime.device)
    if z.shape != z_prime.shape:
        raise ShapeMismatch(f"z {tuple(z.shape)} i z' {tuple(z_prime.shape)} mają różne kształty")
    nll = nll_loss(z_prime, logdet_prime).nll_part
    z_b, _ = _batched(z, logdet_prime)
    zp_b, _ = _batched(z_prime, logdet_prime)
    recon = weight * torch.linalg.vector_norm((z_b - zp_b).flatten(1), dim=1).mean()
    return LossValue(total=nll + recon, nll_part=nll, recon_part=recon)


class PlateauScheduler:
    """Dzieli lr przez lr_decay_factor, gdy średnia z okna nie poprawia się przez kilka okien."""

    def __init__(self, optimizer, config):
        self.optimizer = optimizer
        self.window = max(1, config.plateau_window)
        self.scheduler = ReduceLROnPlateau(
            optimizer,
            mode="min",
            factor=1.0 / config.lr_decay_factor,
            patience=max(0, config.plateau_patience - 1),
            threshold=config.plateau_threshold,
            threshold_mode="rel",
        )
        self._losses = []

    @property
    def lr(self):
        return self.optimizer.param_groups[0]["lr"]

    def step(self, loss):
        """Zwraca True, jeśli po tym kroku lr zostało zmniejszone."""
        self._losses.append(float(loss))
        if len(self._losses) < self.window:
            return False
        before = self.lr
        self.scheduler.step(float(np.mean(self._losses)))
        self._losses.clear()
        if self.lr < before:
            logger.info(f"🔄 Plateau funkcji straty: lr {before:.2e} -> {self.lr:.2e}")
            return True
        return False


def emit_progress(**record):
    """Rekord postępu (jeden obiekt JSON w linii progress.jsonl)."""
    logger.bind(progress=True).info(json.dumps(record, sort_keys=True))


def _make_optimizer(model, config):
    params = [p for p in model.parameters() if p.requires_grad]
    return Adam(params, lr=config.lr, betas=(config.beta1, config.beta2))


def _split_batch(batch):
    if len(batch) == 3:
        return batch
    return batch[0], batch[1], None


def train_stage1(dataset, config, model, checkpoint_path=None, checkpoint_extra=None):
    """Etap 1: trening NLL na zbiorze Lab; punkt kontrolny po każdej epoce.

    Raises:
        TrainingDivergence: trening przerwany, ostatni dobry punkt kontrolny zostaje na dysku
    """
    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    loader = DataLoader(dataset, batch_size=min(config.batch_size, len(dataset)), shuffle=True, generator=generator)
    optimizer = _make_optimizer(model, config)
    scheduler = PlateauScheduler(optimizer, config)

    iteration = 0
    logger.info(f"🔄 Etap 1: {len(dataset)} obrazów, {config.epochs} epok, wsad {loader.batch_size}")
    for epoch in range(1, config.epochs + 1):
        model.train()
        epoch_losses = []
        try:
            for batch in loader:
                L, c, features = _split_batch(batch)
                if config.dequant_noise > 0:
                    noise = torch.rand(c.shape, generator=generator, dtype=c.dtype) - 0.5
                    c = c + config.dequant_noise * noise
                z, logdet = flow_forward(c, L, model, features)
                loss = nll_loss(z, logdet)
                optimizer.zero_grad()
                loss.total.backward()
                optimizer.step()
                iteration += 1
                scheduler.step(loss.total.item())
                epoch_losses.append(loss.total.item())
                emit_progress(stage=1, epoch=epoch, iteration=iteration, round=0, lr=scheduler.lr, **loss.as_floats())
        except TrainingDivergence as e:
            logger.error(f"❌ Trening etapu 1 rozbiegł się w epoce {epoch}: {e}. "
                         f"Ostatni dobry punkt kontrolny: {checkpoint_path}")
            raise

        model.stage = "stage1"
        mean_nll = float(np.mean(epoch_losses))
        logger.info(f"✅ Epoka {epoch}/{config.epochs}: średnie NLL {mean_nll:.4f}, lr {scheduler.lr:.2e}")
        emit_progress(stage=1, epoch=epoch, iteration=iteration, round=0, lr=scheduler.lr, epoch_nll=mean_nll)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model, extra=checkpoint_extra)

    model.stage = "stage1"
    model.eval()
    return model


def freeze(model):
    for param in model.parameters():
        param.requires_grad_(False)
    model.eval()
    return model


def container_accuracy(model, containers, features=None, chunk=64):
    """Procent bitów odczytanych poprawnie przez model z gotowych kontenerów."""
    correct = 0
    with torch.no_grad():
        for start in range(0, len(containers["bits"]), chunk):
            end = start + chunk
            feats = None if features is None else features[start:end]
            z_rev, _ = flow_forward(containers["c"][start:end], containers["L"][start:end], model, feats)
            correct += int((decode_latent(z_rev) == containers["bits"][start:end]).sum())
    return 100.0 * correct / containers["bits"].size


def train_stage2(model, dataset, config, checkpoint_path=None, checkpoint_extra=None, on_round_end=None):
    """Etap 2: trening rundowy sieci odczytującej na zaokrąglonych kontenerach.

    Args:
        model: model po etapie 1; staje się siecią odczytującą R
        on_round_end: opcjonalne wywołanie (numer_rundy, model) po skopiowaniu wag R -> H

    Returns:
        FlowModel: model o wagach wspólnych dla H i R
    """
    if config.rounds == 0:
        logger.info("Etap 2: rounds = 0, model bez zmian")
        return model

    hiding = freeze(copy.deepcopy(model))
    revealing = model
    for param in revealing.parameters():
        param.requires_grad_(True)
    generator = torch.Generator().manual_seed(config.seed)
    batch_size = min(config.batch_size, len(dataset))
    iteration = 0

    for round_index in range(1, config.rounds + 1):
        # (a) kontenery z zamrożonej sieci H, zapisane do 8 bitów, bez gradientów
        containers = generate_containers(
            hiding, dataset.L, config.alpha, seed=config.seed + round_index,
            gamut_mapping=config.gamut_mapping, features=dataset.features,
        )
        before = container_accuracy(revealing, containers, dataset.features)
        logger.info(f"🔄 Runda {round_index}/{config.rounds}: dokładność przed treningiem {before:.2f}%, "
                    f"poza gamutem {containers['clip_fraction']:.2%}")

        # (b) trening R; lr startuje od początku w każdej rundzie
        revealing.train()
        optimizer = _make_optimizer(revealing, config)
        scheduler = PlateauScheduler(optimizer, config)
        try:
            for _ in range(config.iters_per_round):
                idx = torch.randint(0, len(dataset), (batch_size,), generator=generator)
                features = None if dataset.features is None else dataset.features[idx]
                z_rev, logdet = flow_forward(containers["c"][idx], containers["L"][idx], revealing, features)
                loss = stage2_loss(containers["z"][idx], z_rev, logdet, config.recon_weight)
                optimizer.zero_grad()
                loss.total.backward()
                optimizer.step()
                iteration += 1
                scheduler.step(loss.total.item())
                emit_progress(stage=2, round=round_index, iteration=iteration, lr=scheduler.lr, **loss.as_floats())
        except TrainingDivergence as e:
            logger.error(f"❌ Trening rundowy rozbiegł się w rundzie {round_index}: {e}. "
                         f"Ostatni dobry punkt kontrolny: {checkpoint_path}")
            raise

        # (c) kopiowanie wag R -> H
        hiding.load_state_dict(revealing.state_dict())
        revealing.stage = hiding.stage = "stage2"
        revealing.eval()
        after = container_accuracy(revealing, containers, dataset.features)
        logger.info(f"✅ Runda {round_index}: dokładność na kontenerach rundy {after:.2f}%")
        emit_progress(stage=2, round=round_index, iteration=iteration, lr=scheduler.lr, bit_accuracy=after)

        if checkpoint_path is not None:
            checkpoint_path = Path(checkpoint_path)
            save_checkpoint(checkpoint_path.with_name(f"{checkpoint_path.stem}_round{round_index}.pt"),
                            revealing, extra=checkpoint_extra)
            save_checkpoint(checkpoint_path, revealing, extra=checkpoint_extra)
        if on_round_end is not None:
            on_round_end(round_index, revealing)

    revealing.eval()
    return revealing
