#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Warunkowa sieć odwracalna: stos warunkowych afinicznych warstw sprzęgających
c (2 x H x W) <-> z (2 x H x W), sterowany cechami wyliczonymi z płaszczyzny L.

Przed przepływem chrominancja jest "ściskana" (space-to-depth, 2 -> 8 kanałów
na siatce H/2 x W/2), żeby podział kanałów na połowy miał sens; na wyjściu
operacja jest odwracana. Każda warstwa dzieli 8 kanałów według własnej losowej
permutacji, transformuje jedną połowę i wraca do pierwotnej kolejności kanałów,
dzięki czemu model z wyzerowanymi ostatnimi warstwami podsieci jest tożsamością.
"""

import os
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from app.utils.errors import CheckpointError, ConfigError, ShapeMismatch, TrainingDivergence
from app.utils.logger import setup_logger

logger = setup_logger()

CHECKPOINT_VERSION = 1
LATENT_CHANNELS = 2
SQUEEZE_FACTOR = 2
STAGES = ("init", "stage1", "stage2")


@dataclass
class FlowConfig:
    layers: int = 30
    hidden_channels: int = 64
    cond_channels: int = 16
    clamp: float = 2.0
    condition: str = "conv"
    external_channels: int = 0
    height: int = 128
    width: int = 128
    seed: int = 0

    @classmethod
    def from_section(cls, section, size=None, seed=0):
        section = section or {}
        size = int(size) if size is not None else 128
        return cls(
            layers=int(section.get("layers", 30)),
            hidden_channels=int(section.get("hidden_channels", 64)),
            cond_channels=int(section.get("cond_channels", 16)),
            clamp=float(section.get("clamp", 2.0)),
            condition=str(section.get("condition", "conv")),
            external_channels=int(section.get("external_channels", 0)),
            height=size,
            width=size,
            seed=int(seed),
        )

    def validate(self):
        if self.layers < 1:
            raise ConfigError(f"Liczba warstw sprzęgających musi być >= 1, jest {self.layers}", key="model.layers")
        if self.hidden_channels < 1 or self.cond_channels < 1:
            raise ConfigError("Szerokości podsieci muszą być dodatnie", key="model.hidden_channels")
        if self.clamp <= 0:
            raise ConfigError(f"model.clamp musi być dodatni, jest {self.clamp}", key="model.clamp")
        if self.condition not in ("conv", "external"):
            raise ConfigError(f"Nieznany typ sieci warunkującej: {self.condition}", key="model.condition")
        if self.condition == "external" and self.external_channels < 1:
            raise ConfigError("Warunkowanie zewnętrzne wymaga model.external_channels >= 1",
                              key="model.external_channels")
        if self.height % SQUEEZE_FACTOR or self.width % SQUEEZE_FACTOR:
            raise ConfigError(f"Wymiary obrazu muszą być parzyste: {self.height}x{self.width}", key="data.size")
        return self

    def to_dict(self):
        return asdict(self)


def squeeze(x):
    """(B, C, H, W) -> (B, 4C, H/2, W/2)."""
    b, c, h, w = x.shape
    x = x.reshape(b, c, h // 2, 2, w // 2, 2)
    x = x.permute(0, 1, 3, 5, 2, 4)
    return x.reshape(b, 4 * c, h // 2, w // 2)


def unsqueeze(x):
    """(B, 4C, H/2, W/2) -> (B, C, H, W)."""
    b, c, h, w = x.shape
    x = x.reshape(b, c // 4, 2, 2, h, w)
    x = x.permute(0, 1, 4, 2, 5, 3)
    return x.reshape(b, c // 4, 2 * h, 2 * w)


class ConvConditionNet(nn.Module):
    """Trenowalny koder płaszczyzny L; wyjście ma rozdzielczość warstw sprzęgających."""

    def __init__(self, cond_channels, hidden_channels):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(1, hidden_channels, 3, padding=1, padding_mode="replicate"),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden_channels, hidden_channels, 3, stride=2, padding=1, padding_mode="replicate"),
            nn.LeakyReLU(0.2),
            nn.Conv2d(hidden_channels, cond_channels, 3, padding=1, padding_mode="replicate"),
        )

    def forward(self, L, features=None):
        return self.net(L - 0.5)


class ExternalConditionNet(nn.Module):
    """Adapter 1x1 dla cech dostarczonych z zewnątrz (np. wyliczonych wcześniej siecią VGG)."""

    def __init__(self, external_channels, cond_channels):
        super().__init__()
        self.in_channels = external_channels
        self.adapter = nn.Conv2d(external_channels, cond_channels, 1)

    def forward(self, L, features=None):
        if features is None:
            raise ShapeMismatch("Model z warunkowaniem zewnętrznym wymaga przekazania cech")
        target = (L.shape[-2] // SQUEEZE_FACTOR, L.shape[-1] // SQUEEZE_FACTOR)
        features = features.to(L.dtype)
        if features.dim() == 3:
            features = features.unsqueeze(0)
        if features.dim() != 4 or features.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"Oczekiwano cech o {self.in_channels} kanałach, otrzymano tensor {tuple(features.shape)}"
            )
        if features.shape[0] == 1 and L.shape[0] > 1:
            features = features.expand(L.shape[0], -1, -1, -1)
        if tuple(features.shape[-2:]) != target:
            features = F.interpolate(features, size=target, mode="bilinear", align_corners=False)
        return self.adapter(features)


def _subnet(in_channels, hidden_channels, out_channels):
    net = nn.Sequential(
        nn.Conv2d(in_channels, hidden_channels, 3, padding=1),
        nn.LeakyReLU(0.2),
        nn.Conv2d(hidden_channels, hidden_channels, 1),
        nn.LeakyReLU(0.2),
        nn.Conv2d(hidden_channels, out_channels, 3, padding=1),
    )
    # ostatnia warstwa zerowa: na starcie s = t = 0, warstwa jest tożsamością
    nn.init.zeros_(net[-1].weight)
    nn.init.zeros_(net[-1].bias)
    return net


class ConditionalAffineCoupling(nn.Module):
    """y2 = x2 * exp(s(x1, cond)) + t(x1, cond), y1 = x1, w kolejności kanałów z permutacji."""

    def __init__(self, channels, cond_channels, hidden_channels, clamp, permutation):
        super().__init__()
        self.clamp = clamp
        self.split = channels // 2
        perm = torch.as_tensor(permutation, dtype=torch.long)
        self.register_buffer("perm", perm, persistent=False)
        self.register_buffer("inv_perm", torch.argsort(perm), persistent=False)
        self.s_net = _subnet(self.split + cond_channels, hidden_channels, channels - self.split)
        self.t_net = _subnet(self.split + cond_channels, hidden_channels, channels - self.split)

    def _halves(self, x):
        x = x[:, self.perm]
        return x[:, :self.split], x[:, self.split:]

    def _merge(self, x1, x2):
        return torch.cat([x1, x2], dim=1)[:, self.inv_perm]

    def scale_and_shift(self, x1, cond):
        h = torch.cat([x1, cond], dim=1)
        # miękkie ograniczenie skali do (-clamp, clamp)
        s = self.clamp * torch.tanh(self.s_net(h) / self.clamp)
        return s, self.t_net(h)

    def forward(self, x, cond):
        x1, x2 = self._halves(x)
        s, t = self.scale_and_shift(x1, cond)
        y = self._merge(x1, x2 * torch.exp(s) + t)
        return y, s.flatten(1).sum(dim=1)

    def inverse(self, y, cond):
        y1, y2 = self._halves(y)
        s, t = self.scale_and_shift(y1, cond)
        return self._merge(y1, (y2 - t) * torch.exp(-s))


def layer_permutations(layers, channels, seed):
    """Losowe podziały kanałów; co druga warstwa zamienia połowy poprzedniej."""
    rng = np.random.default_rng(seed)
    half = channels // 2
    perms = []
    for index in range(layers):
        if index % 2 == 0:
            perm = rng.permutation(channels)
        else:
            prev = perms[-1]
            perm = np.concatenate([prev[half:], prev[:half]])
        perms.append(perm)
    return perms


class FlowModel(nn.Module):
    """Parametry K warstw sprzęgających, sieci warunkującej i konfiguracja."""

    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        self.stage = "init"
        channels = LATENT_CHANNELS * SQUEEZE_FACTOR ** 2
        if config.condition == "external":
            self.condition_net = ExternalConditionNet(config.external_channels, config.cond_channels)
        else:
            self.condition_net = ConvConditionNet(config.cond_channels, config.hidden_channels)
        self.layers = nn.ModuleList(
            ConditionalAffineCoupling(channels, config.cond_channels, config.hidden_channels, config.clamp, perm)
            for perm in layer_permutations(config.layers, channels, config.seed)
        )

    @property
    def dtype(self):
        return next(self.parameters()).dtype

    @property
    def device(self):
        return next(self.parameters()).device


def init_model(config, seed=None):
    """Nowy model: każda warstwa startuje jako tożsamość, permutacje ustalone ziarnem."""
    if seed is not None:
        config = FlowConfig(**{**config.to_dict(), "seed": int(seed)})
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed)
        model = FlowModel(config)
    logger.debug(f"Zainicjalizowano model: {config.layers} warstw, ziarno {config.seed}")
    return model


def _as_tensor(x, model):
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x))
    return x.to(device=model.device, dtype=model.dtype)


def _batch_inputs(x, L, model):
    """Ujednolica wejścia do postaci (B, 2, H, W) i (B, 1, H, W)."""
    x = _as_tensor(x, model)
    L = _as_tensor(L, model)
    squeeze_batch = x.dim() == 3
    if squeeze_batch:
        x = x.unsqueeze(0)
    if L.dim() == 2:
        L = L.unsqueeze(0)
    if L.dim() == 3:
        L = L.unsqueeze(1)
    if x.dim() != 4 or x.shape[1] != LATENT_CHANNELS:
        raise ShapeMismatch(f"Oczekiwano tensora (B, 2, H, W), otrzymano {tuple(x.shape)}")
    if L.shape[0] == 1 and x.shape[0] > 1:
        L = L.expand(x.shape[0], -1, -1, -1)
    if L.shape[0] != x.shape[0] or L.shape[-2:] != x.shape[-2:]:
        raise ShapeMismatch(f"Płaszczyzna L {tuple(L.shape)} nie pasuje do chrominancji {tuple(x.shape)}")
    if x.shape[-2] % SQUEEZE_FACTOR or x.shape[-1] % SQUEEZE_FACTOR:
        raise ShapeMismatch(f"Wymiary obrazu muszą być parzyste, są {tuple(x.shape[-2:])}")
    return x, L, squeeze_batch


def condition_features(L, model, features=None):
    """Cechy płaszczyzny L podawane do każdej warstwy sprzęgającej: (B, cond_channels, H/2, W/2)."""
    L = _as_tensor(L, model)
    if L.dim() == 2:
        L = L.unsqueeze(0)
    if L.dim() == 3:
        L = L.unsqueeze(1)
    if L.dim() != 4 or L.shape[1] != 1:
        raise ShapeMismatch(f"Oczekiwano płaszczyzny L (H, W) lub (B, H, W), otrzymano {tuple(L.shape)}")
    if L.shape[-2] % SQUEEZE_FACTOR or L.shape[-1] % SQUEEZE_FACTOR:
        raise ShapeMismatch(f"Wymiary płaszczyzny L muszą być parzyste, są {tuple(L.shape[-2:])}")
    if features is not None:
        features = _as_tensor(features, model)
    return model.condition_net(L, features)


def coupling_forward(x, cond, layer):
    """Jedna warstwa w przód: (y, wkład do log-det)."""
    y, logdet = layer(x, cond)
    if not torch.isfinite(y).all():
        raise TrainingDivergence("Nieskończone aktywacje w warstwie sprzęgającej")
    return y, logdet


def coupling_inverse(y, cond, layer):
    return layer.inverse(y, cond)


def flow_forward(c, L, model, features=None):
    """z = f(c; L) wraz z log|det dz/dc| dla każdego elementu wsadu."""
    c, L, unbatched = _batch_inputs(c, L, model)
    cond = condition_features(L, model, features)
    x = squeeze(c)
    logdet = torch.zeros(x.shape[0], dtype=x.dtype, device=x.device)
    for layer in model.layers:
        x, contribution = coupling_forward(x, cond, layer)
        logdet = logdet + contribution
    z = unsqueeze(x)
    if unbatched:
        return z[0], logdet[0]
    return z, logdet


def flow_inverse(z, L, model, features=None):
    """c = f^-1(z; L): odwracanie warstw w odwrotnej kolejności."""
    z, L, unbatched = _batch_inputs(z, L, model)
    cond = condition_features(L, model, features)
    x = squeeze(z)
    for layer in reversed(model.layers):
        x = coupling_inverse(x, cond, layer)
    if not torch.isfinite(x).all():
        raise TrainingDivergence("Odwrócenie przepływu dało wartości nieskończone (eksplodujące skale)")
    c = unsqueeze(x)
    return c[0] if unbatched else c


def save_checkpoint(path, model, extra=None):
    """Zapisuje samoopisujący się punkt kontrolny (konfiguracja + tensory float32).

    Zapis jest atomowy: najpierw plik tymczasowy, potem podmiana.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "byte_order": "little",
        "dtype": "float32",
        "stage": model.stage,
        "config": model.config.to_dict(),
        "extra": dict(extra or {}),
        "state_dict": {
            name: tensor.detach().to(device="cpu", dtype=torch.float32).contiguous()
            for name, tensor in model.state_dict().items()
        },
    }
    tmp_path = path.with_name(path.name + ".tmp")
    torch.save(payload, tmp_path)
    os.replace(tmp_path, path)
    logger.debug(f"Zapisano punkt kontrolny {path} (etap {model.stage})")
    return path


def load_checkpoint(path):
    """Wczytuje punkt kontrolny.

    Returns:
        tuple: (FlowModel w trybie eval, słownik extra)
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Punkt kontrolny nie istnieje: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Nie można odczytać punktu kontrolnego {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"Plik {path} nie jest punktem kontrolnym chromahide")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Niezgodna wersja punktu kontrolnego: {payload['format_version']} (obsługiwana: {CHECKPOINT_VERSION})"
        )
    try:
        model = FlowModel(FlowConfig(**payload["config"]))
        model.load_state_dict(payload["state_dict"])
    except (TypeError, RuntimeError, ConfigError) as e:
        raise CheckpointError(f"Punkt kontrolny {path} nie pasuje do architektury: {e}") from e
    model.stage = payload.get("stage", "init")
    if model.stage not in STAGES:
        raise CheckpointError(f"Nieznany etap treningu w punkcie kontrolnym {path}: {model.stage!r}")
    model.eval()
    return model, payload.get("extra", {})
