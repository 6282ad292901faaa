#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Ukrywanie i odczyt danych: bajty -> kontener PNG -> bajty.

Ukrywanie: host -> L, ramka -> bity wybielone kluczem -> z -> c = f^-1(z; L) -> (L, c) -> RGB -> 8 bitów.
Odczyt: RGB -> (L', c') -> z' = f(c'; L') -> znaki -> bity -> XOR z kluczem -> ramka -> bajty.

Kanał "ideal" pomija konwersję do RGB i zaokrąglenie: kontenerem jest wtedy
zmiennoprzecinkowy LabImage.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from app.utils.colorspace import (
    COLORSPACE_CONSTANTS,
    LabImage,
    fit_chroma_to_gamut,
    gamut_clip_fraction,
    lab_to_rgb,
    quantize_to_storage,
    rgb_to_lab,
)
from app.utils.errors import CheckpointError, InvalidImageError, UntrainedModel
from app.utils.flow_core import SQUEEZE_FACTOR, flow_forward, flow_inverse, load_checkpoint, save_checkpoint
from app.utils.latent_mapping import LatentCode, capacity_bits, decode_latent, encode_bits
from app.utils.logger import setup_logger
from app.utils.payload_codec import EccConfig, frame_payload, unframe_payload, whiten_bits

logger = setup_logger()

CHANNELS = ("storage", "ideal")
LAYOUT = {"bit_order": "channel-major-row-major", "squeeze": SQUEEZE_FACTOR}


@dataclass(frozen=True)
class StegoSettings:
    """Ustawienia, które ukrywanie i odczyt muszą dzielić co do bitu."""

    alpha: float = 0.1
    ecc: EccConfig = field(default_factory=EccConfig)
    gamut_mapping: str = "chroma"
    whitening_key: int = 0
    verify_attempts: int = 64

    @classmethod
    def from_config(cls, config):
        return cls(
            alpha=config.get_float("mapping", "alpha", 0.1),
            ecc=EccConfig.from_config(config),
            gamut_mapping=config.get_value("training", "gamut_mapping", "chroma"),
            whitening_key=config.get_int("mapping", "whitening_key", 0),
            verify_attempts=config.get_int("mapping", "verify_attempts", 64),
        )

    def to_extra(self):
        return {
            "mapping": {"alpha": self.alpha, "whitening_key": self.whitening_key,
                        "verify_attempts": self.verify_attempts},
            "ecc": self.ecc.to_dict(),
            "gamut_mapping": self.gamut_mapping,
            "colorspace": dict(COLORSPACE_CONSTANTS),
            "layout": dict(LAYOUT),
        }

    @classmethod
    def from_extra(cls, extra):
        colorspace = extra.get("colorspace")
        if colorspace is not None and colorspace != COLORSPACE_CONSTANTS:
            raise CheckpointError(f"Punkt kontrolny używa innej konwencji kolorów: {colorspace}")
        layout = extra.get("layout")
        if layout is not None and layout != LAYOUT:
            raise CheckpointError(f"Punkt kontrolny używa innego układu bitów: {layout}")
        mapping = extra.get("mapping", {})
        return cls(
            alpha=float(mapping.get("alpha", 0.1)),
            ecc=EccConfig.from_section(extra.get("ecc")),
            gamut_mapping=str(extra.get("gamut_mapping", "chroma")),
            whitening_key=int(mapping.get("whitening_key", 0)),
            verify_attempts=int(mapping.get("verify_attempts", 64)),
        )


@dataclass
class StegoModel:
    """Model przepływu razem z ustawieniami zapisanymi w punkcie kontrolnym."""

    flow: object
    settings: StegoSettings = field(default_factory=StegoSettings)

    @classmethod
    def load(cls, path):
        flow, extra = load_checkpoint(path)
        return cls(flow=flow, settings=StegoSettings.from_extra(extra))

    def save(self, path):
        return save_checkpoint(path, self.flow, extra=self.settings.to_extra())


@dataclass
class HideResult:
    container: object
    bits_embedded: int
    clip_fraction: float
    latent: LatentCode = None
    bits: np.ndarray = None
    attempts: int = 1
    bit_errors: int = 0


def host_luminance(host):
    """Host RGB (albo szary H x W) -> płaszczyzna L; chrominancja hosta jest odrzucana."""
    arr = np.asarray(host)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    L = rgb_to_lab(arr).L
    if L.shape[0] % SQUEEZE_FACTOR or L.shape[1] % SQUEEZE_FACTOR:
        raise InvalidImageError(f"Wymiary hosta muszą być parzyste, są {L.shape[1]}x{L.shape[0]}")
    return L


def render_container(lab, gamut_mapping="chroma"):
    """LabImage -> (obraz uint8, ułamek pikseli dopasowanych do gamutu)."""
    if gamut_mapping == "chroma":
        lab, fraction = fit_chroma_to_gamut(lab)
    else:
        fraction = gamut_clip_fraction(lab)
    return quantize_to_storage(lab_to_rgb(lab)), fraction


def _features_tensor(features, flow):
    if features is None:
        return None
    return torch.as_tensor(np.asarray(features), dtype=flow.dtype, device=flow.device)


def _require_trained(model, allow_untrained):
    if model.flow.stage == "init" and not allow_untrained:
        raise UntrainedModel("Model nie był trenowany - najpierw uruchom train-stage1")


def hide_bits(bits, L, model, seed=0, channel="storage", features=None):
    """Ukrywa gotowy strumień 2*H*W bitów pod płaszczyzną L."""
    if channel not in CHANNELS:
        raise ValueError(f"Nieznany kanał: {channel}")
    height, width = L.shape
    latent = encode_bits(bits, (2, height, width), model.settings.alpha, seed)
    flow = model.flow
    with torch.no_grad():
        c = flow_inverse(latent.values, L, flow, _features_tensor(features, flow))
    lab = LabImage(L, c.detach().cpu().double().numpy())
    if channel == "ideal":
        container, fraction = lab, gamut_clip_fraction(lab)
    else:
        container, fraction = render_container(lab, model.settings.gamut_mapping)
    return HideResult(container=container, bits_embedded=len(latent.values.ravel()),
                      clip_fraction=fraction, latent=latent, bits=np.asarray(bits, dtype=np.uint8))


def _attempt_seed(seed, attempt):
    if attempt == 0:
        return int(seed)
    return int(np.random.SeedSequence([int(seed), attempt]).generate_state(1)[0])


def hide(payload, host, model, seed=0, channel="storage", features=None, allow_untrained=False):
    """Ukrywa bajty w kolorach szarego hosta.

    Zaramkowane bity są wybielane kluczem z ustawień modelu. Każdy kontener jest od razu
    odczytywany; jeśli choć jeden bit nie wraca, zmienna ukryta jest losowana ponownie
    (najwyżej settings.verify_attempts razy) i zwracany jest najlepszy kontener.

    Args:
        payload (bytes): dane dowolnego typu
        host: obraz RGB (całkowity 0..255 lub float) albo szary H x W
        model (StegoModel): wytrenowany model wraz z ustawieniami
        seed (int): ziarno próbkowania zmiennej ukrytej
        channel (str): "storage" (PNG 8-bit) lub "ideal" (LabImage bez strat)

    Returns:
        HideResult: kontener, liczba osadzonych bitów, ułamek pikseli poza gamutem,
        liczba prób i liczba bitów, które mimo to nie wracają
    """
    _require_trained(model, allow_untrained)
    L = host_luminance(host)
    capacity = capacity_bits(*L.shape)
    framed = frame_payload(payload, capacity, model.settings.ecc)
    bits = whiten_bits(framed.bits, model.settings.whitening_key)

    best = None
    for attempt in range(max(1, model.settings.verify_attempts)):
        result = hide_bits(bits, L, model, seed=_attempt_seed(seed, attempt), channel=channel, features=features)
        result.bit_errors = int(np.count_nonzero(reveal_bits(result.container, model, features) != bits))
        if best is None or result.bit_errors < best.bit_errors:
            best = result
        if best.bit_errors == 0:
            break
    best.attempts = attempt + 1

    if best.bit_errors:
        logger.warning(f"⚠️ Po {best.attempts} próbach {best.bit_errors} bitów kontenera nie wraca poprawnie")
    logger.debug(f"Ukryto {len(payload)} B w obrazie {L.shape[1]}x{L.shape[0]} "
                 f"(próby: {best.attempts}, poza gamutem: {best.clip_fraction:.2%})")
    return best


def reveal_latent(container, model, features=None):
    """Kontener (uint8 RGB albo LabImage) -> z' jako tablica (2, H, W)."""
    lab = container if isinstance(container, LabImage) else rgb_to_lab(container)
    flow = model.flow
    with torch.no_grad():
        z, _ = flow_forward(lab.c, lab.L, flow, _features_tensor(features, flow))
    return z.detach().cpu().double().numpy()


def reveal_bits(container, model, features=None):
    return decode_latent(reveal_latent(container, model, features))


def reveal(container, model, features=None):
    """Odczytuje bajty z kontenera.

    Raises:
        FramingError: zły model/konfiguracja albo obraz bez ukrytych danych
    """
    bits = whiten_bits(reveal_bits(container, model, features), model.settings.whitening_key)
    return unframe_payload(bits, model.settings.ecc)


def colorize(host, model, seed=0, temperature=1.0, features=None):
    """Koloryzacja bez danych: z ~ N(0, temperature^2), c = f^-1(z; L).

    Returns:
        tuple: (obraz uint8, ułamek pikseli poza gamutem)
    """
    L = host_luminance(host)
    rng = np.random.default_rng(seed)
    z = temperature * rng.standard_normal((2,) + L.shape)
    flow = model.flow
    with torch.no_grad():
        c = flow_inverse(z, L, flow, _features_tensor(features, flow))
    return render_container(LabImage(L, c.detach().cpu().double().numpy()), model.settings.gamut_mapping)


def generate_containers(hiding, L, alpha, seed, gamut_mapping="chroma", features=None, quantize=True, bits=None,
                        chunk=64):
    """Wsadowe kontenery z losowymi bitami (bez gradientów) dla treningu i ewaluacji.

    Args:
        hiding: FlowModel sieci ukrywającej (tylko inferencja)
        L: tensor (B, H, W) płaszczyzn szarości
        quantize (bool): True - kanał z zapisem 8-bit, False - kanał idealny
        bits: opcjonalne gotowe bity (B, 2HW); domyślnie losowane z ziarna

    Returns:
        dict: bits (B, 2HW), z (B, 2, H, W), L i c odczytane z kontenerów, clip_fraction
    """
    L_np = L.detach().cpu().double().numpy() if torch.is_tensor(L) else np.asarray(L, dtype=np.float64)
    batch, height, width = L_np.shape
    if bits is None:
        rng = np.random.default_rng(seed)
        bits = rng.integers(0, 2, size=(batch, 2 * height * width), dtype=np.uint8)
    bits = np.asarray(bits, dtype=np.uint8).reshape(batch, 2 * height * width)
    z = np.stack([encode_bits(bits[i], (2, height, width), alpha, seed * 1000003 + i).values for i in range(batch)])

    feats = _features_tensor(features, hiding)
    chunks = []
    with torch.no_grad():
        for start in range(0, batch, chunk):
            end = start + chunk
            part = flow_inverse(z[start:end], L_np[start:end], hiding, None if feats is None else feats[start:end])
            chunks.append(part.detach().cpu().double().numpy())
    c = np.concatenate(chunks)

    L_out, c_out, fractions = [], [], []
    for i in range(batch):
        lab = LabImage(L_np[i], c[i])
        if quantize:
            rgb, fraction = render_container(lab, gamut_mapping)
            lab = rgb_to_lab(rgb)
        else:
            fraction = gamut_clip_fraction(lab)
        L_out.append(lab.L)
        c_out.append(lab.c)
        fractions.append(fraction)

    return {
        "bits": bits,
        "z": torch.as_tensor(z, dtype=torch.float32),
        "L": torch.as_tensor(np.stack(L_out), dtype=torch.float32),
        "c": torch.as_tensor(np.stack(c_out), dtype=torch.float32),
        "clip_fraction": float(np.mean(fractions)),
    }
