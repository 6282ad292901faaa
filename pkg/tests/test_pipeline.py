#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import copy

import numpy as np
import pytest

import app.utils.pipeline as pipeline
from conftest import tiny_flow_config
from app.utils.colorspace import LabImage, load_png, rgb_to_lab, save_png
from app.utils.errors import CheckpointError, FramingError, InvalidImageError, PayloadTooLarge, UntrainedModel
from app.utils.flow_core import init_model
from app.utils.payload_codec import EccConfig
from app.utils.pipeline import (
    StegoModel,
    StegoSettings,
    colorize,
    hide,
    host_luminance,
    reveal,
    reveal_bits,
    reveal_latent,
)
from app.utils.toy_data import generate_toy_images
from app.utils.training import train_stage2


@pytest.fixture(scope="module")
def hosts():
    return generate_toy_images(6, 16, seed=42)


def test_untrained_model_is_refused(hosts):
    model = StegoModel(init_model(tiny_flow_config()))
    with pytest.raises(UntrainedModel):
        hide(b"hi", hosts[0], model)
    assert hide(b"hi", hosts[0], model, allow_untrained=True).bits_embedded == 512


def test_payload_too_large(stage1_model, hosts):
    with pytest.raises(PayloadTooLarge) as excinfo:
        hide(b"x" * 61, hosts[0], stage1_model)
    assert excinfo.value.capacity_bytes == 60


def test_ideal_channel_reveals_every_payload(stage1_model, hosts, rng):
    for index, host in enumerate(hosts):
        payload = rng.bytes(int(rng.integers(0, 61)))
        result = hide(payload, host, stage1_model, seed=index, channel="ideal")
        assert isinstance(result.container, LabImage)
        assert reveal(result.container, stage1_model) == payload


def test_full_capacity_bits_survive_ideal_channel(stage1_model, hosts):
    result = hide(b"\xa5" * 60, hosts[1], stage1_model, channel="ideal")
    assert result.bits_embedded == 2 * 16 * 16
    np.testing.assert_array_equal(reveal_bits(result.container, stage1_model), result.bits)


def test_container_matches_host_and_keeps_gray(stage1_model):
    model = StegoModel(stage1_model.flow, StegoSettings(verify_attempts=1))
    for index, host in enumerate(generate_toy_images(50, 16, seed=43)):
        result = hide(b"gray", host, model, seed=index)
        assert result.container.shape == host.shape and result.container.dtype == np.uint8
        assert 0.0 <= result.clip_fraction <= 1.0
        restored = rgb_to_lab(result.container).L
        assert np.max(np.abs(restored - host_luminance(host))) < 2 / 255


def test_hiding_is_deterministic(stage1_model, hosts):
    first = hide(b"same", hosts[2], stage1_model, seed=5).container
    np.testing.assert_array_equal(first, hide(b"same", hosts[2], stage1_model, seed=5).container)


def test_empty_payload(stage1_model, hosts):
    result = hide(b"", hosts[3], stage1_model)
    assert result.container.shape == hosts[3].shape
    assert reveal(hide(b"", hosts[3], stage1_model, channel="ideal").container, stage1_model) == b""


def test_gray_hosts_are_accepted(stage1_model, hosts):
    gray = rgb_to_lab(hosts[0]).L
    gray_rgb = np.repeat((gray * 255).astype(np.uint8)[..., None], 3, axis=-1)
    result = hide(b"g", gray_rgb[..., 0], stage1_model, channel="ideal")
    assert reveal(result.container, stage1_model) == b"g"


def test_odd_host_is_rejected(stage1_model):
    with pytest.raises(InvalidImageError):
        hide(b"", np.zeros((15, 16, 3), dtype=np.uint8), stage1_model)


def test_reveal_latent_shape(stage1_model, hosts):
    result = hide(b"z", hosts[0], stage1_model, channel="ideal")
    z = reveal_latent(result.container, stage1_model)
    assert z.shape == (2, 16, 16)
    np.testing.assert_allclose(z, result.latent.values, atol=1e-3)


def test_noise_images_do_not_decode(stage1_model, rng):
    failures = 0
    for _ in range(10):
        noise = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        try:
            reveal(noise, stage1_model)
        except FramingError:
            failures += 1
    assert failures >= 9


def test_ecc_settings_are_used_on_both_sides(stage1_model, hosts):
    model = StegoModel(stage1_model.flow, StegoSettings(ecc=EccConfig(enabled=True, n=15, k=7)))
    result = hide(b"ecc", hosts[4], model, channel="ideal")
    assert reveal(result.container, model) == b"ecc"


def test_checkpoint_carries_settings(stage1_model, tmp_path):
    settings = StegoSettings(alpha=0.2, ecc=EccConfig(enabled=True, n=15, k=7), gamut_mapping="clip",
                             whitening_key=17, verify_attempts=5)
    path = StegoModel(stage1_model.flow, settings).save(tmp_path / "m.pt")
    loaded = StegoModel.load(path)
    assert loaded.settings == settings
    assert loaded.flow.stage == "stage1"

    extra = settings.to_extra()
    extra["colorspace"] = {**extra["colorspace"], "illuminant": "D50"}
    with pytest.raises(CheckpointError):
        StegoSettings.from_extra(extra)


def test_whitening_key_must_match(stage1_model, hosts):
    keyed = StegoModel(stage1_model.flow, StegoSettings(whitening_key=9))
    result = hide(b"key", hosts[1], keyed, channel="ideal")
    assert reveal(result.container, keyed) == b"key"
    with pytest.raises(FramingError):
        reveal(result.container, stage1_model)


def test_empty_payload_latent_is_not_one_sided(stage1_model, hosts):
    result = hide(b"", hosts[0], stage1_model, channel="ideal")
    positive = np.mean(result.latent.values > 0)
    assert 0.35 < positive < 0.65


def test_failed_read_back_resamples_the_latent(stage1_model, hosts, monkeypatch):
    real_reveal_bits = pipeline.reveal_bits
    calls = []

    def flaky(container, model, features=None):
        bits = real_reveal_bits(container, model, features)
        calls.append(container)
        if len(calls) <= 2:
            bits = bits.copy()
            bits[:3] ^= 1
        return bits

    monkeypatch.setattr(pipeline, "reveal_bits", flaky)
    result = hide(b"retry", hosts[2], stage1_model, seed=4, channel="ideal")
    assert result.attempts == 3 and result.bit_errors == 0
    assert not np.allclose(calls[0].c, calls[2].c)
    assert reveal(result.container, stage1_model) == b"retry"


def test_attempt_budget_keeps_best_container(stage1_model, hosts, monkeypatch):
    real_reveal_bits = pipeline.reveal_bits
    flips = iter([5, 1, 3])

    def always_wrong(container, model, features=None):
        bits = real_reveal_bits(container, model, features).copy()
        bits[:next(flips)] ^= 1
        return bits

    monkeypatch.setattr(pipeline, "reveal_bits", always_wrong)
    model = StegoModel(stage1_model.flow, StegoSettings(verify_attempts=3))
    result = hide(b"best", hosts[2], model, channel="ideal")
    assert result.attempts == 3 and result.bit_errors == 1


def test_verified_container_survives_png_file(stage1_model, hosts, tmp_path):
    model = StegoModel(stage1_model.flow, StegoSettings(ecc=EccConfig(enabled=True, n=15, k=7)))
    for index, host in enumerate(hosts):
        result = hide(b"png", host, model, seed=index)
        loaded = load_png(save_png(tmp_path / f"c{index}.png", result.container))
        np.testing.assert_array_equal(loaded, result.container)
        if result.bit_errors == 0:
            assert reveal(loaded, model) == b"png"


def test_colorize_returns_storage_image(stage1_model, hosts):
    image, fraction = colorize(hosts[0], stage1_model, seed=1)
    assert image.shape == hosts[0].shape and image.dtype == np.uint8
    assert 0.0 <= fraction <= 1.0
    np.testing.assert_array_equal(image, colorize(hosts[0], stage1_model, seed=1)[0])


@pytest.mark.slow
def test_round_trained_model_is_lossless_through_storage(toy_scale):
    dataset, model, config = toy_scale
    trained = StegoModel(train_stage2(copy.deepcopy(model.flow), dataset, config), model.settings)
    rng = np.random.default_rng(2024)
    hosts = generate_toy_images(100, 16, seed=555)
    sign_errors = 0
    for index, host in enumerate(hosts):
        payload = rng.bytes(int(rng.integers(0, 61)))
        result = hide(payload, host, trained, seed=index)
        assert result.bit_errors == 0
        z = reveal_latent(result.container, trained)
        wrong = (z >= 0) != (result.latent.values >= 0)
        sign_errors += int(np.count_nonzero(wrong & (np.abs(z) < trained.settings.alpha)))
        assert reveal(result.container, trained) == payload
    assert sign_errors == 0
