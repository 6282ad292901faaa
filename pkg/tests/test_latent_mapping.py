#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from scipy import stats

from app.utils.errors import ShapeMismatch
from app.utils.latent_mapping import LatentCode, capacity_bits, decode_latent, encode_bits, gap_truncated_cdf

SHAPE = (2, 8, 8)


def random_bits(rng, size):
    return rng.integers(0, 2, size=size, dtype=np.uint8)


def test_signs_respect_gap(rng):
    bits = random_bits(rng, 128)
    values = encode_bits(bits, SHAPE, alpha=0.1, seed=3).values.ravel()
    assert np.all(values[bits == 0] < -0.1)
    assert np.all(values[bits == 1] > 0.1)


def test_zero_alpha_gives_half_normal_magnitudes(rng):
    bits = random_bits(rng, 100_000)
    values = encode_bits(bits, (100_000,), alpha=0.0, seed=5).values
    mean_abs = np.abs(values).mean()
    sigma = np.sqrt((1 - 2 / np.pi) / len(values))
    assert abs(mean_abs - np.sqrt(2 / np.pi)) < 3 * sigma


def test_decode_sign_rule():
    assert decode_latent(np.array([-0.53, 0.88, -0.02])).tolist() == [0, 1, 0]
    assert decode_latent(np.array([0.0, -0.0])).tolist() == [1, 1]


def test_decode_accepts_tensors_and_batches():
    z = torch.tensor([[[[-1.0, 2.0]], [[3.0, -4.0]]]])
    assert decode_latent(z).tolist() == [[0, 1, 1, 0]]
    code = LatentCode(values=np.array([[[0.5]], [[-0.5]]]))
    assert decode_latent(code).tolist() == [1, 0]


def test_round_trip_on_many_bits(rng):
    bits = random_bits(rng, 100_000)
    code = encode_bits(bits, (2, 250, 200), seed=11)
    np.testing.assert_array_equal(decode_latent(code), bits)


@given(st.integers(0, 2**32 - 1), st.floats(-0.0999, 0.0999))
def test_perturbation_below_alpha_keeps_bits(seed, shift):
    rng = np.random.default_rng(seed)
    bits = random_bits(rng, 128)
    values = encode_bits(bits, SHAPE, alpha=0.1, seed=seed).values
    noise = rng.uniform(-0.0999, 0.0999, size=values.shape)
    np.testing.assert_array_equal(decode_latent(values + noise), bits)
    np.testing.assert_array_equal(decode_latent(values + shift), bits)


def test_encoded_values_follow_gap_truncated_normal(rng):
    bits = random_bits(rng, 100_000)
    values = encode_bits(bits, (100_000,), alpha=0.1, seed=2).values
    result = stats.kstest(values, lambda x: gap_truncated_cdf(x, 0.1))
    assert result.pvalue > 0.01


def test_encoding_is_deterministic(rng):
    bits = random_bits(rng, 128)
    first = encode_bits(bits, SHAPE, seed=9).values
    np.testing.assert_array_equal(first, encode_bits(bits, SHAPE, seed=9).values)
    assert not np.array_equal(first, encode_bits(bits, SHAPE, seed=10).values)


def test_bit_count_must_match_latent(rng):
    with pytest.raises(ShapeMismatch):
        encode_bits(random_bits(rng, 127), SHAPE)


def test_alpha_range_is_checked(rng):
    with pytest.raises(ValueError):
        encode_bits(random_bits(rng, 128), SHAPE, alpha=1.0)


@pytest.mark.parametrize("height,width,expected", [(128, 128, 32768), (1, 1, 2), (64, 128, 16384), (16, 16, 512), (3, 5, 30)])
def test_capacity(height, width, expected):
    assert capacity_bits(height, width) == expected
    assert capacity_bits(height, width) / (height * width) == 2.0
