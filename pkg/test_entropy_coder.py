# test_entropy_coder.py
import math

import numpy as np
import pytest
import torch

from coding.arithmetic import BinaryArithmeticDecoder, BinaryArithmeticEncoder
from coding.symbols import (ChannelCumulativeModel, GaussianModel, SymbolRange, TabulatedModel, bit_probability,
                            decode_symbol, derive_range, derive_ranges, encode_symbol, pmf_table, symbol_bits)
from density.nonparametric import NonParametricDensity
from utils import config
from utils.errors import ConfigurationError, CorruptStreamError


def encode_bits(bits, probabilities):
    encoder = BinaryArithmeticEncoder()
    for bit, p1 in zip(bits, probabilities):
        encoder.encode_bit(int(bit), int(p1))
    return encoder.finish()


def decode_bits(data, probabilities):
    decoder = BinaryArithmeticDecoder(data)
    return [decoder.decode_bit(int(p1)) for p1 in probabilities]


def information(bits, probabilities):
    p_one = np.asarray(probabilities, dtype=np.float64) / 65536
    bits = np.asarray(bits)
    return float(-np.sum(np.where(bits == 1, np.log2(p_one), np.log2(1 - p_one))))


def code_symbols(model, values):
    encoder = BinaryArithmeticEncoder()
    model.encode(encoder, values)
    data = encoder.finish()
    decoded = model.decode(BinaryArithmeticDecoder(data))
    return data, decoded


# ---------------------------------------------------------------------------
# binary arithmetic coder
# ---------------------------------------------------------------------------

def test_random_bits_round_trip(rng):
    probabilities = rng.integers(1, 65536, size=100_000)
    bits = (rng.random(100_000) < probabilities / 65536).astype(int)
    data = encode_bits(bits, probabilities)
    assert decode_bits(data, probabilities) == bits.tolist()


def test_extreme_probabilities_round_trip(rng):
    probabilities = rng.choice([1, 2, 65534, 65535, 32768], size=5000)
    bits = rng.integers(0, 2, size=5000)  # frequently the improbable outcome
    data = encode_bits(bits, probabilities)
    assert decode_bits(data, probabilities) == bits.tolist()


def test_near_certain_stream_is_tiny():
    data = encode_bits([0] * 1000, [1] * 1000)
    assert len(data) <= 4


def test_fair_bits_are_incompressible(rng):
    bits = rng.integers(0, 2, size=1000)
    data = encode_bits(bits, [32768] * 1000)
    assert len(data) <= 1000 // 8 + 4
    assert decode_bits(data, [32768] * 1000) == bits.tolist()


def test_skewed_bits_reach_their_information_content(rng):
    p1 = round(0.1 * 65536)
    bits = (rng.random(1000) < 0.1).astype(int)
    data = encode_bits(bits, [p1] * 1000)
    assert abs(8 * len(data) - information(bits, [p1] * 1000)) <= 64


def test_output_is_deterministic(rng):
    probabilities = rng.integers(1, 65536, size=2000)
    bits = rng.integers(0, 2, size=2000)
    assert encode_bits(bits, probabilities) == encode_bits(bits, probabilities)


def test_probability_mismatch_changes_decoded_bits(rng):
    probabilities = np.full(1000, 32768)
    bits = rng.integers(0, 2, size=1000)
    data = encode_bits(bits, probabilities)
    skewed = probabilities.copy()
    skewed[3] = 60000
    assert decode_bits(data, skewed) != bits.tolist()


@pytest.mark.parametrize("p1", [0, 65536, -3, 1.5])
def test_invalid_probability_is_rejected(p1):
    with pytest.raises(ValueError):
        BinaryArithmeticEncoder().encode_bit(1, p1)
    with pytest.raises(ValueError):
        BinaryArithmeticDecoder(b"\x00").decode_bit(p1)


def test_numpy_integer_probability_is_accepted():
    encoder = BinaryArithmeticEncoder()
    encoder.encode_bit(1, np.int64(40000))
    assert decode_bits(encoder.finish(), [40000]) == [1]


def test_encoder_cannot_be_reused_after_finish():
    encoder = BinaryArithmeticEncoder()
    encoder.encode_bit(0, 100)
    first = encoder.finish()
    assert encoder.finish() == first
    with pytest.raises(RuntimeError):
        encoder.encode_bit(0, 100)


def test_empty_stream_decodes_zero_symbols():
    decoder = BinaryArithmeticDecoder(b"")
    assert decode_symbol(decoder, np.array([1.0]), SymbolRange(0, 0)) == 0
    assert decoder.bits_consumed == 0


def test_exhausted_stream_raises(rng):
    bits = rng.integers(0, 2, size=16)
    data = encode_bits(bits, [32768] * 16)
    decoder = BinaryArithmeticDecoder(data)
    assert [decoder.decode_bit(32768) for _ in range(16)] == bits.tolist()
    with pytest.raises(CorruptStreamError):
        for _ in range(200):
            decoder.decode_bit(32768)


def test_empty_stream_raises_on_first_decision():
    decoder = BinaryArithmeticDecoder(b"")
    with pytest.raises(CorruptStreamError):
        decoder.decode_bit(32768)


# ---------------------------------------------------------------------------
# symbol ranges and probabilities
# ---------------------------------------------------------------------------

def test_unit_gaussian_range():
    symbol_range = derive_range(GaussianModel(1.0))
    assert (symbol_range.lo, symbol_range.hi) == (-7, 8)
    assert symbol_range.n_bits == 4
    assert symbol_range.lo <= -6 and symbol_range.hi >= 6


def test_wide_gaussian_needs_many_bits():
    assert derive_range(GaussianModel(100.0)).n_bits >= 10


def test_collapsed_gaussian_emits_no_bits():
    model = TabulatedModel.from_model(GaussianModel(config.SIGMA_MIN))
    assert (model.ranges[0].lo, model.ranges[0].hi) == (0, 0)
    assert model.ranges[0].n_bits == 0
    encoder = BinaryArithmeticEncoder()
    model.encode(encoder, np.array([0]))
    assert encoder.bits_written == 0
    assert model.information_bits(np.array([0])) == pytest.approx(0.0, abs=1e-6)


@pytest.mark.parametrize("sigma", [0.05, 0.4, 1.0, 3.0, 17.0, 250.0])
def test_ranges_leave_little_mass_outside(sigma):
    model = GaussianModel(sigma)
    symbol_range = derive_range(model)
    outside = model.lower_tail(np.array([[symbol_range.lo - 0.5]]))[0, 0] + \
        model.upper_tail(np.array([[symbol_range.hi + 0.5]]))[0, 0]
    assert outside < config.TAIL_MASS
    assert symbol_range.count & (symbol_range.count - 1) == 0


def test_ranges_follow_the_channel_median():
    density = NonParametricDensity(channels=2, filters=(3, 3, 3), init_scale=2.0)
    density.biases[-1].assign(torch.tensor([[[4.0]], [[-4.0]]]))
    model = ChannelCumulativeModel(density)
    ranges = derive_ranges(model)
    for center, symbol_range in zip(model.center, ranges):
        assert center in symbol_range
    assert model.center[0] != model.center[1]


def test_derive_range_wants_one_distribution():
    with pytest.raises(ConfigurationError):
        derive_range(GaussianModel([1.0, 2.0]))


def test_overly_wide_model_is_rejected(monkeypatch):
    monkeypatch.setattr(config, "MAX_RANGE_BITS", 4)
    with pytest.raises(ConfigurationError):
        derive_range(GaussianModel(1000.0))


def test_gaussian_model_rejects_bad_scales():
    with pytest.raises(ConfigurationError):
        GaussianModel([1.0, 0.0])


def test_pmf_table_rows_are_normalized_and_padded():
    model = GaussianModel([0.2, 1.0, 6.0])
    ranges = derive_ranges(model)
    table = pmf_table(model, ranges)
    assert table.shape == (3, max(r.count for r in ranges))
    np.testing.assert_allclose(table.sum(axis=1), 1.0, atol=config.TAIL_MASS)
    assert (table[0, ranges[0].count:] == 0).all()
    assert table[1, 0 - ranges[1].lo] == pytest.approx(0.382925, abs=1e-6)


def test_pmf_table_needs_one_range_per_distribution():
    with pytest.raises(ConfigurationError):
        pmf_table(GaussianModel([1.0, 2.0]), [SymbolRange(-1, 1)])


def test_bit_probability_edge_cases():
    assert bit_probability(np.zeros(4), 0, 2) == 32768
    assert bit_probability(np.array([0.0, 0.0, 0.3, 0.7]), 0, 2) == 65535
    assert bit_probability(np.array([0.5, 0.5, 0.0, 0.0]), 0, 2) == 1
    assert bit_probability(np.array([0.25, 0.25, 0.25, 0.25]), 0, 2) == 32768
    assert bit_probability(np.array([0.1, 0.3, 0.2, 0.4]), 2, 1) == round(65536 * 0.4 / 0.6)


def test_symbol_bits_are_offset_binary_msb_first():
    symbol_range = SymbolRange(-7, 8)
    assert symbol_bits(5, symbol_range) == [1, 1, 0, 0]
    assert symbol_bits(-7, symbol_range) == [0, 0, 0, 0]
    assert symbol_bits(8, symbol_range) == [1, 1, 1, 1]
    assert symbol_bits(0, SymbolRange(0, 0)) == []


def test_symbol_range_validation_and_clamp():
    with pytest.raises(ValueError):
        SymbolRange(3, 2)
    symbol_range = SymbolRange(-2, 1)
    assert symbol_range.clamp(-9) == -2
    assert symbol_range.clamp(5) == 1
    assert symbol_range.n_bits == 2


def test_out_of_range_symbol_is_rejected():
    symbol_range = SymbolRange(-2, 1)
    with pytest.raises(ValueError):
        encode_symbol(BinaryArithmeticEncoder(), 2, np.full(4, 0.25), symbol_range)


# ---------------------------------------------------------------------------
# symbol round trips and rate
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("sigma", [0.05, 0.7, 2.0, 30.0])
def test_every_symbol_in_range_round_trips(sigma):
    model = GaussianModel(sigma)
    symbol_range = derive_range(model)
    pmf = pmf_table(model, [symbol_range])[0]
    values = list(range(symbol_range.lo, symbol_range.hi + 1))
    encoder = BinaryArithmeticEncoder()
    for value in values:
        encode_symbol(encoder, value, pmf, symbol_range)
    decoder = BinaryArithmeticDecoder(encoder.finish())
    assert [decode_symbol(decoder, pmf, symbol_range) for _ in values] == values


def test_random_scale_field_round_trips(rng):
    scales = np.exp(rng.uniform(np.log(0.05), np.log(50.0), size=500))
    model = TabulatedModel.from_model(GaussianModel(scales))
    values = model.clamp(rng.standard_normal(500) * scales)
    _, decoded = code_symbols(model, values)
    np.testing.assert_array_equal(decoded, values)


def test_random_nonparametric_models_round_trip(rng):
    density = NonParametricDensity(channels=4, filters=(3, 3, 3), init_scale=3.0)
    generator = torch.Generator().manual_seed(11)
    with torch.no_grad():
        for param in density.parameters():
            param.add_(0.3 * torch.randn(param.shape, generator=generator))
    per_channel = TabulatedModel.from_model(ChannelCumulativeModel(density))
    channels = rng.integers(0, 4, size=400)
    model = per_channel.take(channels)
    values = model.clamp(rng.normal(0, 6, size=400))
    _, decoded = code_symbols(model, values)
    np.testing.assert_array_equal(decoded, values)


def test_take_shares_rows_instead_of_copying(rng):
    density = NonParametricDensity(channels=3, filters=(3, 3, 3), init_scale=3.0)
    per_channel = TabulatedModel.from_model(ChannelCumulativeModel(density))
    channels = rng.integers(0, 3, size=5000)
    model = per_channel.take(channels)
    assert len(model) == 5000
    assert model.table is per_channel.table and len(model.ranges) == 3
    subset = model.take(np.array([4, 0, 4]))
    np.testing.assert_array_equal(subset.element_rows(), channels[[4, 0, 4]])
    values = model.clamp(rng.normal(0, 4, size=5000))
    expected = sum(per_channel.take([c]).information_bits([v]) for c, v in zip(channels[:50], values[:50]))
    assert model.take(np.arange(50)).information_bits(values[:50]) == pytest.approx(expected)


def test_clamp_rounds_and_limits():
    model = TabulatedModel([SymbolRange(-2, 1), SymbolRange(0, 3)], np.full((2, 4), 0.25))
    np.testing.assert_array_equal(model.clamp(np.array([-7.2, 2.6])), np.array([-2, 3]))


def _optimality(rng, count, chunk=1000):
    encoder = BinaryArithmeticEncoder()
    models, values, total_information = [], [], 0.0
    for start in range(0, count, chunk):
        scales = np.exp(rng.uniform(np.log(0.05), np.log(50.0), size=min(chunk, count - start)))
        model = TabulatedModel.from_model(GaussianModel(scales))
        chunk_values = model.clamp(np.rint(rng.standard_normal(scales.size) * scales))
        model.encode(encoder, chunk_values)
        total_information += model.information_bits(chunk_values)
        models.append(model)
        values.append(chunk_values)
    data = encoder.finish()

    decoder = BinaryArithmeticDecoder(data)
    for model, chunk_values in zip(models, values):
        np.testing.assert_array_equal(model.decode(decoder), chunk_values)
    return len(data), total_information


def test_stream_length_tracks_information_content(rng):
    size, bits = _optimality(rng, 1000)
    assert size * 8 <= 1.01 * bits + 512


@pytest.mark.slow
def test_stream_length_tracks_information_content_at_scale(rng):
    size, bits = _optimality(rng, 10_000)
    assert size * 8 <= 1.01 * bits + 512


def test_gaussian_noisy_samples_cost_their_cross_entropy(rng):
    sigma = 2.0
    model = TabulatedModel.from_model(GaussianModel(sigma))
    samples = np.array([model.ranges[0].clamp(v) for v in np.rint(rng.normal(0, sigma, size=10_000))])
    tiled = model.take(np.zeros(samples.size))
    data, decoded = code_symbols(tiled, samples)
    np.testing.assert_array_equal(decoded, samples)
    bits = tiled.information_bits(samples)
    assert len(data) <= 1.01 * bits / 8 + 32
    assert bits == pytest.approx(-np.log2(tiled.table[0, samples - model.ranges[0].lo]).sum())
    assert math.isfinite(bits)
