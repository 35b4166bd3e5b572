"""Codec tests: combinatorial ranking, bit streams, command round trips.

Expected values for ranking come from the brute-force colex enumeration
oracle in conftest; binomials are cross-checked against a Pascal-triangle
recurrence.
"""

import math
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from castle.codec import (
    BitStream,
    ChannelConfig,
    DecodeError,
    GameCommand,
    InvalidCommandError,
    Mode,
    Opcode,
    RangeError,
    avg_bits_per_command,
    avg_bits_per_command_floor,
    binom,
    decode_byte_click,
    decode_command,
    decode_location,
    encode_byte_click,
    encode_command,
    encode_location,
    payload_bits,
    rank_selection,
    rate_breakdown,
    unrank_selection,
)
from conftest import FixedRandint, colex_subsets, pascal_row


# -- binomials ---------------------------------------------------------------


def test_binom_base_cases():
    assert binom(5, 2) == 10
    assert binom(7, 0) == 1
    assert binom(3, 5) == 0


def test_binom_negative_rejected():
    with pytest.raises(RangeError):
        binom(-1, 2)
    with pytest.raises(RangeError):
        binom(3, -2)


def test_binom_matches_pascal_triangle():
    for n in (0, 1, 2, 7, 23, 64):
        row = pascal_row(n)
        for r in range(n + 1):
            assert binom(n, r) == row[r]


def test_binom_paper_scale_is_exact():
    # C(1600, 200) exceeds 800 bits; verify against the Pascal oracle
    value = binom(1600, 200)
    assert value.bit_length() > 800
    assert value == pascal_row(1600)[200]


# -- rank/unrank -------------------------------------------------------------


def test_rank_examples_against_oracle():
    order = colex_subsets(5, 2)
    assert rank_selection([1, 0], 5) == order.index((0, 1)) == 0
    assert rank_selection([4, 3], 5) == order.index((3, 4)) == 9
    assert rank_selection([3, 2], 5) == order.index((2, 3)) == 5


def test_rank_accepts_any_order_and_rejects_bad_ids():
    assert rank_selection([0, 1], 5) == rank_selection([1, 0], 5)
    with pytest.raises(InvalidCommandError):
        rank_selection([2, 2], 5)
    with pytest.raises(InvalidCommandError):
        rank_selection([5, 0], 5)


def test_unrank_examples():
    assert unrank_selection(0, 5, 2) == [1, 0]
    assert unrank_selection(9, 5, 2) == [4, 3]


def test_unrank_range_error():
    with pytest.raises(RangeError):
        unrank_selection(10, 5, 2)
    with pytest.raises(RangeError):
        unrank_selection(-1, 5, 2)


def test_rank_unrank_exhaustive_small_n():
    for n in range(1, 10):
        for r in range(0, n + 1):
            subsets = colex_subsets(n, r)
            for z, expect in enumerate(subsets):
                ids = unrank_selection(z, n, r)
                assert tuple(sorted(ids)) == expect
                assert ids == sorted(ids, reverse=True)
                assert rank_selection(ids, n) == z


def test_rank_unrank_random_large_n():
    # bijection spot-check across sizes well past 64-bit coefficients
    rng = Random("bijection")
    for _ in range(100_000):
        n = rng.randint(13, 120)
        r = rng.randint(1, n)
        z = rng.randrange(binom(n, r))
        assert rank_selection(unrank_selection(z, n, r), n) == z
    for _ in range(200):
        z = rng.randrange(binom(1600, 200))
        ids = unrank_selection(z, 1600, 200)
        assert len(ids) == 200 and ids[0] < 1600
        assert rank_selection(ids, 1600) == z


def test_unrank_output_is_descending_and_in_range():
    rng = Random("shape")
    for _ in range(500):
        n = rng.randint(2, 60)
        r = rng.randint(1, n)
        ids = unrank_selection(rng.randrange(binom(n, r)), n, r)
        assert all(0 <= i < n for i in ids)
        assert all(a > b for a, b in zip(ids, ids[1:]))


# -- locations ---------------------------------------------------------------


@pytest.fixture
def wide_cfg():
    return ChannelConfig(n=10, k=2, x_max=256, y_max=256)


def test_location_examples(wide_cfg):
    assert encode_location(0, wide_cfg) == (0, 0)
    assert encode_location(300, wide_cfg) == (44, 1)
    assert decode_location((0, 0), wide_cfg) == 0
    assert decode_location((44, 1), wide_cfg) == 300
    corner = (wide_cfg.x_max - 1, wide_cfg.y_max - 1)
    assert decode_location(corner, wide_cfg) == wide_cfg.m - 1


def test_location_roundtrip_exhaustive(wide_cfg):
    for z2 in range(wide_cfg.m):
        assert decode_location(encode_location(z2, wide_cfg), wide_cfg) == z2


def test_location_errors(wide_cfg):
    with pytest.raises(RangeError):
        encode_location(wide_cfg.m, wide_cfg)
    with pytest.raises(InvalidCommandError):
        decode_location((256, 0), wide_cfg)
    with pytest.raises(InvalidCommandError):
        decode_location((0, -1), wide_cfg)


# -- command encode/decode ---------------------------------------------------


def test_encode_command_worked_example():
    # w1 = floor(log2 C(5,2)) = 3 bits; 100b = 4 -> the rank-4 2-subset
    cfg = ChannelConfig(n=5, k=2, x_max=256, y_max=256)
    stream = BitStream(bytes([0b10000000, 0, 0]))
    cmd = encode_command(stream, cfg, FixedRandint(2))
    expected = colex_subsets(5, 2)[4]
    assert tuple(sorted(cmd.selected)) == expected
    assert cmd.selected == (3, 1)
    assert cmd.target == (0, 0)


def test_encode_command_roundtrips_leftover_bits():
    # with stream 1001..., w1=3 consumes 100 and the fourth bit feeds z2
    cfg = ChannelConfig(n=5, k=2, x_max=256, y_max=256)
    stream = BitStream(bytes([0b10010000, 0, 0]))
    cmd = encode_command(stream, cfg, FixedRandint(2))
    assert cmd.selected == (3, 1)
    (z1, w1), (z2, w2) = decode_command(cmd, cfg)
    assert (z1, w1) == (4, 3)
    assert (z2, w2) == (1 << 15, 16)


def test_encode_command_all_zero_stream():
    cfg = ChannelConfig(n=9, k=3, x_max=16, y_max=16)
    stream = BitStream(bytes(8))
    cmd = encode_command(stream, cfg, FixedRandint(3))
    assert list(cmd.selected) == unrank_selection(0, 9, 3)
    assert cmd.target == (0, 0)


def test_decode_command_fixed_widths():
    cfg = ChannelConfig(n=5, k=2, x_max=256, y_max=256)
    cmd = GameCommand(Opcode.MOVE, (1, 0), (0, 0))
    assert decode_command(cmd, cfg) == ((0, 3), (0, 16))


def test_decode_command_rejects_foreign_high_rank():
    # C(5,2)=10: ranks 8..9 need 4 bits, so the encoder can't emit them
    cfg = ChannelConfig(n=5, k=2, x_max=4, y_max=4)
    cmd = GameCommand(Opcode.MOVE, (4, 3), (0, 0))
    with pytest.raises(DecodeError):
        decode_command(cmd, cfg)


def test_decode_command_input_validation():
    cfg = ChannelConfig(n=5, k=2, x_max=4, y_max=4)
    with pytest.raises(InvalidCommandError):
        decode_command(GameCommand(Opcode.MOVE, (0, 1, 2), (0, 0)), cfg)
    with pytest.raises(InvalidCommandError):
        decode_command(GameCommand(Opcode.MOVE, (1, 0), None), cfg)
    with pytest.raises(InvalidCommandError):
        decode_command(GameCommand(Opcode.MOVE, (1, 0), (9, 0)), cfg)


def test_command_roundtrip_many_random_streams():
    cfg = ChannelConfig(n=24, k=6, x_max=32, y_max=32)
    rng = Random("roundtrip")
    for _ in range(10_000):
        data = rng.randbytes(rng.randint(1, 12))
        stream = BitStream(data)
        consumed = []
        cmds = []
        while stream.remaining > 0:
            before = stream.cursor
            cmd = encode_command(stream, cfg, rng)
            cmds.append(cmd)
            consumed.append((before, payload_bits(cmd, cfg)))
        out = BitStream()
        for cmd in cmds:
            for value, width in decode_command(cmd, cfg):
                out.write(value, width)
        total_bits = sum(w for _, w in consumed)
        assert out.bit_length == total_bits
        # reproduce the zero-padded source exactly
        padded = BitStream(data)
        expect = BitStream()
        for _, width in consumed:
            expect.write(padded.read(width), width)
        assert out.to_bytes() == expect.to_bytes()


def test_full_stream_roundtrip_one_mebibyte():
    # whole-file identity after stripping declared-length padding
    cfg = ChannelConfig(n=256, k=32, x_max=256, y_max=256)
    rng = Random("file")
    payload = rng.randbytes(1 << 20)
    stream = BitStream(payload)
    out = BitStream()
    while stream.remaining > 0:
        cmd = encode_command(stream, cfg, rng)
        for value, width in decode_command(cmd, cfg):
            out.write(value, width)
    assert out.to_bytes()[: len(payload)] == payload


def test_floor_width_loss_bound():
    # per-command payload never exceeds the ideal width and loses < 1+log2(e)
    bound = 1 + math.log2(math.e)
    rng = Random("loss-bound")
    for _ in range(300):
        n = rng.randint(2, 400)
        k = rng.randint(1, n)
        cfg = ChannelConfig(n=n, k=k, x_max=64, y_max=64)
        r = rng.randint(1, k)
        ideal = math.log2(binom(n, r)) + math.log2(cfg.m)
        actual = cfg.selection_bits(r) + cfg.location_bits
        assert actual <= ideal
        assert ideal - actual < bound


# -- byte click --------------------------------------------------------------


@pytest.fixture
def byte_cfg():
    return ChannelConfig(n=256, k=1, x_max=16, y_max=16, mode=Mode.BYTE_CLICK)


def test_byte_click_examples(byte_cfg):
    assert encode_byte_click(0, byte_cfg).selected == (0,)
    assert encode_byte_click(255, byte_cfg).selected == (255,)
    assert encode_byte_click(7, byte_cfg).target is None


def test_byte_click_roundtrip_all_values(byte_cfg):
    for b in range(256):
        assert decode_byte_click(encode_byte_click(b, byte_cfg), byte_cfg) == b


def test_byte_click_errors(byte_cfg):
    with pytest.raises(RangeError):
        encode_byte_click(256, byte_cfg)
    with pytest.raises(InvalidCommandError):
        decode_byte_click(GameCommand(Opcode.MOVE, (1, 0), None), byte_cfg)
    with pytest.raises(ValueError):
        ChannelConfig(n=255, k=1, x_max=16, y_max=16, mode=Mode.BYTE_CLICK)


def test_byte_click_through_encode_command(byte_cfg):
    stream = BitStream(b"\xa5\x3c")
    rng = Random(0)
    first = encode_command(stream, byte_cfg, rng)
    second = encode_command(stream, byte_cfg, rng)
    assert first.selected == (0xA5,)
    assert second.selected == (0x3C,)
    assert decode_command(first, byte_cfg)[0] == (0xA5, 8)


# -- rate formula ------------------------------------------------------------


def _log2_binom_stirling(n: int, r: int) -> float:
    return (math.lgamma(n + 1) - math.lgamma(r + 1)
            - math.lgamma(n - r + 1)) / math.log(2)


def test_avg_bits_tiny_example():
    cfg = ChannelConfig(n=5, k=1, x_max=2, y_max=1)
    assert avg_bits_per_command(cfg) == pytest.approx(math.log2(5) + 1)


def test_rate_breakdown_cross_checked_against_lgamma():
    cfg = ChannelConfig(n=300, k=40, x_max=64, y_max=64)
    rb = rate_breakdown(cfg)
    expect = sum(_log2_binom_stirling(300, i) for i in range(1, 41)) / 40
    assert rb.selection_bits == pytest.approx(expect, rel=1e-9)
    assert rb.location_bits == pytest.approx(12.0)
    assert rb.selection_bits_floor <= rb.selection_bits
    assert rb.selection_bits - rb.selection_bits_floor < 1.0


def test_rate_formula_at_0ad_scale():
    # selection term alone is ~63.5 B; with the 16 location bits ~65.5 B
    cfg = ChannelConfig(n=1600, k=200, x_max=256, y_max=256)
    rb = rate_breakdown(cfg)
    assert rb.selection_bytes == pytest.approx(63.496, abs=0.01)
    assert rb.total_bytes == pytest.approx(65.496, abs=0.01)


def test_rate_formula_large_k_unbounded():
    cfg = ChannelConfig(n=435, k=435, x_max=256, y_max=256)
    rb = rate_breakdown(cfg)
    assert 37.0 <= rb.selection_bytes <= 40.0


def test_avg_bits_rejects_byte_mode(byte_cfg):
    with pytest.raises(InvalidCommandError):
        avg_bits_per_command(byte_cfg)
    assert avg_bits_per_command_floor(byte_cfg) == 8


# -- bit stream --------------------------------------------------------------


def test_bitstream_read_zero_pads_short_tail():
    s = BitStream(b"\xff")
    assert s.read(4) == 0xF
    assert s.read(8) == 0xF0  # 4 real bits then 4 pad zeros
    assert s.remaining == 0
    assert s.cursor == 8
    assert s.read(16) == 0


def test_bitstream_write_then_read_back():
    s = BitStream()
    s.write(0b101, 3)
    s.write(0xBEEF, 16)
    s.write(0, 5)
    # 101 ++ 1011111011101111 ++ 00000 packed MSB-first
    assert s.to_bytes() == bytes([0b10110111, 0b11011101, 0b11100000])
    assert s.read(3) == 0b101
    assert s.read(16) == 0xBEEF


def test_bitstream_write_rejects_oversized_values():
    s = BitStream()
    with pytest.raises(RangeError):
        s.write(4, 2)
    with pytest.raises(RangeError):
        s.write(-1, 4)


@given(st.lists(st.tuples(st.integers(min_value=0, max_value=2 ** 40 - 1),
                          st.integers(min_value=0, max_value=40)),
                max_size=60))
@settings(max_examples=200)
def test_bitstream_roundtrip_property(fields):
    s = BitStream()
    expected = []
    for value, width in fields:
        value &= (1 << width) - 1 if width else 0
        s.write(value, width)
        expected.append((value, width))
    for value, width in expected:
        assert s.read(width) == value
    assert s.cursor <= s.bit_length


@given(st.binary(max_size=40), st.integers(min_value=1, max_value=64))
@settings(max_examples=200)
def test_bitstream_reads_bounded_by_width(data, width):
    s = BitStream(data)
    while True:
        value = s.read(width)
        assert 0 <= value < (1 << width)
        if s.remaining <= 0:
            break
    assert s.cursor <= 8 * len(data)
