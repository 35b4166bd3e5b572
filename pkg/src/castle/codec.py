"""Combinatorial codec between covert byte streams and game commands.

A command carries two payload fields: a subset of the map's selectable
objects (the selection) and one target coordinate in the rally-point
region.  The selection encodes an integer via the combinatorial number
system in colexicographic order; the coordinate encodes a second integer
in row-major order.  Field widths are floored to whole bits so every
value read from the stream is guaranteed representable, which costs at
most one bit per field but keeps decoding exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from random import Random
from typing import Optional, Sequence


class CodecError(Exception):
    """Base class for encoding/decoding failures."""


class InvalidCommandError(CodecError):
    """Command violates the channel configuration (bad ids, coords, size)."""


class RangeError(CodecError):
    """Integer argument outside its admissible range."""


class DecodeError(CodecError):
    """Command cannot have been produced by this encoder."""


class Mode(IntEnum):
    COMBINATORIAL = 1
    BYTE_CLICK = 2


class Opcode(IntEnum):
    MOVE = 0x01
    SET_RALLY_POINT = 0x02


@dataclass(frozen=True)
class ChannelConfig:
    """Channel parameters shared by both endpoints.

    n        -- number of selectable objects on the map
    k        -- maximum objects selectable in one command
    x_max    -- rally-point region width in cells
    y_max    -- rally-point region height in cells
    mode     -- combinatorial subset encoding or one byte per click
    m_bits   -- bits carried per click in BYTE_CLICK mode
    """

    n: int
    k: int
    x_max: int
    y_max: int
    mode: Mode = Mode.COMBINATORIAL
    m_bits: int = 8

    def __post_init__(self) -> None:
        if not (self.n >= self.k >= 1):
            raise ValueError(f"need n >= k >= 1, got n={self.n} k={self.k}")
        if self.m < 2:
            raise ValueError(f"need at least 2 target locations, got m={self.m}")
        if self.mode is Mode.BYTE_CLICK:
            if self.m_bits < 1:
                raise ValueError("m_bits must be positive")
            if self.n < (1 << self.m_bits):
                raise ValueError(
                    f"byte-click mode needs n >= 2^{self.m_bits}, got n={self.n}"
                )

    @property
    def m(self) -> int:
        """Total number of encodable target locations."""
        return self.x_max * self.y_max

    @property
    def location_bits(self) -> int:
        """Fixed width of the location field."""
        return _floor_log2(self.m)

    def selection_bits(self, r: int) -> int:
        """Fixed width of the selection field when r objects are selected."""
        if not 1 <= r <= self.k:
            raise RangeError(f"r={r} outside 1..{self.k}")
        return _floor_log2(binom(self.n, r))


@dataclass(frozen=True)
class GameCommand:
    """One in-game order: opcode, selected object ids, optional target cell.

    Ids are kept strictly descending (the canonical order produced by the
    unranking scan).  ``target`` is None for selection-only commands, as
    used by the byte-per-click variant.
    """

    opcode: Opcode
    selected: tuple[int, ...]
    target: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "selected", tuple(self.selected))

    def canonical(self) -> "GameCommand":
        """Return the same command with ids sorted descending."""
        ids = tuple(sorted(self.selected, reverse=True))
        if ids == self.selected:
            return self
        return GameCommand(self.opcode, ids, self.target)


class BitStream:
    """Positional bit reader/writer over a byte sequence, MSB first.

    Reads past the end of the written data yield zero bits (the encoder's
    tail padding); the cursor never advances beyond the data so the
    number of real bits consumed stays observable.
    """

    def __init__(self, data: bytes = b"") -> None:
        self._buf = bytearray(data)
        self._bit_length = 8 * len(data)
        self.cursor = 0  # read position, in bits from the start

    @property
    def bit_length(self) -> int:
        return self._bit_length

    @property
    def remaining(self) -> int:
        """Unread bits actually present (excludes virtual zero padding)."""
        return self._bit_length - self.cursor

    def read(self, width: int) -> int:
        """Read ``width`` bits as an unsigned integer, zero-padded past the end."""
        if width < 0:
            raise RangeError("width must be non-negative")
        if width == 0:
            return 0
        avail = min(width, self.remaining)
        value = 0
        pos = self.cursor
        taken = 0
        while taken < avail:
            byte_i, bit_i = divmod(pos, 8)
            chunk = min(8 - bit_i, avail - taken)
            bits = (self._buf[byte_i] >> (8 - bit_i - chunk)) & ((1 << chunk) - 1)
            value = (value << chunk) | bits
            pos += chunk
            taken += chunk
        value <<= width - avail  # zero padding for short tails
        self.cursor = pos
        return value

    def write(self, value: int, width: int) -> None:
        """Append ``width`` bits of ``value`` (must fit) at the end of the stream."""
        if width < 0:
            raise RangeError("width must be non-negative")
        if value < 0 or value >> width:
            raise RangeError(f"value {value} does not fit in {width} bits")
        pos = self._bit_length
        need = (pos + width + 7) // 8 - len(self._buf)
        if need > 0:
            self._buf.extend(b"\x00" * need)
        written = 0
        while written < width:
            byte_i, bit_i = divmod(pos, 8)
            chunk = min(8 - bit_i, width - written)
            bits = (value >> (width - written - chunk)) & ((1 << chunk) - 1)
            self._buf[byte_i] |= bits << (8 - bit_i - chunk)
            pos += chunk
            written += chunk
        self._bit_length = pos

    def write_bytes(self, data: bytes) -> None:
        """Append whole bytes (fast path when already byte-aligned)."""
        if self._bit_length % 8 == 0:
            self._buf.extend(data)
            self._bit_length += 8 * len(data)
        else:
            for b in data:
                self.write(b, 8)

    def to_bytes(self) -> bytes:
        """All written data, final partial byte zero-padded."""
        return bytes(self._buf)

    def __len__(self) -> int:
        return self._bit_length


def _floor_log2(value: int) -> int:
    if value < 1:
        raise RangeError(f"log2 undefined for {value}")
    return value.bit_length() - 1


def binom(n: int, r: int) -> int:
    """Exact binomial coefficient C(n, r); zero when r > n."""
    if n < 0 or r < 0:
        raise RangeError("binom arguments must be non-negative")
    if r > n:
        return 0
    return math.comb(n, r)


def rank_selection(selected: Sequence[int], n: int) -> int:
    """Colexicographic rank of a subset of {0..n-1}.

    The ids are sorted descending and each contributes C(id, slot) where
    slot counts down from the subset size, mirroring the decoding scan.
    """
    ids = sorted(selected, reverse=True)
    if len(set(ids)) != len(ids):
        raise InvalidCommandError(f"duplicate ids in selection {selected!r}")
    if ids and (ids[0] >= n or ids[-1] < 0):
        raise InvalidCommandError(f"id outside [0, {n}) in selection {selected!r}")
    rank = 0
    slot = len(ids)
    for i in ids:
        rank += binom(i, slot)
        slot -= 1
    return rank


def unrank_selection(z1: int, n: int, r: int) -> list[int]:
    """Inverse of rank_selection: the rank-z1 r-subset of {0..n-1}, descending.

    Scans candidate ids from high to low keeping a running binomial, so
    each step is one big-integer multiply/divide instead of a fresh
    coefficient computation.
    """
    if z1 < 0:
        raise RangeError("rank must be non-negative")
    total = binom(n, r)
    if z1 >= total:
        raise RangeError(f"rank {z1} >= C({n},{r}) = {total}")
    ids: list[int] = []
    i = n - 1
    b = binom(i, r) if r >= 0 else 0
    while r > 0:
        # b == C(i, r) throughout
        if b <= z1:
            z1 -= b
            ids.append(i)
            b = b * r // i if i > 0 else 0  # C(i-1, r-1)
            r -= 1
        else:
            b = b * (i - r) // i  # C(i-1, r)
        i -= 1
    return ids


def encode_location(z2: int, cfg: ChannelConfig) -> tuple[int, int]:
    """Map an integer below m to a region cell, row-major."""
    if not 0 <= z2 < cfg.m:
        raise RangeError(f"location value {z2} outside [0, {cfg.m})")
    return z2 % cfg.x_max, z2 // cfg.x_max


def decode_location(xy: tuple[int, int], cfg: ChannelConfig) -> int:
    """Inverse of encode_location."""
    x, y = xy
    if not (0 <= x < cfg.x_max and 0 <= y < cfg.y_max):
        raise InvalidCommandError(f"coordinate {xy} outside region "
                                  f"{cfg.x_max}x{cfg.y_max}")
    return y * cfg.x_max + x


def encode_command(
    stream: BitStream,
    cfg: ChannelConfig,
    rng: Random,
    opcode: Opcode = Opcode.MOVE,
) -> GameCommand:
    """Consume the next payload bits from the stream as one game command.

    The selection size r is drawn uniformly from {1..k}; the stream then
    supplies floor(log2 C(n, r)) selection bits and floor(log2 m)
    location bits.  A short tail reads as zero bits, so callers may keep
    encoding until ``stream.remaining`` hits zero.
    """
    if cfg.mode is Mode.BYTE_CLICK:
        return encode_byte_click(stream.read(cfg.m_bits), cfg, opcode)
    r = rng.randint(1, cfg.k)
    z1 = stream.read(cfg.selection_bits(r))
    selected = unrank_selection(z1, cfg.n, r)
    z2 = stream.read(cfg.location_bits)
    return GameCommand(opcode, tuple(selected), encode_location(z2, cfg))


def decode_command(
    cmd: GameCommand, cfg: ChannelConfig
) -> tuple[tuple[int, int], tuple[int, int]]:
    """Recover the payload bits of a command as ((z1, w1), (z2, w2)).

    Widths are fixed by r = |selected| and by m, so concatenating the
    fields of successive commands reproduces the encoder's bit stream
    exactly (modulo tail padding).
    """
    if cfg.mode is Mode.BYTE_CLICK:
        return (decode_byte_click(cmd, cfg), cfg.m_bits), (0, 0)
    r = len(cmd.selected)
    if not 1 <= r <= cfg.k:
        raise InvalidCommandError(f"selection size {r} outside 1..{cfg.k}")
    w1 = cfg.selection_bits(r)
    z1 = rank_selection(cmd.selected, cfg.n)
    if z1 >> w1:
        raise DecodeError(f"selection rank {z1} needs more than {w1} bits; "
                          "command not produced by this encoder")
    if cmd.target is None:
        raise InvalidCommandError("combinatorial commands require a target")
    z2 = decode_location(cmd.target, cfg)
    w2 = cfg.location_bits
    if z2 >> w2:
        raise DecodeError(f"location value {z2} needs more than {w2} bits")
    return (z1, w1), (z2, w2)


def payload_bits(cmd: GameCommand, cfg: ChannelConfig) -> int:
    """Number of stream bits the command carries."""
    if cfg.mode is Mode.BYTE_CLICK:
        return cfg.m_bits
    return cfg.selection_bits(len(cmd.selected)) + cfg.location_bits


def encode_byte_click(b: int, cfg: ChannelConfig, opcode: Opcode = Opcode.MOVE) -> GameCommand:
    """Encode one m_bits-wide value as the bare selection of object id b."""
    if cfg.mode is not Mode.BYTE_CLICK:
        raise InvalidCommandError("channel not in byte-click mode")
    if not 0 <= b < (1 << cfg.m_bits):
        raise RangeError(f"value {b} outside [0, 2^{cfg.m_bits})")
    return GameCommand(opcode, (b,), None)


def decode_byte_click(cmd: GameCommand, cfg: ChannelConfig) -> int:
    """Inverse of encode_byte_click."""
    if cfg.mode is not Mode.BYTE_CLICK:
        raise InvalidCommandError("channel not in byte-click mode")
    if len(cmd.selected) != 1:
        raise InvalidCommandError(
            f"byte-click commands select exactly one object, got {len(cmd.selected)}"
        )
    b = cmd.selected[0]
    if not 0 <= b < (1 << cfg.m_bits):
        raise InvalidCommandError(f"object id {b} outside byte range")
    return b


@dataclass(frozen=True)
class RateBreakdown:
    """Per-command capacity, split into selection and location terms.

    ``selection_bits``/``location_bits`` follow the ideal average
    (mean over r of log2 C(n, r), plus log2 m); the ``*_floor``
    counterparts are the fixed-width values this implementation
    actually transfers.
    """

    selection_bits: float
    location_bits: float
    selection_bits_floor: float
    location_bits_floor: int

    @property
    def total_bits(self) -> float:
        return self.selection_bits + self.location_bits

    @property
    def total_bits_floor(self) -> float:
        return self.selection_bits_floor + self.location_bits_floor

    @property
    def total_bytes(self) -> float:
        return self.total_bits / 8

    @property
    def selection_bytes(self) -> float:
        return self.selection_bits / 8

    @property
    def bytes_per_command(self) -> float:
        """Implementation average, floor widths."""
        return self.total_bits_floor / 8


def rate_breakdown(cfg: ChannelConfig) -> RateBreakdown:
    """Average payload capacity of one command under ``cfg``."""
    if cfg.mode is Mode.BYTE_CLICK:
        return RateBreakdown(float(cfg.m_bits), 0.0, float(cfg.m_bits), 0)
    sel = 0.0
    sel_floor = 0
    for r in range(1, cfg.k + 1):
        c = binom(cfg.n, r)
        sel += math.log2(c)
        sel_floor += _floor_log2(c)
    return RateBreakdown(
        selection_bits=sel / cfg.k,
        location_bits=math.log2(cfg.m),
        selection_bits_floor=sel_floor / cfg.k,
        location_bits_floor=cfg.location_bits,
    )


def avg_bits_per_command(cfg: ChannelConfig) -> float:
    """Ideal average bits per command: mean_r log2 C(n,r) + log2 m."""
    if cfg.mode is not Mode.COMBINATORIAL:
        raise InvalidCommandError("rate formula applies to combinatorial mode")
    return rate_breakdown(cfg).total_bits


def avg_bits_per_command_floor(cfg: ChannelConfig) -> float:
    """Average bits per command actually achieved with floor widths."""
    return rate_breakdown(cfg).total_bits_floor


def validate_command(cmd: GameCommand, cfg: ChannelConfig) -> None:
    """Raise InvalidCommandError unless ``cmd`` is legal under ``cfg``."""
    if not cmd.selected:
        raise InvalidCommandError("empty selection")
    if len(cmd.selected) > (1 if cfg.mode is Mode.BYTE_CLICK else cfg.k):
        raise InvalidCommandError(f"selection larger than k={cfg.k}")
    seen = set()
    for i in cmd.selected:
        if not 0 <= i < cfg.n:
            raise InvalidCommandError(f"object id {i} outside [0, {cfg.n})")
        if i in seen:
            raise InvalidCommandError(f"duplicate object id {i}")
        seen.add(i)
    if cmd.target is not None:
        decode_location(cmd.target, cfg)
