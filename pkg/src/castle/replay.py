"""Replay log: the receive channel.

Every command that enters a game session is appended to a .creplay file,
one fixed-layout little-endian record per command:

    magic  u32  0x43455243 ("CREC")
    tick   u32
    player u8
    opcode u8   (MOVE=0x01, SET_RALLY_POINT=0x02)
    count  u16  number of selected ids, >= 1
    ids    count x u32
    x, y   u16 each

so a record is 16 + 4*count bytes.  The writer flushes after every
record; the tailing reader polls for complete new records, which is what
lets the receiver decode commands in real time while the session runs.
"""

from __future__ import annotations

import io
import os
import struct
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .codec import GameCommand, Opcode

RECORD_MAGIC = 0x43455243  # b"CREC" little-endian
_FIXED = struct.Struct("<IIBBH")  # magic, tick, player, opcode, count
_TAIL = struct.Struct("<HH")  # x, y
FIXED_OVERHEAD = _FIXED.size + _TAIL.size  # 16

DEFAULT_POLL_MS = 10.0


class ReplayError(Exception):
    pass


class ReplayFormatError(ReplayError):
    """Corrupt record; ``offset`` is the byte position of the record start."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"offset {offset}: {message}")


class CalibrationError(ReplayError):
    pass


@dataclass(frozen=True)
class ReplayRecord:
    tick: int
    player: int
    opcode: int
    ids: tuple[int, ...]
    x: int
    y: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        if not self.ids:
            raise ReplayError("records must select at least one object")
        if len(self.ids) > 0xFFFF:
            raise ReplayError("too many ids for one record")
        if self.opcode not in (Opcode.MOVE, Opcode.SET_RALLY_POINT):
            raise ReplayError(f"unknown opcode {self.opcode:#x}")

    @property
    def byte_length(self) -> int:
        return FIXED_OVERHEAD + 4 * len(self.ids)

    def to_command(self) -> GameCommand:
        """View the record as a game command with an absolute map target."""
        return GameCommand(Opcode(self.opcode), self.ids, (self.x, self.y))

    @staticmethod
    def from_command(cmd: GameCommand, tick: int, player: int) -> "ReplayRecord":
        x, y = cmd.target if cmd.target is not None else (0, 0)
        return ReplayRecord(tick, player, int(cmd.opcode), cmd.selected, x, y)


def encode_record(rec: ReplayRecord) -> bytes:
    out = bytearray(_FIXED.pack(RECORD_MAGIC, rec.tick, rec.player,
                                rec.opcode, len(rec.ids)))
    out.extend(struct.pack(f"<{len(rec.ids)}I", *rec.ids))
    out.extend(_TAIL.pack(rec.x, rec.y))
    return bytes(out)


def decode_record(buf: bytes, offset: int = 0) -> tuple[Optional[ReplayRecord], int]:
    """Decode the record starting at ``offset``.

    Returns (record, next_offset), or (None, offset) when the buffer ends
    before the record does (a truncated trailing record that the tailer
    should wait on).  Corruption in the fixed fields raises
    ReplayFormatError.
    """
    if len(buf) - offset < _FIXED.size:
        return None, offset
    magic, tick, player, opcode, count = _FIXED.unpack_from(buf, offset)
    if magic != RECORD_MAGIC:
        raise ReplayFormatError(f"bad record magic {magic:#010x}", offset)
    if count == 0:
        raise ReplayFormatError("record with empty selection", offset)
    if opcode not in (Opcode.MOVE, Opcode.SET_RALLY_POINT):
        raise ReplayFormatError(f"unknown opcode {opcode:#04x}", offset)
    end = offset + FIXED_OVERHEAD + 4 * count
    if len(buf) < end:
        return None, offset
    ids = struct.unpack_from(f"<{count}I", buf, offset + _FIXED.size)
    x, y = _TAIL.unpack_from(buf, end - _TAIL.size)
    return ReplayRecord(tick, player, opcode, ids, x, y), end


class ReplayWriter:
    """Append-only .creplay writer; flushes after every record."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "ab")

    def append(self, rec: ReplayRecord) -> int:
        """Write one record, returning its byte offset in the log."""
        offset = self._fh.tell()
        try:
            self._fh.write(encode_record(rec))
            self._fh.flush()
        except OSError as exc:
            raise ReplayError(f"replay write failed: {exc}") from exc
        return offset

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ReplayWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class ReplayTailer:
    """Incremental reader that follows a growing replay log.

    ``poll()`` returns all complete records appended since the last call
    and never blocks, so it can be driven by either a wall-clock loop
    (``follow``) or a simulated-time scheduler.  A partially written
    trailing record is left for the next poll.
    """

    def __init__(
        self,
        path,
        from_offset: int = 0,
        players: Optional[Iterable[int]] = None,
    ):
        self.path = path
        self.offset = from_offset
        self.players = None if players is None else frozenset(players)
        self._pending = b""
        self._pending_at = from_offset

    def poll(self) -> list[ReplayRecord]:
        try:
            with open(self.path, "rb") as fh:
                fh.seek(self._pending_at + len(self._pending))
                fresh = fh.read()
        except FileNotFoundError:
            return []
        buf = self._pending + fresh
        base = self._pending_at
        records = []
        pos = 0
        while True:
            rec, nxt = decode_record(buf, pos)
            if rec is None:
                break
            pos = nxt
            if self.players is None or rec.player in self.players:
                records.append(rec)
        self._pending = buf[pos:]
        self._pending_at = base + pos
        self.offset = self._pending_at
        return records

    def follow(
        self,
        poll_ms: float = DEFAULT_POLL_MS,
        stop: Optional[Callable[[], bool]] = None,
    ) -> Iterator[ReplayRecord]:
        """Yield records as they appear, sleeping ``poll_ms`` at end of log."""
        while True:
            batch = self.poll()
            for rec in batch:
                yield rec
            if not batch:
                if stop is not None and stop():
                    return
                time.sleep(poll_ms / 1000.0)


def read_records(path, players: Optional[Iterable[int]] = None) -> list[ReplayRecord]:
    """Read a complete replay log; trailing truncation is an error here."""
    with open(path, "rb") as fh:
        buf = fh.read()
    records = []
    pos = 0
    wanted = None if players is None else frozenset(players)
    while pos < len(buf):
        rec, nxt = decode_record(buf, pos)
        if rec is None:
            raise ReplayFormatError("truncated trailing record", pos)
        pos = nxt
        if wanted is None or rec.player in wanted:
            records.append(rec)
    return records


@dataclass(frozen=True)
class AffineTransform:
    """Screen<->game coordinate mapping: x' = a*x + b*y + c, y' = d*x + e*y + f."""

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float
    residual: float = 0.0

    def apply(self, xy: tuple[float, float]) -> tuple[float, float]:
        x, y = xy
        return (self.a * x + self.b * y + self.c,
                self.d * x + self.e * y + self.f)

    def apply_round(self, xy: tuple[float, float]) -> tuple[int, int]:
        fx, fy = self.apply(xy)
        return round(fx), round(fy)

    def inverse(self) -> "AffineTransform":
        det = self.a * self.e - self.b * self.d
        if abs(det) < 1e-12:
            raise CalibrationError("transform is not invertible")
        ia, ib = self.e / det, -self.b / det
        id_, ie = -self.d / det, self.a / det
        return AffineTransform(
            ia, ib, -(ia * self.c + ib * self.f),
            id_, ie, -(id_ * self.c + ie * self.f),
        )

    @staticmethod
    def identity() -> "AffineTransform":
        return AffineTransform(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def calibrate(
    probes: Sequence[tuple[tuple[float, float], tuple[float, float]]],
) -> AffineTransform:
    """Least-squares affine fit from probe pairs (screen, logged game coord).

    Needs at least three non-collinear probes; the fit residual (max
    per-point error) is reported on the returned transform.
    """
    if len(probes) < 3:
        raise CalibrationError("need at least 3 probe pairs")
    src = np.array([p[0] for p in probes], dtype=float)
    dst = np.array([p[1] for p in probes], dtype=float)
    design = np.hstack([src, np.ones((len(probes), 1))])
    if np.linalg.matrix_rank(design) < 3:
        raise CalibrationError("probe points are collinear")
    coef, *_ = np.linalg.lstsq(design, dst, rcond=None)
    fitted = design @ coef
    residual = float(np.max(np.linalg.norm(fitted - dst, axis=1))) if len(probes) else 0.0
    (a, d), (b, e), (c, f) = coef
    return AffineTransform(a, b, c, d, e, f, residual=residual)


def apply_calibration(transform: AffineTransform, xy: tuple[float, float]) -> tuple[float, float]:
    return transform.apply(xy)
