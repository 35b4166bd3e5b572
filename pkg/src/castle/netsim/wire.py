"""Datagram wire format.

Little-endian layout, fixed 38-byte header followed by the ciphertext:

    magic   u16   0xCA57
    version u8
    sender  u8    player id
    seq     u64   per-sender packet counter, strictly increasing
    ack     u64   cumulative ack of the peer's packets
    tick    u32   lockstep tick the packet belongs to
    nonce   12B   AEAD nonce (sender id + seq)
    ct_len  u16
    ct      ct_len bytes

The whole header is fed to the AEAD as associated data (together with
the session salt), so any header tampering fails authentication.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = 0xCA57
VERSION = 1
NONCE_LEN = 12
DEFAULT_PORT = 35701

_HEAD = struct.Struct("<HBBQQI")
_CTLEN = struct.Struct("<H")
HEADER_LEN = _HEAD.size + NONCE_LEN + _CTLEN.size  # 38


class WireFormatError(Exception):
    pass


@dataclass(frozen=True)
class Packet:
    sender: int
    seq: int
    ack: int
    tick: int
    nonce: bytes
    ciphertext: bytes

    def header_bytes(self) -> bytes:
        return (_HEAD.pack(MAGIC, VERSION, self.sender, self.seq, self.ack, self.tick)
                + self.nonce + _CTLEN.pack(len(self.ciphertext)))


def make_nonce(sender: int, seq: int) -> bytes:
    """Deterministic unique nonce per (key, sender, seq)."""
    return struct.pack("<B3xQ", sender, seq)


def pack_packet(pkt: Packet) -> bytes:
    if len(pkt.nonce) != NONCE_LEN:
        raise WireFormatError(f"nonce must be {NONCE_LEN} bytes")
    if len(pkt.ciphertext) > 0xFFFF:
        raise WireFormatError("ciphertext too large for one datagram")
    return pkt.header_bytes() + pkt.ciphertext


def parse_packet(data: bytes) -> Packet:
    if len(data) < HEADER_LEN:
        raise WireFormatError(f"short datagram ({len(data)} bytes)")
    magic, version, sender, seq, ack, tick = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise WireFormatError(f"bad magic {magic:#06x}")
    if version != VERSION:
        raise WireFormatError(f"unsupported version {version}")
    nonce = data[_HEAD.size:_HEAD.size + NONCE_LEN]
    (ct_len,) = _CTLEN.unpack_from(data, _HEAD.size + NONCE_LEN)
    ct = data[HEADER_LEN:]
    if len(ct) != ct_len:
        raise WireFormatError(f"ciphertext length mismatch ({len(ct)} != {ct_len})")
    return Packet(sender, seq, ack, tick, nonce, ct)
