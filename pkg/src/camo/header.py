"""Four-byte recovery header and its keyed placement inside a payload.

Wire layout::

    byte 0   technique id (bits 7-5) | chain flag (bit 4) | reserved (bits 3-0)
    byte 1-2 parameter, big-endian
    byte 3   checksum = byte0 ^ param_hi ^ param_lo ^ 0xA5
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from camo.errors import BadTechnique, ChecksumMismatch, LengthTooSmall, ReservedBitsSet

HEADER_LEN = 4
CHECKSUM_KEY = 0xA5

FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193


class TechniqueId(enum.IntEnum):
    PADDING = 0
    PAD_XOR = 1
    PAD_SHIFT = 2
    CONST_PAD = 3
    FRAGMENT = 4
    DELAY = 5

    @property
    def slug(self) -> str:
        return self.name.lower()


@dataclass(frozen=True, slots=True)
class RecoveryHeader:
    technique: TechniqueId
    param: int = 0
    chain: bool = False
    reserved: int = 0

    def __post_init__(self):
        if not 0 <= self.param <= 0xFFFF:
            raise ValueError(f"param must be 16-bit, got {self.param}")


def encode_header(h: RecoveryHeader) -> bytes:
    if h.reserved:
        raise ReservedBitsSet(f"reserved bits {h.reserved:#x} must be zero")
    b0 = (int(h.technique) << 5) | (int(h.chain) << 4)
    hi, lo = h.param >> 8, h.param & 0xFF
    return bytes((b0, hi, lo, b0 ^ hi ^ lo ^ CHECKSUM_KEY))


def decode_header(b: bytes) -> RecoveryHeader:
    if len(b) != HEADER_LEN:
        raise ValueError(f"header must be {HEADER_LEN} bytes")
    b0, hi, lo, check = b
    if b0 ^ hi ^ lo ^ CHECKSUM_KEY != check:
        raise ChecksumMismatch("recovery header checksum does not verify")
    if b0 & 0x0F:
        raise ReservedBitsSet(f"reserved bits set in {b0:#04x}")
    tech = b0 >> 5
    if tech > TechniqueId.DELAY:
        raise BadTechnique(f"technique id {tech} is reserved")
    return RecoveryHeader(TechniqueId(tech), (hi << 8) | lo, bool(b0 & 0x10))


def fnv1a32(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & 0xFFFFFFFF
    return h


def header_offset(obf_len: int, seq: int) -> int:
    """Splice offset for a single header in a packet of ``obf_len`` bytes."""
    if obf_len < HEADER_LEN:
        raise LengthTooSmall(f"obfuscated length {obf_len} < {HEADER_LEN}")
    digest = fnv1a32(struct.pack(">II", obf_len & 0xFFFFFFFF, seq & 0xFFFFFFFF))
    return digest % (obf_len - HEADER_LEN + 1)


def chain_offset(obf_len: int, seq: int, n_headers: int) -> int:
    """Offset of a contiguous run of ``n_headers`` headers.

    Folds the single-header offset (computed on the full length) into the
    narrower legal range; identical to ``header_offset`` for one header.
    """
    span = obf_len - HEADER_LEN * n_headers
    if span < 0:
        raise LengthTooSmall(f"{obf_len} bytes cannot hold {n_headers} headers")
    return header_offset(obf_len, seq) % (span + 1)


def splice(body: bytes, headers: list[RecoveryHeader], seq: int) -> bytes:
    if not headers:
        return bytes(body)
    blob = b"".join(encode_header(h) for h in headers)
    total = len(body) + len(blob)
    at = chain_offset(total, seq, len(headers))
    return body[:at] + blob + body[at:]


def unsplice(obf: bytes, seq: int, n_headers: int) -> tuple[bytes, list[RecoveryHeader]]:
    """Cut ``n_headers`` headers out of ``obf``; raises DecodeError subclasses."""
    at = chain_offset(len(obf), seq, n_headers)
    end = at + HEADER_LEN * n_headers
    headers = [decode_header(obf[i:i + HEADER_LEN]) for i in range(at, end, HEADER_LEN)]
    return obf[:at] + obf[end:], headers
