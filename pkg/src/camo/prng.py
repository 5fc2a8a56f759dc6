"""32-bit xorshift generator (shifts 13/17/5).

Bit-exact on every platform, so a 16-bit seed in a recovery header is enough
for the receiver to regenerate an XOR keystream.
"""

from __future__ import annotations

MASK32 = 0xFFFFFFFF
ZERO_SEED_REPLACEMENT = 0x9E3779B9


class Xorshift32:
    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        seed &= (1 << 64) - 1
        state = (seed ^ (seed >> 32)) & MASK32
        self.state = state or ZERO_SEED_REPLACEMENT

    def next_u32(self) -> int:
        x = self.state
        x ^= (x << 13) & MASK32
        x ^= x >> 17
        x ^= (x << 5) & MASK32
        self.state = x
        return x

    def next_u16(self) -> int:
        return self.next_u32() >> 16

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] by rejection sampling (no modulo bias)."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        span = hi - lo + 1
        if span > 1 << 32:
            raise ValueError("range wider than 32 bits")
        limit = (1 << 32) - ((1 << 32) % span)
        while True:
            x = self.next_u32()
            if x < limit:
                return lo + x % span

    def next_bytes(self, n: int) -> bytes:
        """``n`` bytes: successive outputs, little-endian, last word truncated."""
        words = -(-n // 4)
        step = self.next_u32
        buf = b"".join(step().to_bytes(4, "little") for _ in range(words))
        return buf[:n]


def keystream(seed32: int, n: int) -> bytes:
    return Xorshift32(seed32 & MASK32).next_bytes(n)


def xor_bytes(data: bytes, key: bytes) -> bytes:
    n = len(data)
    if n == 0:
        return b""
    return (int.from_bytes(data, "little") ^ int.from_bytes(key[:n], "little")).to_bytes(n, "little")
