"""The six obfuscation techniques and their exact inverses.

A sender (:class:`Obfuscator`) and a receiver (:class:`Deobfuscator`) share an
:class:`~camo.profile.ObfuscationProfile`. Every emitted packet carries its
recovery headers as one contiguous run spliced at an offset derived from the
packet length and a per-direction sequence counter that both sides advance in
lock-step. The profile seed salts that counter, so a receiver holding the
wrong seed looks in the wrong place and sees checksum failures.
"""

from __future__ import annotations

import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, replace

from camo.errors import (ChecksumMismatch, DecodeError, LengthTooSmall, OrphanFragment, Oversize,
                         SeqDesync)
from camo.header import HEADER_LEN, RecoveryHeader, TechniqueId, fnv1a32, splice, unsplice
from camo.packet import MAX_PAYLOAD, FlowKey, Packet, flow_key
from camo.prng import MASK32, Xorshift32, keystream, xor_bytes
from camo.profile import ObfuscationProfile

log = logging.getLogger(__name__)

T = TechniqueId
GROUP_MASK = 0x7FFF


def session_salt(seed: int) -> int:
    return fnv1a32(struct.pack(">Q", seed & ((1 << 64) - 1)))


def link(headers: list[RecoveryHeader]) -> list[RecoveryHeader]:
    """Set the chain flag on every header except the last."""
    last = len(headers) - 1
    return [replace(h, chain=i < last) for i, h in enumerate(headers)]


def rotate_left(data: bytes, r: int) -> bytes:
    if not data:
        return data
    r %= len(data)
    return data[r:] + data[:r]


def rotate_right(data: bytes, r: int) -> bytes:
    if not data:
        return data
    return rotate_left(data, len(data) - r % len(data))


class ConstantSize:
    """Running maximum payload length seen in a session."""

    def __init__(self, value: int = 0):
        self.value = value

    def target(self, n: int) -> int:
        return max(self.value, n)


# -- body transforms: return (new body, headers outermost-first) ---------------

def pad(body: bytes, profile: ObfuscationProfile, prng: Xorshift32):
    pad_len = prng.randint(profile.pad_min, profile.pad_max)
    return body + prng.next_bytes(pad_len), [RecoveryHeader(T.PADDING, pad_len)]


def pad_xor(body: bytes, profile: ObfuscationProfile, prng: Xorshift32):
    padded, headers = pad(body, profile, prng)
    seed16 = prng.next_u16()
    ks = keystream((seed16 << 16) | (len(padded) & 0xFFFF), len(padded))
    return xor_bytes(padded, ks), [RecoveryHeader(T.PAD_XOR, seed16), *headers]


def pad_shift(body: bytes, profile: ObfuscationProfile, prng: Xorshift32):
    padded, headers = pad(body, profile, prng)
    r = prng.randint(0, len(padded) - 1)
    return rotate_left(padded, r), [RecoveryHeader(T.PAD_SHIFT, r), *headers]


def const_pad(body: bytes, size: ConstantSize):
    target = size.target(len(body))
    if target + HEADER_LEN > MAX_PAYLOAD:
        raise Oversize(f"constant size {target} + header exceeds {MAX_PAYLOAD}")
    size.value = target
    return body + bytes(target - len(body)), [RecoveryHeader(T.CONST_PAD, len(body))]


def _check_size(n: int):
    if n > MAX_PAYLOAD:
        raise Oversize(f"obfuscated payload of {n} bytes exceeds {MAX_PAYLOAD}")


def _wrap(body, headers, seq):
    _check_size(len(body) + HEADER_LEN * len(headers))
    return splice(body, link(headers), seq), link(headers)


def apply_padding(payload: bytes, profile: ObfuscationProfile, prng: Xorshift32, seq: int = 0):
    return _wrap(*pad(payload, profile, prng), seq)


def apply_pad_xor(payload: bytes, profile: ObfuscationProfile, prng: Xorshift32, seq: int = 0):
    return _wrap(*pad_xor(payload, profile, prng), seq)


def apply_pad_shift(payload: bytes, profile: ObfuscationProfile, prng: Xorshift32, seq: int = 0):
    return _wrap(*pad_shift(payload, profile, prng), seq)


def apply_const_pad(payload: bytes, size: ConstantSize, seq: int = 0):
    return _wrap(*const_pad(payload, size), seq)


def apply_fragmentation(packet: Packet, prng: Xorshift32, group_id: int, seq: int = 0,
                        extra: list[RecoveryHeader] = ()) -> tuple[Packet, Packet]:
    """Split ``packet`` in two at a uniform point; ``extra`` rides on fragment 0."""
    body = packet.payload
    if len(body) < 2:
        raise LengthTooSmall("payload shorter than 2 bytes cannot be fragmented")
    s = prng.randint(1, len(body) - 1)
    gid = (group_id & GROUP_MASK) << 1
    heads = ([RecoveryHeader(T.FRAGMENT, gid), *extra], [RecoveryHeader(T.FRAGMENT, gid | 1)])
    out = []
    for i, (piece, headers) in enumerate(zip((body[:s], body[s:]), heads)):
        _check_size(len(piece) + HEADER_LEN * len(headers))
        out.append(packet.with_payload(splice(piece, link(headers), seq + i)))
    return out[0], out[1]


def apply_delay(packet: Packet, profile: ObfuscationProfile, prng: Xorshift32,
                floor_us: int | None = None) -> Packet:
    d = prng.randint(profile.delay_min_us, profile.delay_max_us)
    ts = packet.ts_us + d
    if floor_us is not None and ts < floor_us:
        ts = floor_us
    return packet.with_ts_us(ts)


class FlowSeqState:
    """Per-direction packet counters, mirrored by sender and receiver."""

    def __init__(self):
        self.counters: dict[tuple, int] = {}

    def peek(self, key) -> int:
        return self.counters.get(key, 0)

    def take(self, key) -> int:
        n = self.counters.get(key, 0)
        self.counters[key] = (n + 1) & MASK32
        return n

    def __eq__(self, other):
        return isinstance(other, FlowSeqState) and self.counters == other.counters


class Obfuscator:
    """Sender side of one obfuscation session."""

    def __init__(self, profile: ObfuscationProfile):
        self.profile = profile
        self.prng = Xorshift32(profile.seed)
        self.salt = session_salt(profile.seed)
        self.seqs = FlowSeqState()
        self.constant_size = ConstantSize()
        self.group_counter = 0
        self.last_ts: dict[FlowKey, int] = {}
        self.skipped = 0

    def _seq_word(self, key) -> int:
        return (self.seqs.take(key) + self.salt) & MASK32

    def obfuscate(self, packet: Packet) -> list[Packet]:
        if not packet.is_transport:
            self.skipped += 1
            return [packet]
        profile, prng = self.profile, self.prng
        body, chain = packet.payload, []
        for t in profile.body:
            if t is T.PADDING:
                body, heads = pad(body, profile, prng)
            elif t is T.PAD_XOR:
                body, heads = pad_xor(body, profile, prng)
            elif t is T.PAD_SHIFT:
                body, heads = pad_shift(body, profile, prng)
            else:
                body, heads = const_pad(body, self.constant_size)
            chain = heads + chain

        key = packet.direction_key()
        if profile.fragments and len(body) >= 2:
            gid = self.group_counter
            self.group_counter = (gid + 1) & GROUP_MASK
            first = self._seq_word(key)
            self.seqs.take(key)
            out = list(apply_fragmentation(packet.with_payload(body), prng, gid, first, chain))
        else:
            if profile.fragments:
                self.skipped += 1
                log.debug("payload of %d bytes too short to fragment", len(body))
            _check_size(len(body) + HEADER_LEN * len(chain))
            out = [packet.with_payload(splice(body, link(chain), self._seq_word(key)))]

        if profile.delays:
            fk = flow_key(packet)
            delayed = []
            for p in out:
                p = apply_delay(p, profile, prng, self.last_ts.get(fk))
                self.last_ts[fk] = p.ts_us
                delayed.append(p)
            out = delayed
        return out


@dataclass
class FragmentPart:
    """Half of a fragmented packet waiting for its partner."""

    group: int
    index: int
    packet: Packet
    pending: list[RecoveryHeader] = field(default_factory=list)
    arrival: int = 0


def reverse_chain(body: bytes, headers: list[RecoveryHeader], profile: ObfuscationProfile) -> bytes:
    """Undo body transforms, outermost header first."""
    for h in headers:
        t, p = h.technique, h.param
        if t is T.PAD_XOR:
            body = xor_bytes(body, keystream((p << 16) | (len(body) & 0xFFFF), len(body)))
        elif t is T.PAD_SHIFT:
            if body and p >= len(body):
                raise SeqDesync(f"shift {p} out of range for {len(body)} bytes")
            body = rotate_right(body, p)
        elif t is T.PADDING:
            if not profile.pad_min <= p <= profile.pad_max or p > len(body):
                raise SeqDesync(f"pad length {p} inconsistent with profile or body")
            body = body[:len(body) - p]
        elif t is T.CONST_PAD:
            if p > len(body):
                raise SeqDesync(f"original length {p} exceeds body of {len(body)}")
            body = body[:p]
        else:
            raise SeqDesync(f"unexpected {t.name} header inside a chain")
    return body


class Deobfuscator:
    """Receiver side of a session; mirrors the sender's sequence counters.

    Tolerates reordering within a small window: when the header is not at the
    expected slot, earlier skipped slots and the next ``window`` slots are
    tried before declaring a mismatch.
    """

    def __init__(self, profile: ObfuscationProfile, window: int = 2, max_holes: int = 64,
                 orphan_after: int = 1024):
        self.profile = profile
        self.salt = session_salt(profile.seed)
        self.seqs = FlowSeqState()
        self.window = window
        self.max_holes = max_holes
        self.orphan_after = orphan_after
        self.holes: dict[tuple, OrderedDict] = {}
        self.pending: dict[tuple, FragmentPart] = {}
        self.orphans: list[tuple] = []
        self.processed = 0
        shapes = profile.chain_shapes()
        self._shapes = set(shapes)
        self._sizes = sorted({len(s) for s in shapes if s}, reverse=True)
        self._headerless = () in self._shapes
        self._body_shape = profile.body_shape()

    # -- sequence bookkeeping
    def _candidates(self, key):
        c = self.seqs.peek(key)
        yield c
        yield from reversed(self.holes.get(key, {}))
        for i in range(1, self.window + 1):
            yield (c + i) & MASK32

    def _advance(self, key, seq):
        c = self.seqs.peek(key)
        holes = self.holes.setdefault(key, OrderedDict())
        if seq == c:
            self.seqs.counters[key] = (c + 1) & MASK32
        elif seq in holes:
            del holes[seq]
        else:
            n = c
            while n != seq:
                holes[n] = self.processed
                n = (n + 1) & MASK32
            self.seqs.counters[key] = (seq + 1) & MASK32
        while len(holes) > self.max_holes:
            holes.popitem(last=False)

    def _evict(self):
        limit = self.processed - self.orphan_after
        for gkey in [k for k, part in self.pending.items() if part.arrival < limit]:
            del self.pending[gkey]
            self.orphans.append(gkey)
        for holes in self.holes.values():
            while holes and next(iter(holes.values())) < limit:
                holes.popitem(last=False)

    # -- header recovery
    def _attempt(self, payload: bytes, seq: int):
        word = (seq + self.salt) & MASK32
        errors = []
        for n in self._sizes:
            if len(payload) < HEADER_LEN * n:
                continue
            try:
                body, headers = unsplice(payload, word, n)
                ids = tuple(h.technique for h in headers)
                if ids not in self._shapes or any(h.chain != (i < n - 1) for i, h in enumerate(headers)):
                    raise SeqDesync(f"header chain {[t.name for t in ids]} does not fit profile")
                if ids[0] is T.FRAGMENT:
                    # only fragment 0 carries the body chain
                    if self._body_shape and (headers[0].param & 1 == 0) != (n > 1):
                        raise SeqDesync("fragment index disagrees with its header chain")
                else:
                    body = reverse_chain(body, headers, self.profile)
                return body, headers, None
            except DecodeError as exc:
                errors.append(exc)
        return None, None, errors

    def deobfuscate(self, packet: Packet) -> Packet | FragmentPart:
        """Recover one packet; returns a FragmentPart while a group is incomplete."""
        self.processed += 1
        self._evict()
        if not packet.is_transport:
            return packet
        key = packet.direction_key()
        if not self._sizes or (self._headerless and len(packet.payload) < 2):
            self.seqs.take(key)
            return packet

        first_errors = None
        for seq in self._candidates(key):
            body, headers, errors = self._attempt(packet.payload, seq)
            if headers is not None:
                self._advance(key, seq)
                break
            if first_errors is None:
                first_errors = errors or []
        else:
            self._advance(key, self.seqs.peek(key))
            if any(not isinstance(e, SeqDesync) for e in first_errors) or not first_errors:
                raise ChecksumMismatch("no valid recovery header at the expected offset")
            raise first_errors[0]

        if headers[0].technique is not T.FRAGMENT:
            return packet.with_payload(body)
        return self._collect(packet, body, headers)

    def _collect(self, packet, body, headers):
        gid, index = headers[0].param >> 1, headers[0].param & 1
        part = FragmentPart(gid, index, packet.with_payload(body), headers[1:], self.processed)
        gkey = (flow_key(packet), gid)
        other = self.pending.pop((gkey, 1 - index), None)
        if other is None:
            stale = self.pending.pop((gkey, index), None)
            if stale is not None:
                self.orphans.append((gkey, index))
            self.pending[(gkey, index)] = part
            return part
        first, second = (part, other) if index == 0 else (other, part)
        merged = first.packet.payload + second.packet.payload
        return first.packet.with_payload(reverse_chain(merged, first.pending, self.profile))

    def flush(self) -> None:
        """Give up on incomplete fragment groups; raise if any were lost."""
        self.orphans.extend(self.pending)
        self.pending.clear()
        if self.orphans:
            lost, self.orphans = self.orphans, []
            raise OrphanFragment(f"{len(lost)} fragment(s) never found their partner", lost)
