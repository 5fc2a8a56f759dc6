"""Packets, flow keys and classic pcap (v2.4) reading/writing.

Only Ethernet (linktype 1) and raw IPv4 (linktype 101) frames are decoded.
Anything that is not an unfragmented IPv4 TCP/UDP datagram is kept as an
opaque ``OTHER`` packet whose payload is the whole captured frame, so that
writing it back reproduces the record unchanged.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

from camo.errors import MalformedPcap, UnsupportedVersion

TCP = 6
UDP = 17

MAX_PAYLOAD = 65500
MAX_FRAME = 262144
USEC = 1_000_000

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101

MAGIC_BE = b"\xa1\xb2\xc3\xd4"
MAGIC_LE = b"\xd4\xc3\xb2\xa1"
PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
SNAPLEN = 65535

_ETH_HDR = 14
_IP_HDR = 20
_TCP_HDR = 20
_UDP_HDR = 8


@dataclass(frozen=True, slots=True)
class Packet:
    """One captured packet.

    ``payload`` is the transport payload for TCP/UDP packets and the raw
    link-layer frame for every other protocol.
    """

    ts_sec: int
    ts_usec: int
    src_addr: bytes = b"\x00\x00\x00\x00"
    dst_addr: bytes = b"\x00\x00\x00\x00"
    src_port: int = 0
    dst_port: int = 0
    protocol: int = UDP
    payload: bytes = b""

    def __post_init__(self):
        if not 0 <= self.ts_usec < USEC:
            raise ValueError(f"ts_usec out of range: {self.ts_usec}")
        if len(self.src_addr) != 4 or len(self.dst_addr) != 4:
            raise ValueError("addresses must be 4 bytes")
        if not (0 <= self.src_port <= 0xFFFF and 0 <= self.dst_port <= 0xFFFF):
            raise ValueError("ports must be 16-bit")
        if not 0 <= self.protocol <= 0xFF:
            raise ValueError("protocol must fit in a byte")
        limit = MAX_PAYLOAD if self.is_transport else MAX_FRAME
        if len(self.payload) > limit:
            raise ValueError(f"payload too long: {len(self.payload)} > {limit}")

    @property
    def is_transport(self) -> bool:
        return self.protocol in (TCP, UDP)

    @property
    def ts_us(self) -> int:
        """Timestamp as integer microseconds."""
        return self.ts_sec * USEC + self.ts_usec

    @property
    def timestamp(self) -> float:
        return self.ts_sec + self.ts_usec / USEC

    @property
    def wire_len(self) -> int:
        """IPv4 total length (header + transport header + payload)."""
        if self.protocol == TCP:
            return _IP_HDR + _TCP_HDR + len(self.payload)
        if self.protocol == UDP:
            return _IP_HDR + _UDP_HDR + len(self.payload)
        return len(self.payload)

    def with_ts_us(self, ts_us: int) -> "Packet":
        sec, usec = divmod(ts_us, USEC)
        return replace(self, ts_sec=sec, ts_usec=usec)

    def with_payload(self, payload: bytes) -> "Packet":
        return replace(self, payload=bytes(payload))

    def direction_key(self) -> tuple:
        return (self.src_addr, self.src_port, self.dst_addr, self.dst_port, self.protocol)


class FlowKey(NamedTuple):
    """Direction-insensitive 5-tuple; endpoint ``a`` sorts before ``b``."""

    a_addr: bytes
    a_port: int
    b_addr: bytes
    b_port: int
    protocol: int

    def __str__(self):
        return (f"{socket.inet_ntoa(self.a_addr)}:{self.a_port}-"
                f"{socket.inet_ntoa(self.b_addr)}:{self.b_port}/{self.protocol}")

    @classmethod
    def parse(cls, text: str) -> "FlowKey":
        """Inverse of ``str(key)``; raises ValueError on bad input."""
        ends, _, proto = text.strip().rpartition("/")
        left, sep, right = ends.partition("-")
        if not sep or not proto:
            raise ValueError(f"not a flow key: {text!r}")
        a_host, _, a_port = left.rpartition(":")
        b_host, _, b_port = right.rpartition(":")
        a = (socket.inet_aton(a_host), int(a_port))
        b = (socket.inet_aton(b_host), int(b_port))
        lo, hi = sorted([a, b])
        return cls(lo[0], lo[1], hi[0], hi[1], int(proto))


def flow_key(p: Packet) -> FlowKey:
    src = (p.src_addr, p.src_port)
    dst = (p.dst_addr, p.dst_port)
    lo, hi = (src, dst) if src <= dst else (dst, src)
    return FlowKey(lo[0], lo[1], hi[0], hi[1], p.protocol)


def group_flows(packets: Iterable[Packet]) -> dict[FlowKey, list[Packet]]:
    flows: dict[FlowKey, list[Packet]] = {}
    for p in packets:
        flows.setdefault(flow_key(p), []).append(p)
    return flows


@dataclass
class CaptureFile:
    link_type: int = LINKTYPE_ETHERNET
    packets: list[Packet] = field(default_factory=list)

    def __len__(self):
        return len(self.packets)

    def sort(self) -> "CaptureFile":
        """Stable sort by timestamp, in place; returns self."""
        self.packets.sort(key=lambda p: p.ts_us)
        return self

    def is_sorted(self) -> bool:
        return all(a.ts_us <= b.ts_us for a, b in zip(self.packets, self.packets[1:]))


# -- decoding -----------------------------------------------------------------

def _decode_ipv4(frame: bytes, start: int, ts_sec: int, ts_usec: int) -> Packet | None:
    """Decode an unfragmented IPv4 TCP/UDP datagram at ``frame[start:]``.

    Returns None when the datagram is anything else; callers then keep the
    frame as OTHER.
    """
    avail = len(frame) - start
    if avail < _IP_HDR:
        return None
    ver_ihl, total_len, frag, proto = (frame[start], *struct.unpack_from("!H2xH", frame, start + 2),
                                       frame[start + 9])
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < _IP_HDR or ihl > avail:
        return None
    if frag & 0x3FFF:
        return None
    # total_len 0 shows up on segmentation-offloaded captures
    if total_len == 0:
        end = len(frame)
    elif total_len < ihl:
        return None
    else:
        end = min(len(frame), start + total_len)
    src, dst = frame[start + 12:start + 16], frame[start + 16:start + 20]
    l4 = start + ihl
    if proto == TCP:
        if end - l4 < _TCP_HDR:
            return None
        doff = (frame[l4 + 12] >> 4) * 4
        if doff < _TCP_HDR or l4 + doff > end:
            return None
        body = l4 + doff
    elif proto == UDP:
        if end - l4 < _UDP_HDR:
            return None
        body = l4 + _UDP_HDR
    else:
        return None
    if end - body > MAX_PAYLOAD:
        return None
    sport, dport = struct.unpack_from("!HH", frame, l4)
    return Packet(ts_sec, ts_usec, bytes(src), bytes(dst), sport, dport, proto,
                  bytes(frame[body:end]))


def _decode_frame(link_type: int, frame: bytes, ts_sec: int, ts_usec: int) -> Packet:
    pkt = None
    if link_type == LINKTYPE_ETHERNET:
        if len(frame) >= _ETH_HDR and frame[12:14] == b"\x08\x00":
            pkt = _decode_ipv4(frame, _ETH_HDR, ts_sec, ts_usec)
    elif link_type == LINKTYPE_RAW:
        pkt = _decode_ipv4(frame, 0, ts_sec, ts_usec)
    if pkt is not None:
        return pkt
    src = dst = b"\x00\x00\x00\x00"
    proto = 0
    ip = _ETH_HDR if link_type == LINKTYPE_ETHERNET else 0
    if (link_type in (LINKTYPE_ETHERNET, LINKTYPE_RAW) and len(frame) >= ip + _IP_HDR
            and frame[ip] >> 4 == 4 and (ip == 0 or frame[12:14] == b"\x08\x00")):
        src, dst = bytes(frame[ip + 12:ip + 16]), bytes(frame[ip + 16:ip + 20])
        proto = frame[ip + 9]
        if proto in (TCP, UDP):
            # fragmented or malformed transport datagram; keep it opaque
            proto = 0
    return Packet(ts_sec, ts_usec, src, dst, 0, 0, proto, bytes(frame))


def read_pcap(data: bytes) -> CaptureFile:
    data = memoryview(bytes(data))
    if len(data) < 4:
        raise MalformedPcap("input shorter than the pcap magic")
    magic = bytes(data[:4])
    if magic == MAGIC_LE:
        endian = "<"
    elif magic == MAGIC_BE:
        endian = ">"
    elif magic == PCAPNG_MAGIC:
        raise UnsupportedVersion("pcapng is not supported")
    else:
        raise MalformedPcap(f"bad magic {magic.hex()}")
    if len(data) < GLOBAL_HEADER_LEN:
        raise MalformedPcap("truncated global header")
    major, minor, _zone, _sigfigs, _snaplen, link_type = struct.unpack_from(
        endian + "HHiIII", data, 4)
    if (major, minor) != (2, 4):
        raise UnsupportedVersion(f"pcap version {major}.{minor}")

    packets = []
    rec_fmt = endian + "IIII"
    pos = GLOBAL_HEADER_LEN
    n = len(data)
    while pos < n:
        if pos + RECORD_HEADER_LEN > n:
            raise MalformedPcap(f"truncated record header at offset {pos}")
        ts_sec, ts_usec, incl_len, _orig_len = struct.unpack_from(rec_fmt, data, pos)
        pos += RECORD_HEADER_LEN
        if incl_len > MAX_FRAME or pos + incl_len > n:
            raise MalformedPcap(f"record at offset {pos - RECORD_HEADER_LEN} overruns buffer")
        if ts_usec >= USEC:
            raise MalformedPcap(f"ts_usec {ts_usec} out of range")
        # incl_len < orig_len: the decoder simply sees fewer payload bytes
        packets.append(_decode_frame(link_type, bytes(data[pos:pos + incl_len]), ts_sec, ts_usec))
        pos += incl_len
    return CaptureFile(link_type, packets)


# -- encoding -----------------------------------------------------------------

def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _encode_ipv4(p: Packet) -> bytes:
    if p.protocol == TCP:
        l4 = struct.pack("!HHIIBBHHH", p.src_port, p.dst_port, 0, 0, _TCP_HDR // 4 << 4,
                         0x18, 0xFFFF, 0, 0)
    else:
        l4 = struct.pack("!HHHH", p.src_port, p.dst_port, _UDP_HDR + len(p.payload), 0)
    total = _IP_HDR + len(l4) + len(p.payload)
    if total > 0xFFFF:
        total = 0
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, 0, 0, 64, p.protocol, 0,
                      p.src_addr, p.dst_addr)
    hdr = hdr[:10] + struct.pack("!H", _ip_checksum(hdr)) + hdr[12:]
    return hdr + l4 + p.payload


def encode_frame(p: Packet, link_type: int) -> bytes:
    if not p.is_transport:
        return p.payload
    ip = _encode_ipv4(p)
    if link_type == LINKTYPE_ETHERNET:
        return b"\x00" * 12 + b"\x08\x00" + ip
    return ip


def write_pcap(capture: CaptureFile) -> bytes:
    out = [struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, SNAPLEN, capture.link_type)]
    for p in capture.packets:
        frame = encode_frame(p, capture.link_type)
        out.append(struct.pack("<IIII", p.ts_sec, p.ts_usec, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out)


def load_pcap(path) -> CaptureFile:
    with open(path, "rb") as fh:
        return read_pcap(fh.read())


def save_pcap(capture: CaptureFile, path) -> None:
    with open(path, "wb") as fh:
        fh.write(write_pcap(capture))


def ip(text: str) -> bytes:
    """Dotted-quad to 4 raw bytes."""
    return socket.inet_aton(text)


def ip_str(addr: bytes) -> str:
    return socket.inet_ntoa(addr)
