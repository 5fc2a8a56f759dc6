import struct

import pytest
from hypothesis import given, settings, strategies as st

from camo.errors import MalformedPcap, UnsupportedVersion
from camo.packet import (TCP, UDP, CaptureFile, FlowKey, Packet, flow_key, group_flows, ip,
                         read_pcap, write_pcap)

from _support import random_packets


def udp_record_fixture(endian="<"):
    """1-record raw-IPv4 pcap holding a 60-byte UDP datagram, 1234 -> 5353."""
    payload = bytes(range(32))
    udp = struct.pack("!HHHH", 1234, 5353, 8 + len(payload), 0) + payload
    iphdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(udp), 1, 0, 64, 17, 0,
                        bytes([192, 168, 1, 10]), bytes([224, 0, 0, 251]))
    frame = iphdr + udp
    assert len(frame) == 60
    glob = struct.pack(endian + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 101)
    rec = struct.pack(endian + "IIII", 1_700_000_000, 250_000, len(frame), len(frame))
    return glob + rec + frame, payload


def test_empty_capture_reads_zero_packets():
    data = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    assert read_pcap(data).packets == []


def test_hand_built_udp_record():
    data, payload = udp_record_fixture()
    cap = read_pcap(data)
    assert len(cap.packets) == 1
    p = cap.packets[0]
    assert (p.src_port, p.dst_port, p.protocol) == (1234, 5353, UDP)
    assert p.src_addr == ip("192.168.1.10") and p.payload == payload
    assert (p.ts_sec, p.ts_usec) == (1_700_000_000, 250_000)


def test_byte_swapped_magic_is_transparent():
    le, _ = udp_record_fixture("<")
    be, _ = udp_record_fixture(">")
    assert be[:4] == b"\xa1\xb2\xc3\xd4" and le[:4] == b"\xd4\xc3\xb2\xa1"
    assert read_pcap(be).packets == read_pcap(le).packets


def test_truncated_record_is_malformed():
    data, _ = udp_record_fixture()
    with pytest.raises(MalformedPcap):
        read_pcap(data[:-5])


def test_bad_magic_and_pcapng():
    with pytest.raises(MalformedPcap):
        read_pcap(b"\x00" * 24)
    with pytest.raises(UnsupportedVersion):
        read_pcap(b"\x0a\x0d\x0d\x0a" + b"\x00" * 28)


def test_usec_out_of_range_is_malformed():
    data, _ = udp_record_fixture()
    bad = bytearray(data)
    struct.pack_into("<I", bad, 28, 1_000_000)
    with pytest.raises(MalformedPcap):
        read_pcap(bytes(bad))


def test_empty_capture_writes_24_bytes():
    assert len(write_pcap(CaptureFile())) == 24


def test_one_opaque_packet_writes_record_and_payload():
    frame = bytes(range(50))
    p = Packet(1, 2, protocol=0, payload=frame)
    assert len(write_pcap(CaptureFile(1, [p]))) == 24 + 16 + len(frame)


def test_tcp_record_includes_synthesized_headers():
    p = Packet(1, 2, ip("10.0.0.1"), ip("10.0.0.2"), 1, 2, TCP, b"x" * 10)
    assert len(write_pcap(CaptureFile(1, [p]))) == 24 + 16 + 14 + 20 + 20 + 10
    assert len(write_pcap(CaptureFile(101, [p]))) == 24 + 16 + 20 + 20 + 10


@pytest.mark.parametrize("link", [1, 101])
def test_round_trip_1000_random_packets(link):
    cap = CaptureFile(link, random_packets(1000, seed=3))
    data = write_pcap(cap)
    again = read_pcap(data)
    assert again.packets == cap.packets
    assert write_pcap(again) == data


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=1, max_size=200), st.sampled_from([TCP, UDP]),
       st.integers(0, 65535), st.integers(0, 65535))
def test_round_trip_property(payload, proto, sport, dport):
    p = Packet(5, 6, ip("1.2.3.4"), ip("5.6.7.8"), sport, dport, proto, payload)
    assert read_pcap(write_pcap(CaptureFile(1, [p]))).packets == [p]


def test_opaque_frames_survive_round_trip():
    arp = b"\xff" * 12 + b"\x08\x06" + b"\x00" * 28
    cap = CaptureFile(1, [Packet(1, 0, protocol=0, payload=arp)])
    assert read_pcap(write_pcap(cap)).packets == cap.packets


def test_flow_key_symmetry():
    a = Packet(0, 0, ip("10.0.0.1"), ip("10.0.0.2"), 80, 443, TCP)
    b = Packet(0, 0, ip("10.0.0.2"), ip("10.0.0.1"), 443, 80, TCP)
    assert flow_key(a) == flow_key(b)
    assert flow_key(a) != flow_key(Packet(0, 0, a.src_addr, a.dst_addr, 80, 443, UDP))


def test_flow_key_text_round_trip():
    k = flow_key(Packet(0, 0, ip("10.0.0.9"), ip("10.0.0.2"), 5, 6, UDP))
    assert FlowKey.parse(str(k)) == k
    assert str(k) == "10.0.0.2:6-10.0.0.9:5/17"


def test_grouping_five_packets_into_three_flows():
    A, B, C = ip("10.0.0.1"), ip("10.0.0.2"), ip("10.0.0.3")
    pkts = [
        Packet(0, 0, A, B, 1000, 80, TCP),
        Packet(0, 1, B, A, 80, 1000, TCP),  # reverse of the first
        Packet(0, 2, A, B, 1000, 80, UDP),  # protocol differs
        Packet(0, 3, A, C, 1000, 80, TCP),
        Packet(0, 4, C, A, 80, 1000, TCP),  # reverse of the fourth
    ]
    flows = group_flows(pkts)
    assert len(flows) == 3
    assert sorted(len(v) for v in flows.values()) == [1, 2, 2]


def test_sort_is_stable():
    pkts = [Packet(1, 0, payload=b"a"), Packet(0, 5, payload=b"b"), Packet(1, 0, payload=b"c")]
    cap = CaptureFile(1, pkts).sort()
    assert [p.payload for p in cap.packets] == [b"b", b"a", b"c"]
    assert cap.is_sorted()


def test_packet_validation():
    with pytest.raises(ValueError):
        Packet(0, 1_000_000)
    with pytest.raises(ValueError):
        Packet(0, 0, protocol=UDP, payload=bytes(65501))
