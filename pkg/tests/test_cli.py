import subprocess
import sys

import pytest

from camo.cli import main
from camo.engine import session_salt
from camo.header import chain_offset
from camo.packet import CaptureFile, load_pcap, save_pcap

from _support import by_direction


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def counts(text):
    return {k: int(v) for k, v in (line.split() for line in text.splitlines())}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--seed", "42", "--devices", "3", "--flows", "12",
                 "--out", str(d / "synth.pcap"), "--labels", str(d / "labels.csv")]) == 0
    return d


def test_synth_defaults(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", tmp_path / "s.pcap", "--labels", tmp_path / "l.csv")
    assert code == 0 and counts(out)["devices"] == 5
    labels = (tmp_path / "l.csv").read_text().splitlines()[1:]
    assert {line.rsplit(",", 1)[1] for line in labels} == {"0", "1", "2", "3", "4"}


def test_synth_seed_changes_bytes(tmp_path, capsys):
    for seed in (1, 2):
        run(capsys, "synth", "--seed", seed, "--devices", 2, "--flows", 10,
            "--out", tmp_path / f"{seed}.pcap", "--labels", tmp_path / f"{seed}.csv")
    assert (tmp_path / "1.pcap").read_bytes() != (tmp_path / "2.pcap").read_bytes()


@pytest.mark.parametrize("profile", ["padding", "pad_shift+fragment+delay"])
def test_obfuscate_deobfuscate_round_trip(corpus, tmp_path, capsys, profile):
    obf, back = tmp_path / "o.pcap", tmp_path / "r.pcap"
    code, out, _ = run(capsys, "obfuscate", corpus / "synth.pcap", "--profile", profile,
                       "--seed", 5, "--out", obf)
    assert code == 0 and "Bytes Added" in out
    code, out, _ = run(capsys, "deobfuscate", obf, "--profile", profile, "--seed", 5, "--out", back)
    c = counts(out)
    assert code == 0 and c["checksum_mismatch"] == c["seq_desync"] == c["orphan_fragments"] == 0
    original = load_pcap(corpus / "synth.pcap").packets
    assert by_direction(load_pcap(back).packets) == by_direction(original)


def test_one_corrupted_packet(corpus, tmp_path, capsys):
    obf = tmp_path / "o.pcap"
    run(capsys, "obfuscate", corpus / "synth.pcap", "--profile", "padding", "--seed", 3, "--out", obf)
    cap = load_pcap(obf)
    first = cap.packets[0]
    at = chain_offset(len(first.payload), session_salt(3), 1)
    bad = bytearray(first.payload)
    bad[at + 3] ^= 0x21
    cap.packets[0] = first.with_payload(bytes(bad))
    save_pcap(cap, tmp_path / "bad.pcap")
    code, out, _ = run(capsys, "deobfuscate", tmp_path / "bad.pcap", "--profile", "padding",
                       "--seed", 3, "--out", tmp_path / "r.pcap")
    c = counts(out)
    assert code == 0 and c["checksum_mismatch"] == 1 and c["packets_out"] == c["packets_in"] - 1


def test_wrong_seed_reports_checksum_failures(corpus, tmp_path, capsys):
    obf = tmp_path / "o.pcap"
    run(capsys, "obfuscate", corpus / "synth.pcap", "--profile", "padding", "--seed", 3, "--out", obf)
    code, out, _ = run(capsys, "deobfuscate", obf, "--profile", "padding", "--seed", 4,
                       "--out", tmp_path / "r.pcap")
    c = counts(out)
    assert code == 0 and c["checksum_mismatch"] > 0.8 * c["packets_in"]


def test_missing_input_is_io_error(tmp_path, capsys):
    code, out, err = run(capsys, "obfuscate", tmp_path / "nope.pcap", "--profile", "padding",
                         "--out", tmp_path / "o.pcap")
    assert code == 1 and out == "" and "error" in err


def test_unknown_technique_is_profile_error(corpus, tmp_path, capsys):
    code, out, _ = run(capsys, "obfuscate", corpus / "synth.pcap", "--profile", "glitter",
                       "--out", tmp_path / "o.pcap")
    assert code == 3 and out == ""


def test_malformed_pcap_exit_2(tmp_path, capsys):
    (tmp_path / "junk.pcap").write_bytes(b"not a capture at all")
    code, _, _ = run(capsys, "obfuscate", tmp_path / "junk.pcap", "--profile", "padding",
                     "--out", tmp_path / "o.pcap")
    assert code == 2


def test_output_equal_to_input(corpus, capsys):
    path = corpus / "synth.pcap"
    code, _, _ = run(capsys, "obfuscate", path, "--profile", "padding", "--out", path)
    assert code == 2


def test_usage_errors(capsys):
    assert run(capsys)[0] == 2
    assert run(capsys, "teleport")[0] == 2


def test_extract_csv(corpus, capsys):
    code, out, _ = run(capsys, "extract", corpus / "synth.pcap", "--labels", corpus / "labels.csv")
    lines = out.splitlines()
    assert code == 0 and lines[0].endswith(",label")
    assert len(lines) - 1 == len(load_pcap(corpus / "synth.pcap").packets)


def test_attack_baseline_three_rows(corpus, capsys):
    code, out, _ = run(capsys, "attack", corpus / "synth.pcap", "--labels", corpus / "labels.csv",
                       "--classifiers", "knn,dt,rf")
    rows = [line for line in out.splitlines() if " | baseline | " in line]
    assert code == 0 and len(rows) == 3


def test_naive_without_obfuscated_input(corpus, capsys):
    code, out, _ = run(capsys, "attack", corpus / "synth.pcap", "--labels", corpus / "labels.csv",
                       "--plan", "naive")
    assert code == 2 and out == ""


def test_attack_csv_twins_match(corpus, tmp_path, capsys):
    for name in ("a.csv", "b.csv"):
        code, _, _ = run(capsys, "attack", corpus / "synth.pcap", "--labels", corpus / "labels.csv",
                         "--plan", "naive", "--profile", "padding+delay", "--classifiers", "knn,dt",
                         "--seed", 7, "--out", tmp_path / name)
        assert code == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_attack_with_obfuscated_capture(corpus, tmp_path, capsys):
    obf = tmp_path / "pad.pcap"
    run(capsys, "obfuscate", corpus / "synth.pcap", "--profile", "padding", "--out", obf)
    code, out, _ = run(capsys, "attack", corpus / "synth.pcap", obf, "--labels",
                       corpus / "labels.csv", "--plan", "naive", "--classifiers", "dt", "--k", 4)
    assert code == 0 and "| naive    | pad " in out


def test_single_class_labels_exit_4(corpus, tmp_path, capsys):
    (tmp_path / "one.csv").write_text("10.0.0.10,0\n")
    code, _, err = run(capsys, "attack", corpus / "synth.pcap", "--labels", tmp_path / "one.csv",
                       "--classifiers", "knn")
    assert code == 4 and "class" in err


def test_scenario_command(tmp_path, capsys):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[scenario tiny]\nplan = naive\nprofiles = const_pad\nclassifiers = dt\n"
                   "devices = 2\nflows_per_device = 10\n")
    code, out, _ = run(capsys, "scenario", cfg, "--out", tmp_path / "r.csv")
    assert code == 0 and "scenario: tiny" in out
    assert (tmp_path / "r.csv").read_text().startswith("scenario,classifier")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "camo", "synth", "--devices", "2", "--flows", "10",
                           "--out", str(tmp_path / "s.pcap"), "--labels", str(tmp_path / "l.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("packets ")
    assert isinstance(load_pcap(tmp_path / "s.pcap"), CaptureFile)
