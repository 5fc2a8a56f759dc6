"""camo command-line driver.

Exit codes: 0 ok, 1 I/O error, 2 malformed input or usage, 3 profile error,
4 degenerate labels. Reports go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from camo.engine import Deobfuscator
from camo.errors import (CamoError, ChecksumMismatch, DecodeError, DegenerateLabels,
                         OrphanFragment, ProfileError)
from camo.features import export_csv, extract_features, parse_labels
from camo.harness import (PLANS, AttackConfig, EvalReport, VirtualClock, parse_scenarios,
                          bundled_suite, render_report, replay, report_csv, run_attack, run_scenario,
                          synth_corpus, profile_tag)
from camo.models import parse_classifiers
from camo.packet import CaptureFile, Packet, load_pcap, save_pcap
from camo.profile import load_profile

EXIT_OK, EXIT_IO, EXIT_INPUT, EXIT_PROFILE, EXIT_LABELS = 0, 1, 2, 3, 4

log = logging.getLogger("camo")


class UsageError(Exception):
    pass


def _same_path(a, b) -> bool:
    return Path(a).resolve() == Path(b).resolve()


def _check_out(args):
    if args.out and _same_path(args.input, args.out):
        raise UsageError("output path must differ from input path")


def _profile(args):
    return load_profile(args.profile, args.seed)


def cmd_obfuscate(args) -> int:
    _check_out(args)
    profile = _profile(args)
    capture = load_pcap(args.input)
    out, report = replay(capture, profile, VirtualClock())
    save_pcap(out, args.out)
    sys.stdout.write(render_report(EvalReport(overhead=[report])))
    return EXIT_OK


def cmd_deobfuscate(args) -> int:
    _check_out(args)
    profile = _profile(args)
    capture = load_pcap(args.input)
    receiver = Deobfuscator(profile)
    restored: list[Packet] = []
    mismatches = desyncs = orphans = 0
    for index, p in enumerate(capture.packets):
        try:
            r = receiver.deobfuscate(p)
        except ChecksumMismatch as exc:
            mismatches += 1
            log.debug("packet %d: %s", index, exc)
            continue
        except DecodeError as exc:
            desyncs += 1
            log.debug("packet %d: %s", index, exc)
            continue
        if isinstance(r, Packet):
            restored.append(r)
    try:
        receiver.flush()
    except OrphanFragment as exc:
        orphans = len(exc.groups)
    save_pcap(CaptureFile(capture.link_type, restored), args.out)
    sys.stdout.write(f"packets_in {len(capture.packets)}\n"
                     f"packets_out {len(restored)}\n"
                     f"checksum_mismatch {mismatches}\n"
                     f"seq_desync {desyncs}\n"
                     f"orphan_fragments {orphans}\n")
    return EXIT_OK


def cmd_extract(args) -> int:
    _check_out(args)
    labels = parse_labels(Path(args.labels).read_text())
    data = extract_features(load_pcap(args.input).sort(), labels)
    if data.skipped:
        log.warning("%d packet(s) without a label or transport header skipped", data.skipped)
    if args.out:
        Path(args.out).write_bytes(export_csv(data))
    else:
        sys.stdout.write(export_csv(data).decode("ascii"))
    return EXIT_OK


def cmd_attack(args) -> int:
    if args.plan not in PLANS:
        raise UsageError(f"unknown plan {args.plan!r}")
    adaptive = args.plan in ("fine_tune", "incremental")
    if args.plan != "baseline" and not (args.obfuscated or args.profile):
        raise UsageError(f"plan {args.plan} needs an obfuscated capture or --profile")
    if len(args.obfuscated) > (2 if adaptive else 1):
        raise UsageError("too many obfuscated captures")
    if args.out and any(_same_path(args.out, p) for p in [args.input, *args.obfuscated]):
        raise UsageError("output path must differ from input paths")
    classifiers = tuple(parse_classifiers(args.classifiers))
    labels = parse_labels(Path(args.labels).read_text())
    capture = load_pcap(args.input).sort()
    original = extract_features(capture, labels)
    report = EvalReport(f"attack-{args.plan}", meta={"plan": args.plan, "seed": args.seed})

    def dataset(obf: CaptureFile, tag: str):
        return tag, extract_features(obf.sort(), labels)

    obfuscated, tests = [], []
    if args.obfuscated:
        obfuscated.append(dataset(load_pcap(args.obfuscated[0]), Path(args.obfuscated[0]).stem))
        if len(args.obfuscated) > 1:
            tests.append(dataset(load_pcap(args.obfuscated[1]), Path(args.obfuscated[1]).stem))
    elif args.profile:
        profile = load_profile(args.profile, args.seed)
        obf, overhead = replay(capture, profile)
        report.overhead.append(overhead)
        obfuscated.append(dataset(obf, profile_tag(profile)))
    config = AttackConfig(classifiers, args.seed, k_best=args.k, mlp_epochs=args.epochs)
    report.meta.update(mlp_epochs=args.epochs, k_best=args.k or len(original.feature_names))
    report.rows = run_attack(args.plan, original, config, obfuscated, tests)
    sys.stdout.write(render_report(report))
    if args.out:
        Path(args.out).write_text(report_csv(report), encoding="utf-8")
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.input is None:
        path, scenarios = Path("."), bundled_suite()
    else:
        path = Path(args.input)
        scenarios = parse_scenarios(path.read_text())
        if args.out and _same_path(args.input, args.out):
            raise UsageError("output path must differ from input path")
    csv_parts = []
    for i, s in enumerate(scenarios):
        if args.seed is not None:
            s.seed = args.seed
        report = run_scenario(s, path.parent)
        sys.stdout.write(("\n" if i else "") + render_report(report))
        csv_parts.append(report_csv(report))
    if args.out:
        Path(args.out).write_text("\n".join(csv_parts), encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    corpus = synth_corpus(args.seed, args.devices, args.flows)
    save_pcap(corpus.capture, args.out)
    Path(args.labels).write_text(corpus.labels_csv())
    sys.stdout.write(f"packets {len(corpus.capture.packets)}\nflows {len(corpus.labels)}\n"
                     f"devices {len(corpus.devices)}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camo", description="Traffic camouflage toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, help_text in (("obfuscate", cmd_obfuscate, "obfuscate a pcap"),
                                ("deobfuscate", cmd_deobfuscate, "restore an obfuscated pcap")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("input")
        p.add_argument("--profile", required=True, help="profile file or chain such as padding+delay")
        p.add_argument("--seed", type=int, default=None, help="override the profile seed")
        p.add_argument("--out", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("extract", help="per-packet feature CSV")
    p.add_argument("input")
    p.add_argument("--labels", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="run a traffic-analysis attack plan")
    p.add_argument("input", help="original capture")
    p.add_argument("obfuscated", nargs="*",
                   help="obfuscated capture; adaptive plans take a second one for testing")
    p.add_argument("--labels", required=True)
    p.add_argument("--plan", default="baseline", choices=PLANS)
    p.add_argument("--classifiers", default="knn,dt,rf,mlp")
    p.add_argument("--profile", help="obfuscate the original on the fly instead")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--k", type=int, default=None, help="features kept by ANOVA selection")
    p.add_argument("--epochs", type=int, default=330, help="network training epochs")
    p.add_argument("--out", help="CSV twin of the report")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("scenario", help="run every scenario in a file")
    p.add_argument("input", nargs="?", help="scenario file; the bundled suite when omitted")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="CSV twin of the reports")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("synth", help="write the synthetic IoT corpus")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--devices", type=int, default=5)
    p.add_argument("--flows", type=int, default=40, help="flows per device")
    p.add_argument("--out", default="synth.pcap")
    p.add_argument("--labels", default="labels.csv")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="camo: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ProfileError as exc:
        code, msg = EXIT_PROFILE, exc
    except DegenerateLabels as exc:
        code, msg = EXIT_LABELS, exc
    except (UsageError, CamoError, ValueError) as exc:
        code, msg = EXIT_INPUT, exc
    except OSError as exc:
        code, msg = EXIT_IO, exc
    print(f"camo: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
