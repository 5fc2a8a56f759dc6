"""End-to-end experiments on a virtual clock.

A capture is replayed through an obfuscation session, the result is checked
by de-obfuscating it again, features are extracted from both sides of the
wire and the attack plans are run against them.
"""

from __future__ import annotations

import configparser
import importlib.resources
import io
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from camo.engine import Deobfuscator, Obfuscator
from camo.errors import CamoError, DegenerateLabels, ScenarioError
from camo.features import Dataset, Preprocessor, extract_features, parse_labels
from camo.header import TechniqueId as T
from camo.models import MODEL_KINDS, parse_classifiers
from camo.models.evaluation import (METRICS, MetricsReport, compute_metrics, confusion_matrix,
                                    stratified_kfold)
from camo.models.mlp import MlpModel, fine_tune, half_and_half, incremental_train
from camo.packet import TCP, UDP, CaptureFile, FlowKey, Packet, flow_key, load_pcap
from camo.profile import ObfuscationProfile, adaptive_pair, load_profile

log = logging.getLogger(__name__)

PLANS = ("baseline", "naive", "incremental", "fine_tune")
DASH = "—"


class VirtualClock:
    """Simulated time in microseconds; never moves backwards."""

    def __init__(self, start_us: int = 0):
        self.now_us = start_us

    def advance_to(self, ts_us: int) -> int:
        if ts_us > self.now_us:
            self.now_us = ts_us
        return self.now_us

    @property
    def now(self) -> tuple[int, int]:
        return divmod(self.now_us, 1_000_000)


@dataclass
class OverheadReport:
    technique: str
    packets: int = 0
    emitted: int = 0
    skipped: int = 0
    bytes_original: int = 0
    bytes_obfuscated: int = 0
    wall_ns: int = 0
    cpu_ns: int = 0
    latency_us: int = 0

    def _mean(self, total, scale=1.0):
        return total / scale / self.packets if self.packets else None

    @property
    def bytes_added(self) -> Optional[float]:
        return self._mean(self.bytes_obfuscated - self.bytes_original)

    @property
    def time_per_packet(self) -> Optional[float]:
        return self._mean(self.wall_ns, 1e9)

    @property
    def cpu_per_packet(self) -> Optional[float]:
        return self._mean(self.cpu_ns, 1e9)

    @property
    def latency(self) -> Optional[float]:
        return self._mean(self.latency_us, 1e6)


def replay(capture: CaptureFile, profile: ObfuscationProfile,
           clock: Optional[VirtualClock] = None) -> tuple[CaptureFile, OverheadReport]:
    """Obfuscate every packet in order; returns the time-sorted wire capture."""
    clock = clock or VirtualClock()
    session = Obfuscator(profile)
    report = OverheadReport(profile.label)
    out: list[Packet] = []
    for index, p in enumerate(capture.packets):
        clock.advance_to(p.ts_us)
        t0, c0 = time.perf_counter_ns(), time.process_time_ns()
        try:
            emitted = session.obfuscate(p)
        except CamoError as exc:
            raise ScenarioError(f"packet {index}: {exc}") from exc
        report.wall_ns += time.perf_counter_ns() - t0
        report.cpu_ns += time.process_time_ns() - c0
        report.packets += 1
        report.emitted += len(emitted)
        report.bytes_original += len(p.payload)
        for q in emitted:
            report.bytes_obfuscated += len(q.payload)
            clock.advance_to(q.ts_us)
            report.latency_us += q.ts_us - p.ts_us
        out.extend(emitted)
    report.skipped = session.skipped
    return CaptureFile(capture.link_type, out).sort(), report


def verify_round_trip(original: CaptureFile, obfuscated: CaptureFile,
                      profile: ObfuscationProfile) -> int:
    """De-obfuscate ``obfuscated`` and compare payloads flow by flow.

    Returns the number of packets recovered; raises ScenarioError on any
    difference.
    """
    receiver = Deobfuscator(profile)
    recovered: dict[tuple, list[bytes]] = {}
    for q in obfuscated.packets:
        r = receiver.deobfuscate(q)
        if isinstance(r, Packet):
            recovered.setdefault(r.direction_key(), []).append(r.payload)
    receiver.flush()
    expected: dict[tuple, list[bytes]] = {}
    for p in original.packets:
        expected.setdefault(p.direction_key(), []).append(p.payload)
    if recovered != expected:
        bad = sum(recovered.get(k) != v for k, v in expected.items())
        raise ScenarioError(f"round-trip check failed for {bad} direction(s) under {profile.label}")
    return sum(map(len, recovered.values()))


# -- synthetic corpus -----------------------------------------------------------

@dataclass(frozen=True)
class DeviceSignature:
    name: str
    addr: bytes
    dst_port: int
    protocol: int
    len_mean: float
    len_sd: float
    resp_mean: float
    gap_mean: float


_PORTS = (443, 8883, 443, 1883, 8883)
_PROTOS = (TCP, TCP, UDP, TCP, UDP)
_GAPS = (0.4, 0.7, 0.5, 0.9, 0.6)


def device_signatures(num_devices: int = 5) -> list[DeviceSignature]:
    if num_devices < 2:
        raise ValueError("need at least two device classes")
    out = []
    for d in range(num_devices):
        out.append(DeviceSignature(
            name=f"device{d}",
            addr=bytes((10, 0, d // 200, 10 + d % 200)),
            dst_port=_PORTS[d % 5],
            protocol=_PROTOS[d % 5],
            len_mean=48.0 + 72.0 * d,
            len_sd=6.0,
            resp_mean=40.0 + 72.0 * d,
            gap_mean=_GAPS[d % 5],
        ))
    return out


@dataclass
class SynthCorpus:
    capture: CaptureFile
    labels: dict[FlowKey, int]
    devices: list[DeviceSignature]

    def label_fn(self):
        labels = self.labels
        return lambda p: labels.get(flow_key(p))

    def labels_csv(self) -> str:
        lines = ["flow,label"] + [f"{k},{v}" for k, v in sorted(self.labels.items())]
        return "\n".join(lines) + "\n"


def synth_corpus(seed: int = 42, num_devices: int = 5, flows_per_device: int = 40,
                 response_prob: float = 0.3) -> SynthCorpus:
    """Labelled IoT-like traffic with per-device length, timing and port signatures."""
    rng = np.random.default_rng(seed)
    devices = device_signatures(num_devices)
    base = 1_700_000_000 * 1_000_000
    packets: list[Packet] = []
    labels: dict[FlowKey, int] = {}
    used_ports: set = set()
    for d, dev in enumerate(devices):
        server = bytes((93, 184, d % 3, 1))
        for _ in range(flows_per_device):
            sport = int(rng.integers(49152, 65536))
            while (d, sport) in used_ports:
                sport = int(rng.integers(49152, 65536))
            used_ports.add((d, sport))
            ts = base + int(rng.uniform(0, 3600e6))
            for _ in range(int(rng.integers(8, 25))):
                if rng.random() < response_prob:
                    mean = dev.resp_mean
                    src, dst, sp, dp = server, dev.addr, dev.dst_port, sport
                else:
                    mean = dev.len_mean
                    src, dst, sp, dp = dev.addr, server, sport, dev.dst_port
                # clipped at 3 SD so device length ranges never overlap
                n = rng.normal(mean, dev.len_sd)
                n = int(round(min(max(n, mean - 3 * dev.len_sd), mean + 3 * dev.len_sd)))
                packets.append(Packet(ts // 1_000_000, ts % 1_000_000, src, dst, sp, dp,
                                      dev.protocol, rng.bytes(n)))
                ts += max(1, int(rng.exponential(dev.gap_mean) * 1e6))
            labels[flow_key(packets[-1])] = d
    return SynthCorpus(CaptureFile(1, packets).sort(), labels, devices)


# -- attack plans -------------------------------------------------------------

@dataclass
class EvalRow:
    classifier: str
    plan: str
    technique: str
    metrics: MetricsReport


@dataclass
class EvalReport:
    name: str = ""
    rows: list[EvalRow] = field(default_factory=list)
    overhead: list[OverheadReport] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def find(self, classifier, plan, technique=None) -> EvalRow:
        for row in self.rows:
            if row.classifier == classifier and row.plan == plan and technique in (None, row.technique):
                return row
        raise KeyError((classifier, plan, technique))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CAMO_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    workers = min(_threads(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def _make(kind: str, seed: int, mlp_epochs: int):
    if kind == "mlp":
        return MlpModel(epochs=mlp_epochs, seed=seed)
    return MODEL_KINDS[kind]()


@dataclass
class AttackConfig:
    classifiers: tuple = ("knn", "dt", "rf", "mlp")
    seed: int = 42
    folds: int = 10
    k_best: Optional[int] = None
    mlp_epochs: int = 330
    tune_epochs: int = 50
    tune_lr: float = 1e-4
    incremental_lr: float = 1e-3


def run_attack(plan: str, original: Dataset, config: AttackConfig,
               obfuscated: Optional[list[tuple[str, Dataset]]] = None,
               tests: Optional[list[tuple[str, Dataset]]] = None) -> list[EvalRow]:
    """Cross-validated attack.

    ``baseline`` trains and tests on original rows. ``naive`` trains on
    original rows and also tests on each obfuscated dataset. ``fine_tune`` and
    ``incremental`` adapt a network pre-trained on original rows using the
    training folds of ``obfuscated[i]`` and test on ``tests[i]``.
    """
    if plan not in PLANS:
        raise ScenarioError(f"unknown plan {plan!r}")
    if len(np.unique(original.y)) < 2:
        raise DegenerateLabels("the attack needs at least two device classes")
    obfuscated = obfuscated or []
    if plan != "baseline" and not obfuscated:
        raise ScenarioError(f"plan {plan!r} needs obfuscated traffic")
    adaptive = plan in ("fine_tune", "incremental")
    tests = (tests or obfuscated) if adaptive else obfuscated
    classes = np.unique(original.y)
    seed = config.seed
    orig_folds = stratified_kfold(original.y, config.folds, seed)
    obf_folds = [stratified_kfold(d.y, config.folds, seed) for _, d in obfuscated]
    test_folds = [stratified_kfold(d.y, config.folds, seed) for _, d in tests]
    kinds = list(config.classifiers)
    if adaptive:
        skipped = [k for k in kinds if k != "mlp"]
        if skipped:
            log.info("plan %s retrains the neural network only; skipping %s", plan, skipped)
        kinds = ["mlp"]

    def run_fold(job):
        kind, f = job
        train_idx, test_idx = orig_folds[f]
        pre = Preprocessor(config.k_best).fit(original.X[train_idx], original.y[train_idx])
        model = _make(kind, seed + f, config.mlp_epochs)
        if kind == "mlp":
            model.fit(pre.transform(original.X[train_idx]), original.y[train_idx], classes=classes)
        else:
            model.fit(pre.transform(original.X[train_idx]), original.y[train_idx])

        def cm(m, data, idx):
            return confusion_matrix(data.y[idx], m.predict(pre.transform(data.X[idx])), classes)

        out = {("baseline", "none"): cm(model, original, test_idx)}
        if plan == "baseline":
            return out
        for i, (label, data) in enumerate(tests):
            out[("naive", label)] = cm(model, data, test_folds[i][f][1])
        if adaptive:
            rng = np.random.default_rng(seed * 1000 + f)
            for i, (label, data) in enumerate(obfuscated):
                obf_train = obf_folds[i][f][0]
                X_a = pre.transform(data.X[obf_train])
                if plan == "fine_tune":
                    tuned = fine_tune(model, X_a, data.y[obf_train], config.tune_epochs, config.tune_lr)
                else:
                    X_mix, y_mix = half_and_half(pre.transform(original.X[train_idx]),
                                                 original.y[train_idx], X_a, data.y[obf_train], rng)
                    tuned = incremental_train(model, X_mix, y_mix, config.tune_epochs,
                                              config.incremental_lr)
                out[(plan, tests[i][0])] = cm(tuned, tests[i][1], test_folds[i][f][1])
        return out

    jobs = [(kind, f) for kind in kinds for f in range(config.folds)]
    results = dict(zip(jobs, _map(run_fold, jobs)))
    rows = []
    for kind in kinds:
        per_fold = [results[(kind, f)] for f in range(config.folds)]
        for key in per_fold[0]:
            rows.append(EvalRow(kind, key[0], key[1], compute_metrics([r[key] for r in per_fold])))
        if adaptive and len(tests) > 1:
            pooled = [r[(plan, label)] for r in per_fold for label, _ in tests]
            rows.append(EvalRow(kind, plan, "avg", compute_metrics(pooled)))
    return rows


# -- scenarios ----------------------------------------------------------------

@dataclass
class Scenario:
    name: str
    plan: str = "baseline"
    capture: str = "synth"
    labels: Optional[str] = None
    profiles: tuple = ()
    profiles_b: tuple = ()
    classifiers: tuple = ("knn", "dt", "rf", "mlp")
    seed: int = 42
    k_best: Optional[int] = None
    folds: int = 10
    mlp_epochs: int = 100
    tune_epochs: int = 50
    devices: int = 5
    flows_per_device: int = 40

    def __post_init__(self):
        if self.plan not in PLANS:
            raise ScenarioError(f"scenario {self.name}: unknown plan {self.plan!r}")
        if self.plan != "baseline" and not self.profiles:
            raise ScenarioError(f"scenario {self.name}: plan {self.plan} needs profiles")
        if self.profiles_b and len(self.profiles_b) != len(self.profiles):
            raise ScenarioError(f"scenario {self.name}: profiles_b must pair with profiles")

    def resolve_profiles(self) -> list[tuple[ObfuscationProfile, ObfuscationProfile]]:
        """(training, test) profile pairs with seeds derived from the scenario seed."""
        pairs = []
        for i, spec in enumerate(self.profiles):
            a = load_profile(spec, self.seed + 1 + i)
            if self.profiles_b:
                b = load_profile(self.profiles_b[i], self.seed + 101 + i)
            elif len(a.techniques) == 1:
                b = adaptive_pair(a.techniques[0], self.seed + 100 + i)[1]
            else:
                b = a.with_seed(self.seed + 101 + i)
            pairs.append((a, b))
        return pairs


def _split(value: str) -> tuple:
    return tuple(v.strip() for v in value.replace(";", "\n").splitlines() if v.strip())


def parse_scenarios(text: str) -> list[Scenario]:
    """``[scenario NAME]`` sections of ``key = value`` pairs."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from None
    out = []
    ints = ("seed", "k_best", "folds", "mlp_epochs", "tune_epochs", "devices", "flows_per_device")
    for section in parser.sections():
        kind, _, name = section.partition(" ")
        if kind != "scenario" or not name.strip():
            raise ScenarioError(f"unexpected section [{section}]")
        kwargs: dict = {"name": name.strip()}
        for key, value in parser[section].items():
            if key in ints:
                try:
                    kwargs[key] = int(value)
                except ValueError:
                    raise ScenarioError(f"[{section}] {key}: not an integer") from None
            elif key in ("profiles", "profiles_b"):
                kwargs[key] = _split(value)
            elif key == "classifiers":
                try:
                    kwargs[key] = tuple(parse_classifiers(value))
                except CamoError as exc:
                    raise ScenarioError(f"[{section}] {exc}") from None
            elif key in ("plan", "capture", "labels"):
                kwargs[key] = value.strip()
            else:
                raise ScenarioError(f"[{section}] unknown key {key!r}")
        out.append(Scenario(**kwargs))
    return out


def bundled_suite() -> list[Scenario]:
    """The default scenario suite shipped with the package."""
    text = importlib.resources.files("camo").joinpath("data/suite.ini").read_text()
    return parse_scenarios(text)


def _load_inputs(s: Scenario, base: Path):
    if s.capture == "synth":
        corpus = synth_corpus(s.seed, s.devices, s.flows_per_device)
        return corpus.capture, corpus.label_fn()
    capture = load_pcap(base / s.capture).sort()
    if not s.labels:
        raise ScenarioError(f"scenario {s.name}: a pcap capture needs a labels file")
    return capture, parse_labels((base / s.labels).read_text())


def run_scenario(s: Scenario, base: Path = Path(".")) -> EvalReport:
    capture, label_fn = _load_inputs(s, Path(base))
    original = extract_features(capture, label_fn)
    report = EvalReport(s.name, meta={
        "plan": s.plan, "seed": s.seed, "folds": s.folds, "mlp_epochs": s.mlp_epochs,
        "k_best": s.k_best or len(original.feature_names)})
    obfuscated, tests = [], []
    for a, b in s.resolve_profiles():
        wanted = [a, b] if s.plan in ("fine_tune", "incremental") else [a]
        for profile, bucket in zip(wanted, (obfuscated, tests)):
            obf, overhead = replay(capture, profile)
            verify_round_trip(capture, obf, profile)
            report.overhead.append(overhead)
            bucket.append((profile_tag(profile), extract_features(obf, label_fn)))
    if s.plan in ("fine_tune", "incremental"):
        report.meta.update(tune_epochs=s.tune_epochs,
                           tune_lr=1e-4 if s.plan == "fine_tune" else 1e-3,
                           mix="50/50 original+obfuscated" if s.plan == "incremental" else "obfuscated")
    config = AttackConfig(s.classifiers, s.seed, s.folds, s.k_best, s.mlp_epochs, s.tune_epochs)
    report.rows = run_attack(s.plan, original, config, obfuscated, tests)
    return report


def profile_tag(p: ObfuscationProfile) -> str:
    parts = [p.label]
    if any(t in (T.PADDING, T.PAD_XOR, T.PAD_SHIFT) for t in p.body):
        parts.append(f"pad{p.pad_min}-{p.pad_max}")
    if p.delays:
        parts.append(f"delay{p.delay_min_us // 1000}-{p.delay_max_us // 1000}ms")
    return ":".join(parts)


# -- rendering ----------------------------------------------------------------

METRIC_HEADERS = ("Classifier", "Plan", "Technique", "Accuracy (%)", "Precision (%)",
                  "Recall (%)", "F1 (%)")
OVERHEAD_HEADERS = ("Technique", "Packets", "Skipped", "Bytes Added", "Latency (s)",
                    "Execution Time (s)", "CPU Time (s, best effort)")


def format_metric(m) -> str:
    return (f"{100 * m.mean:.2f} ± {100 * m.sd:.2f} "
            f"({100 * m.ci_low:.2f} - {100 * m.ci_high:.2f})")


def _fmt(value, spec) -> str:
    return DASH if value is None else format(value, spec)


def _table(headers, rows) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(headers, *rows)]
    line = lambda cells: " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(headers), sep, *map(line, rows)]) + "\n"


def render_report(report: EvalReport, timing: bool = True) -> str:
    out = io.StringIO()
    if report.name:
        out.write(f"scenario: {report.name}\n")
    if report.meta:
        out.write(" ".join(f"{k}={v}" for k, v in report.meta.items()) + "\n")
    if report.rows or not report.overhead:
        out.write(_table(METRIC_HEADERS, [
            (r.classifier, r.plan, r.technique, *(format_metric(r.metrics[m]) for m in METRICS))
            for r in report.rows]))
    if report.overhead:
        if report.rows:
            out.write("\n")
        headers = OVERHEAD_HEADERS if timing else OVERHEAD_HEADERS[:5]
        rows = []
        for o in report.overhead:
            row = [o.technique, o.packets, o.skipped, _fmt(o.bytes_added, ".3f"),
                   _fmt(o.latency, ".6f")]
            if timing:
                row += [_fmt(o.time_per_packet, ".6f"), _fmt(o.cpu_per_packet, ".6f")]
            rows.append(row)
        out.write(_table(headers, rows))
    return out.getvalue()


def report_csv(report: EvalReport) -> str:
    """Machine-readable twin of the report; wall-clock columns left out."""
    out = io.StringIO()
    cols = [f"{m}_{s}" for m in METRICS for s in ("mean", "sd", "ci_low", "ci_high")]
    out.write(",".join(["scenario", "classifier", "plan", "technique", *cols]) + "\n")
    for r in report.rows:
        vals = [f"{getattr(r.metrics[m], s):.6f}" for m in METRICS
                for s in ("mean", "sd", "ci_low", "ci_high")]
        out.write(",".join([report.name, r.classifier, r.plan, r.technique, *vals]) + "\n")
    if report.overhead:
        out.write("\nscenario,technique,packets,emitted,skipped,bytes_added,latency_s\n")
        for o in report.overhead:
            out.write(f"{report.name},{o.technique},{o.packets},{o.emitted},{o.skipped},"
                      f"{_fmt(o.bytes_added, '.6f')},{_fmt(o.latency, '.6f')}\n")
    return out.getvalue()
