"""The adversary's view: per-packet flow features, scaling and ANOVA selection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from camo.errors import BadK, DegenerateLabels, EmptyDataset, MalformedCsv
from camo.packet import CaptureFile, FlowKey, Packet, flow_key, ip

FEATURE_NAMES = (
    "delta_time",
    "dst_port",
    "pkts_per_sec",
    "pkt_len",
    "pkts_in_flow",
    "conversation_len",
    "total_pkt_len",
    "segment_len",
    "stream_time",
    "flow_time",
)
TIMING_FEATURES = ("delta_time", "pkts_per_sec", "stream_time", "flow_time")

LabelFn = Callable[[Packet], Optional[int]]


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple = FEATURE_NAMES
    skipped: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(-1, len(self.feature_names))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} rows but {len(self.y)} labels")

    def __len__(self):
        return len(self.y)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_names.index(name)]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.feature_names)


def extract_features(capture: CaptureFile, label_fn: LabelFn) -> Dataset:
    """One row per TCP/UDP packet, grouped by flow (flows in key order).

    Rows whose label is None count as missing records and are dropped.
    """
    flows: dict[FlowKey, list[Packet]] = {}
    skipped = 0
    for p in capture.packets:
        if not p.is_transport:
            skipped += 1
            continue
        flows.setdefault(flow_key(p), []).append(p)

    rows, labels = [], []
    for key in sorted(flows):
        pkts = sorted(flows[key], key=lambda p: p.ts_us)
        start, end = pkts[0].ts_us, pkts[-1].ts_us
        flow_time = (end - start) / 1e6
        total = 0
        prev = start
        for i, p in enumerate(pkts, 1):
            label = label_fn(p)
            stream = (p.ts_us - start) / 1e6
            total += p.wire_len
            row = (
                (p.ts_us - prev) / 1e6,
                p.dst_port,
                i / stream if stream > 0 else 0.0,
                p.wire_len,
                i,
                len(pkts),
                total,
                len(p.payload),
                stream,
                flow_time,
            )
            prev = p.ts_us
            if label is None:
                skipped += 1
                continue
            rows.append(row)
            labels.append(label)
    return Dataset(np.array(rows, dtype=np.float64).reshape(-1, len(FEATURE_NAMES)),
                   np.array(labels, dtype=np.int64), FEATURE_NAMES, skipped)


# -- labels -------------------------------------------------------------------

def parse_labels(text: str) -> LabelFn:
    """Label map from ``key,label`` CSV; keys are flow keys or IPv4 addresses.

    Flow-key entries win over address entries; for addresses the source is
    tried before the destination.
    """
    by_flow: dict[FlowKey, int] = {}
    by_addr: dict[bytes, int] = {}
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, 1):
        if not row or (lineno == 1 and row[-1].strip() == "label"):
            continue
        if len(row) != 2:
            raise MalformedCsv(f"labels line {lineno}: expected 2 columns")
        key, value = row[0].strip(), row[1].strip()
        try:
            label = int(value)
            if "-" in key and "/" in key:
                by_flow[FlowKey.parse(key)] = label
            else:
                by_addr[ip(key)] = label
        except (ValueError, OSError):
            raise MalformedCsv(f"labels line {lineno}: bad entry {row!r}") from None

    def label_fn(p: Packet) -> Optional[int]:
        hit = by_flow.get(flow_key(p))
        if hit is None:
            hit = by_addr.get(p.src_addr, by_addr.get(p.dst_addr))
        return hit

    return label_fn


# -- z-score ------------------------------------------------------------------

@dataclass
class ZScoreModel:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray = field(init=False)

    def __post_init__(self):
        self.constant = self.std == 0


def zscore_fit(X) -> ZScoreModel:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise EmptyDataset("z-score fitting needs at least 2 rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # exact zero for columns with a single distinct value
    std[np.ptp(X, axis=0) == 0] = 0.0
    return ZScoreModel(mean, std)


def zscore_apply(model: ZScoreModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    safe = np.where(model.constant, 1.0, model.std)
    return np.where(model.constant, 0.0, (X - model.mean) / safe)


# -- ANOVA F-test -------------------------------------------------------------

def anova_f_scores(X, y) -> np.ndarray:
    """One-way ANOVA F statistic per column; ``inf`` for perfectly separated columns."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    n, k = len(y), len(classes)
    if k < 2:
        raise DegenerateLabels("ANOVA needs at least two classes")
    if n <= k:
        raise DegenerateLabels(f"{n} rows cannot support {k} classes")
    grand = X.mean(axis=0)
    between = np.zeros(X.shape[1])
    within = np.zeros(X.shape[1])
    for c in classes:
        g = X[y == c]
        gm = g.mean(axis=0)
        between += len(g) * (gm - grand) ** 2
        dev = ((g - gm) ** 2).sum(axis=0)
        within += np.where(np.ptp(g, axis=0) == 0, 0.0, dev)
    between[np.ptp(X, axis=0) == 0] = 0.0
    ms_between = between / (k - 1)
    ms_within = within / (n - k)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = ms_between / ms_within
    zero_within = ms_within == 0
    f[zero_within] = np.where(ms_between[zero_within] > 0, np.inf, 0.0)
    return f


def select_k_best(scores, k: int) -> list[int]:
    scores = list(scores)
    if not 1 <= k <= len(scores):
        raise BadK(f"k={k} outside 1..{len(scores)}")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return sorted(order[:k])


@dataclass
class Preprocessor:
    """z-score scaling followed by ANOVA top-k selection, fitted on training rows."""

    k: Optional[int] = None
    scaler: Optional[ZScoreModel] = None
    selected: Optional[list] = None
    scores: Optional[np.ndarray] = None

    def fit(self, X, y) -> "Preprocessor":
        self.scaler = zscore_fit(X)
        Z = zscore_apply(self.scaler, X)
        self.scores = anova_f_scores(Z, y)
        self.selected = select_k_best(self.scores, self.k or Z.shape[1])
        return self

    def transform(self, X) -> np.ndarray:
        return zscore_apply(self.scaler, X)[:, self.selected]


# -- CSV ----------------------------------------------------------------------

def export_csv(dataset: Dataset) -> bytes:
    out = io.StringIO()
    out.write(",".join((*dataset.feature_names, "label")) + "\n")
    for row, label in zip(dataset.X, dataset.y):
        out.write(",".join(f"{v:.6f}" for v in row) + f",{int(label)}\n")
    return out.getvalue().encode("ascii")


def import_csv(data: bytes) -> Dataset:
    try:
        lines = data.decode("ascii").splitlines()
    except UnicodeDecodeError:
        raise MalformedCsv("CSV must be ASCII") from None
    if not lines:
        raise MalformedCsv("missing header row")
    header = lines[0].split(",")
    if header[-1] != "label" or len(header) < 2:
        raise MalformedCsv("last header column must be 'label'")
    names = tuple(header[:-1])
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise MalformedCsv(f"line {lineno}: {len(cells)} columns, expected {len(header)}")
        try:
            rows.append([float(c) for c in cells[:-1]])
            labels.append(int(cells[-1]))
        except ValueError:
            raise MalformedCsv(f"line {lineno}: non-numeric cell") from None
    return Dataset(np.array(rows, dtype=np.float64).reshape(-1, len(names)),
                   np.array(labels, dtype=np.int64), names)
