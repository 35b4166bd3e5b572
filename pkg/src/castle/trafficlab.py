"""Flow-level traffic analysis: packet traces, KS statistic, histograms.

The lab reproduces the evaluation methodology at desk scale: capture a
session's datagram sizes and timings, chunk traces into windows, compare
feature distributions with the two-sample Kolmogorov-Smirnov statistic,
and measure goodput.  The naive-Bayes classifier is deliberately simple
plumbing, a stand-in for the published classifier suites that need human
gameplay captures we do not have.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

DIR_A_TO_B = "a>b"
DIR_B_TO_A = "b>a"

SIZE_BIN_BYTES = 16
TIME_BIN_MS = 10.0


class TraceError(Exception):
    pass


@dataclass(frozen=True)
class PacketTrace:
    """Ordered (timestamp_ms, size_bytes, direction) records."""

    records: tuple[tuple[float, int, str], ...]
    label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        last = None
        for ts, size, direction in self.records:
            if size <= 0:
                raise TraceError(f"non-positive packet size {size}")
            if direction not in (DIR_A_TO_B, DIR_B_TO_A):
                raise TraceError(f"unknown direction {direction!r}")
            if last is not None and ts < last:
                raise TraceError("timestamps must be non-decreasing")
            last = ts

    def __len__(self) -> int:
        return len(self.records)

    @property
    def duration_ms(self) -> float:
        if not self.records:
            return 0.0
        return self.records[-1][0] - self.records[0][0]

    def sizes(self) -> list[int]:
        return [size for _, size, _ in self.records]

    def inter_packet_ms(self) -> list[float]:
        ts = [t for t, _, _ in self.records]
        return [b - a for a, b in zip(ts, ts[1:])]


def ks_statistic(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sample KS statistic: sup |ECDF_a(x) - ECDF_b(x)|.

    Computed exactly by walking the merged sorted samples.
    """
    if not sample_a or not sample_b:
        raise ValueError("KS statistic needs non-empty samples")
    a = sorted(sample_a)
    b = sorted(sample_b)
    na, nb = len(a), len(b)
    i = j = 0
    best = 0.0
    while i < na and j < nb:
        x = a[i] if a[i] <= b[j] else b[j]
        while i < na and a[i] <= x:
            i += 1
        while j < nb and b[j] <= x:
            j += 1
        best = max(best, abs(i / na - j / nb))
    return best


def chunk_trace(trace: PacketTrace, window_s: float) -> list[PacketTrace]:
    """Split into half-open windows aligned to the trace start.

    Empty windows are dropped; record counts are conserved.
    """
    if window_s <= 0:
        raise ValueError("window must be positive")
    if not trace.records:
        return []
    start = trace.records[0][0]
    width = window_s * 1000.0
    buckets: dict[int, list] = {}
    for rec in trace.records:
        buckets.setdefault(int((rec[0] - start) // width), []).append(rec)
    return [
        PacketTrace(tuple(buckets[idx]), label=f"{trace.label}[{idx}]")
        for idx in sorted(buckets)
    ]


@dataclass(frozen=True)
class Histogram:
    bin_width: float
    counts: dict[int, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def merged_bins(self, other: "Histogram") -> list[int]:
        return sorted(set(self.counts) | set(other.counts))


def feature_histograms(trace: PacketTrace) -> tuple[Histogram, Histogram]:
    """(packet-size histogram, inter-packet-time histogram), fixed bins."""
    size_counts = Counter(size // SIZE_BIN_BYTES for size in trace.sizes())
    time_counts = Counter(int(gap // TIME_BIN_MS) for gap in trace.inter_packet_ms())
    return (
        Histogram(SIZE_BIN_BYTES, dict(size_counts)),
        Histogram(TIME_BIN_MS, dict(time_counts)),
    )


def nb_classify(
    train: dict[str, list[Histogram]],
    test: Histogram,
) -> tuple[str, float]:
    """Multinomial naive Bayes with add-one smoothing over histogram bins.

    Returns (label, posterior score of that label).  Stand-in classifier:
    enough to sanity-check separability, nothing more.
    """
    import math

    if not train or any(not hists for hists in train.values()):
        raise ValueError("need at least one training histogram per label")
    bins: set[int] = set(test.counts)
    for hists in train.values():
        for h in hists:
            bins.update(h.counts)
    bin_list = sorted(bins)
    log_scores: dict[str, float] = {}
    for label, hists in train.items():
        totals = Counter()
        for h in hists:
            totals.update(h.counts)
        denom = sum(totals.values()) + len(bin_list)
        log_p = math.log(1.0 / len(train))
        for b in bin_list:
            p = (totals.get(b, 0) + 1) / denom
            log_p += test.counts.get(b, 0) * math.log(p)
        log_scores[label] = log_p
    best = max(log_scores, key=lambda k: log_scores[k])
    peak = log_scores[best]
    norm = sum(math.exp(v - peak) for v in log_scores.values())
    return best, 1.0 / norm


def throughput(payload_bytes: int, elapsed_s: float) -> float:
    """Goodput in bytes/second; zero payload is a valid 0 B/s measurement."""
    if payload_bytes < 0:
        raise ValueError("negative payload")
    if elapsed_s <= 0:
        raise ValueError("cannot measure throughput over a zero-length interval")
    return payload_bytes / elapsed_s


def trace_throughput(trace: PacketTrace, payload_bytes: int) -> float:
    if trace.duration_ms <= 0:
        raise ValueError("cannot measure throughput over a zero-length trace")
    return throughput(payload_bytes, trace.duration_ms / 1000.0)


# -- trace files -------------------------------------------------------------


def save_trace(trace: PacketTrace, path) -> None:
    """Line format: `<timestamp_ms> <size> <dir>` with dir in {a>b, b>a}."""
    with open(path, "w", encoding="ascii") as fh:
        for ts, size, direction in trace.records:
            fh.write(f"{ts:.3f} {size} {direction}\n")


def load_trace(path, label: str = "") -> PacketTrace:
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise TraceError(f"{path}:{lineno}: expected 3 fields")
            try:
                records.append((float(parts[0]), int(parts[1]), parts[2]))
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: {exc}") from None
    return PacketTrace(tuple(records), label=label or str(path))


def from_recorder_records(
    records: Iterable[tuple[float, int, str]], label: str = ""
) -> PacketTrace:
    return PacketTrace(tuple(records), label=label)
