"""Event logs: parsing, durations, vocabulary, encoding and prefix/suffix pairs."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

SOS = "[SOS]"
EOS = "[EOS]"
SOS_ID = 0
EOS_ID = 1

SECONDS_PER_DAY = 86400.0
DEFAULT_SCHEMA = ("case_id", "activity", "timestamp")


class LogFormatError(ValueError):
    """Raised for malformed event-log input."""


class UnknownActivityError(KeyError):
    pass


@dataclass(frozen=True)
class Event:
    """One step of a trace.  ``duration`` is in days (0 until derived)."""

    activity: str
    timestamp: datetime
    duration: float = 0.0


@dataclass(frozen=True)
class Trace:
    case_id: str
    events: tuple[Event, ...]

    @property
    def start_time(self) -> datetime:
        return self.events[0].timestamp

    def __len__(self) -> int:
        return len(self.events)

    @property
    def activities(self) -> list[str]:
        return [e.activity for e in self.events]

    @property
    def durations(self) -> list[float]:
        return [e.duration for e in self.events]

    @property
    def cycle_time(self) -> float:
        return (self.events[-1].timestamp - self.events[0].timestamp).total_seconds() / SECONDS_PER_DAY


@dataclass(frozen=True)
class EventLog:
    traces: tuple[Trace, ...]

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)

    @property
    def activities(self) -> set[str]:
        return {e.activity for t in self.traces for e in t.events}


# -- parsing -----------------------------------------------------------------


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    # naive and aware stamps must be comparable; aware ones are folded to naive UTC
    if ts.tzinfo is not None:
        ts = (ts - ts.utcoffset()).replace(tzinfo=None)
    return ts


def read_csv(source, schema: Sequence[str] = DEFAULT_SCHEMA) -> EventLog:
    """Parse a ``case_id,activity,timestamp`` CSV into an :class:`EventLog`.

    ``source`` is a path or an open text stream.  Events are sorted by
    timestamp within each case (stable, so ties keep file order), and traces
    by the timestamp of their first event.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_csv(fh, schema)

    case_col, act_col, ts_col = schema
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise LogFormatError("empty event log") from None
    header = [h.strip() for h in header]
    missing = [c for c in schema if c not in header]
    if missing:
        raise LogFormatError(f"line 1: missing columns {missing}")
    idx = [header.index(c) for c in (case_col, act_col, ts_col)]

    cases: dict[str, list[Event]] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise LogFormatError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        case_id, activity, stamp = (row[i].strip() for i in idx)
        if not case_id or not activity:
            raise LogFormatError(f"line {line}: empty case id or activity")
        try:
            ts = _parse_timestamp(stamp)
        except ValueError:
            raise LogFormatError(f"line {line}: unparseable timestamp {stamp!r}") from None
        cases.setdefault(case_id, []).append(Event(activity, ts))

    if not cases:
        raise LogFormatError("empty event log")
    traces = [Trace(cid, tuple(sorted(evs, key=lambda e: e.timestamp))) for cid, evs in cases.items()]
    traces.sort(key=lambda t: (t.start_time, t.case_id))
    return EventLog(tuple(traces))


parse_csv = read_csv


def write_csv(log: EventLog, target) -> None:
    """Write a log in the ``case_id,activity,timestamp`` schema."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_csv(log, fh)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(DEFAULT_SCHEMA)
    for trace in log:
        for e in trace.events:
            writer.writerow([trace.case_id, e.activity, e.timestamp.isoformat()])


def derive_durations(log: EventLog) -> EventLog:
    """Set each event's duration to the gap (days) since the previous event.

    The first event of a trace gets 0, so durations sum to the cycle time.
    """
    traces = []
    for trace in log:
        events, prev = [], None
        for e in trace.events:
            gap = 0.0 if prev is None else (e.timestamp - prev).total_seconds() / SECONDS_PER_DAY
            events.append(Event(e.activity, e.timestamp, gap))
            prev = e.timestamp
        traces.append(Trace(trace.case_id, tuple(events)))
    return EventLog(tuple(traces))


def temporal_split(log: EventLog) -> tuple[EventLog, EventLog, EventLog]:
    """Chronological 70/10/20 split into train, validation and test logs."""
    n = len(log)
    if n < 10:
        raise ValueError(f"temporal split needs at least 10 traces, got {n}")
    # integer arithmetic: floor(0.7 * 90) in floats is 62
    n_train = 7 * n // 10
    n_val = n // 10
    t = log.traces
    return EventLog(t[:n_train]), EventLog(t[n_train:n_train + n_val]), EventLog(t[n_train + n_val:])


# -- vocabulary and encoding -------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    """Activity labels with ``[SOS]`` at 0 and ``[EOS]`` at 1."""

    labels: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.labels[:2] != (SOS, EOS):
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in vocabulary")
        object.__setattr__(self, "_index", {a: i for i, a in enumerate(self.labels)})

    @classmethod
    def from_log(cls, train: EventLog) -> Vocabulary:
        names = train.activities if len(train) else set()
        if not names:
            raise ValueError("cannot build a vocabulary from an empty log")
        clash = names & {SOS, EOS}
        if clash:
            raise ValueError(f"activity labels collide with reserved tokens: {sorted(clash)}")
        return cls((SOS, EOS, *sorted(names)))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def size(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnknownActivityError(f"activity {label!r} not in training vocabulary") from None

    def label(self, index: int) -> str:
        return self.labels[index]


build_vocabulary = Vocabulary.from_log


@dataclass(frozen=True)
class TimeScaler:
    """Divides durations by the largest training duration."""

    max_duration: float

    def __post_init__(self):
        if not (self.max_duration > 0 and math.isfinite(self.max_duration)):
            raise ValueError(f"max_duration must be positive, got {self.max_duration}")

    @classmethod
    def fit(cls, train: EventLog) -> TimeScaler:
        longest = max((e.duration for t in train for e in t.events), default=0.0)
        # an all-zero log still needs a usable scale
        return cls(longest if longest > 0 else 1.0)

    def normalize(self, days):
        return np.asarray(days, dtype=np.float64) / self.max_duration

    def denormalize(self, value):
        return np.asarray(value, dtype=np.float64) * self.max_duration


def encode_event(activity_id: int, duration: float, vocab_size: int) -> np.ndarray:
    """One-hot activity block followed by the (already normalized) duration."""
    if not 0 <= activity_id < vocab_size:
        raise UnknownActivityError(f"activity id {activity_id} outside vocabulary of size {vocab_size}")
    vec = np.zeros(vocab_size + 1)
    vec[activity_id] = 1.0
    vec[-1] = duration
    return vec


def decode_activity(vec: np.ndarray) -> int:
    return int(np.argmax(np.asarray(vec)[:-1]))


def f_a(seq) -> list:
    """Activities of a sequence of events or encoded vectors."""
    out = []
    for e in seq:
        if isinstance(e, Event):
            out.append(e.activity)
        elif isinstance(e, tuple):
            out.append(e[0])
        else:
            out.append(decode_activity(e))
    return out


def f_t(seq) -> list[float]:
    """Durations of a sequence of events or encoded vectors."""
    out = []
    for e in seq:
        if isinstance(e, Event):
            out.append(e.duration)
        elif isinstance(e, tuple):
            out.append(float(e[1]))
        else:
            out.append(float(np.asarray(e)[-1]))
    return out


# -- prefix/suffix pairs -----------------------------------------------------


@dataclass(frozen=True)
class PrefixSuffixPair:
    """Encoded prefix (k events) and suffix (remaining events plus ``[EOS]``).

    ``prefix`` and ``suffix`` are ``(len, m + 1)`` arrays; durations are
    normalized.  ``remaining_days`` is the ground-truth remaining time.
    """

    case_id: str
    k: int
    prefix: np.ndarray
    suffix: np.ndarray
    suffix_activities: tuple[int, ...]
    suffix_days: tuple[float, ...]

    @property
    def remaining_days(self) -> float:
        return float(np.sum(self.suffix_days))

    @property
    def pair_id(self) -> str:
        return f"{self.case_id}:{self.k}"


def encode_trace(trace: Trace, vocab: Vocabulary, scaler: TimeScaler) -> np.ndarray:
    m = vocab.size
    return np.stack([encode_event(vocab.index(e.activity), scaler.normalize(e.duration), m) for e in trace.events])


def generate_pairs(log: EventLog, vocab: Vocabulary, scaler: TimeScaler) -> list[PrefixSuffixPair]:
    """All pairs with prefix length ``2 <= k < n`` from every trace."""
    m = vocab.size
    eos = encode_event(EOS_ID, 0.0, m)
    pairs = []
    for trace in log:
        n = len(trace)
        if n < 3:
            continue
        encoded = encode_trace(trace, vocab, scaler)
        ids = [vocab.index(a) for a in trace.activities]
        days = trace.durations
        for k in range(2, n):
            pairs.append(
                PrefixSuffixPair(
                    case_id=trace.case_id,
                    k=k,
                    prefix=encoded[:k].copy(),
                    suffix=np.vstack([encoded[k:], eos]),
                    suffix_activities=(*ids[k:], EOS_ID),
                    suffix_days=(*days[k:], 0.0),
                )
            )
    return pairs


def encode_prefix(trace: Trace, vocab: Vocabulary, scaler: TimeScaler) -> np.ndarray:
    """Encode a whole (possibly partial) trace as a prefix array."""
    return encode_trace(trace, vocab, scaler)


# -- synthetic logs ----------------------------------------------------------


@dataclass(frozen=True)
class Variant:
    activities: tuple[str, ...]
    weight: float = 1.0
    durations: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SyntheticSpec:
    """Branching-process description for :func:`generate_synthetic_log`.

    Durations are days; each is a number or a mapping like
    ``{"uniform": [lo, hi]}``, ``{"exponential": mean}`` or
    ``{"normal": [mean, sd]}`` (truncated at 0).
    """

    variants: tuple[Variant, ...]
    durations: dict = field(default_factory=dict)
    start: datetime = datetime(2020, 1, 1)
    interarrival_days: float = 1.0
    interarrival: str = "fixed"

    @classmethod
    def from_dict(cls, doc: dict) -> SyntheticSpec:
        if not isinstance(doc, dict) or not doc.get("variants"):
            raise ValueError("synthetic spec needs a non-empty 'variants' list")
        variants = []
        for i, v in enumerate(doc["variants"]):
            if isinstance(v, (list, tuple)):
                v = {"activities": v}
            acts = tuple(str(a) for a in v.get("activities") or ())
            if not acts:
                raise ValueError(f"variant {i} has no activities")
            weight = float(v.get("weight", 1.0))
            if not weight > 0:
                raise ValueError(f"variant {i} weight must be positive")
            variants.append(Variant(acts, weight, dict(v.get("durations") or {})))
        start = doc.get("start", datetime(2020, 1, 1))
        if isinstance(start, str):
            start = _parse_timestamp(start)
        elif not isinstance(start, datetime):
            start = datetime(start.year, start.month, start.day)
        spec = cls(
            variants=tuple(variants),
            durations=dict(doc.get("durations") or {}),
            start=start,
            interarrival_days=float(doc.get("interarrival_days", 1.0)),
            interarrival=str(doc.get("interarrival", "fixed")),
        )
        spec._validate()
        return spec

    @classmethod
    def load(cls, path) -> SyntheticSpec:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def _validate(self) -> None:
        if self.interarrival not in ("fixed", "exponential"):
            raise ValueError(f"unknown interarrival mode {self.interarrival!r}")
        if self.interarrival_days < 0:
            raise ValueError("interarrival_days must be non-negative")
        for v in self.variants:
            for act in v.activities[1:]:
                _check_dist(v.durations.get(act, self.durations.get(act)), act)

    def duration_spec(self, variant: Variant, activity: str):
        return variant.durations.get(activity, self.durations.get(activity))


def _check_dist(spec, activity):
    if spec is None:
        raise ValueError(f"no duration given for activity {activity!r}")
    if isinstance(spec, (int, float)):
        if spec < 0:
            raise ValueError(f"negative duration for {activity!r}")
        return
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError(f"bad duration spec for {activity!r}: {spec!r}")
    kind, args = next(iter(spec.items()))
    if kind not in ("uniform", "exponential", "normal"):
        raise ValueError(f"unknown duration distribution {kind!r} for {activity!r}")


def _draw(spec, rng: np.random.Generator) -> float:
    if isinstance(spec, (int, float)):
        return float(spec)
    kind, args = next(iter(spec.items()))
    if kind == "uniform":
        return float(rng.uniform(args[0], args[1]))
    if kind == "exponential":
        return float(rng.exponential(args))
    return max(0.0, float(rng.normal(args[0], args[1])))


def generate_synthetic_log(spec: SyntheticSpec | dict, n_traces: int, seed: int = 0) -> EventLog:
    """Sample ``n_traces`` traces from the variants in ``spec``.

    Timestamps are rounded to whole microseconds so that a CSV round trip
    reproduces the same log.
    """
    if isinstance(spec, dict):
        spec = SyntheticSpec.from_dict(spec)
    if n_traces < 1:
        raise ValueError("n_traces must be at least 1")
    rng = np.random.default_rng(seed)
    weights = np.array([v.weight for v in spec.variants])
    weights = weights / weights.sum()
    width = len(str(n_traces))

    traces = []
    start = spec.start
    for i in range(n_traces):
        if i:
            gap = spec.interarrival_days
            if spec.interarrival == "exponential":
                gap = rng.exponential(gap)
            start = start + timedelta(microseconds=round(gap * SECONDS_PER_DAY * 1e6))
        variant = spec.variants[rng.choice(len(weights), p=weights)]
        ts = start
        events = [Event(variant.activities[0], ts)]
        for act in variant.activities[1:]:
            days = _draw(spec.duration_spec(variant, act), rng)
            ts = ts + timedelta(microseconds=round(days * SECONDS_PER_DAY * 1e6))
            events.append(Event(act, ts))
        traces.append(Trace(f"case_{i:0{width}d}", tuple(events)))
    return EventLog(tuple(traces))


def log_to_csv_text(log: EventLog) -> str:
    buf = io.StringIO()
    write_csv(log, buf)
    return buf.getvalue()


def count_pairs(traces: Iterable[Trace]) -> int:
    return sum(max(0, len(t) - 2) for t in traces)
