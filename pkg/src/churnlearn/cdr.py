"""CDR parsing, preprocessing filters, churn labelling and timeline windows.

The input format is delimited text, one call per line:
``caller_id<TAB>callee_id<TAB>start_day<TAB>duration_s``.  An optional header
line is detected by a non-numeric third field.  Gzip-compressed files are
accepted transparently.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .graph import CallGraph, DecayConfig, build_graph_from_arrays

__all__ = [
    "CdrRecord",
    "ChurnLabel",
    "CallEvents",
    "TimelineConfig",
    "WindowedData",
    "read_cdr",
    "write_cdr",
    "filter_records",
    "filter_events",
    "label_churn",
    "build_windows",
    "write_labels",
    "read_labels",
    "MIN_CALL_SECONDS",
    "CHURN_SILENCE_DAYS",
]

log = logging.getLogger(__name__)

# Calls shorter than this are treated as noise, not social connections.
MIN_CALL_SECONDS = 4
# A customer is a churner once this many consecutive days pass with no calls.
CHURN_SILENCE_DAYS = 30

CHURNER = "churner"
NON_CHURNER = "non-churner"


class CdrRecord(NamedTuple):
    """One logged phone call."""

    caller: str
    callee: str
    start_day: int
    duration_s: int


@dataclass(frozen=True)
class ChurnLabel:
    """Churn status of one customer; ``churn_day`` is set iff churner."""

    customer: str
    status: str
    churn_day: int | None = None

    def __post_init__(self) -> None:
        if self.status not in (CHURNER, NON_CHURNER):
            raise ValueError(f"unknown status {self.status!r}")
        if (self.status == CHURNER) != (self.churn_day is not None):
            raise ValueError("churn_day must be present exactly for churners")

    @property
    def is_churner(self) -> bool:
        return self.status == CHURNER


class CallEvents:
    """Column-oriented table of call events with a shared customer-id pool.

    This is the internal working form of a CDR stream: dense integer ids
    keep large datasets cheap to slice, while ``ids`` maps back to the
    external identifiers.
    """

    __slots__ = ("ids", "caller", "callee", "day", "duration", "malformed_rows", "_index")

    def __init__(
        self,
        ids: list[str],
        caller: np.ndarray,
        callee: np.ndarray,
        day: np.ndarray,
        duration: np.ndarray,
        malformed_rows: int = 0,
    ) -> None:
        self.ids = ids
        self.caller = np.asarray(caller, dtype=np.int64)
        self.callee = np.asarray(callee, dtype=np.int64)
        self.day = np.asarray(day, dtype=np.int64)
        self.duration = np.asarray(duration, dtype=np.int64)
        self.malformed_rows = malformed_rows
        self._index: dict[str, int] | None = None
        if not (len(self.caller) == len(self.callee) == len(self.day) == len(self.duration)):
            raise ValueError("event columns must share one length")
        if self.duration.size and self.duration.min() < 0:
            raise ValueError("durations must be nonnegative")

    @classmethod
    def from_records(cls, records: Iterable[CdrRecord | tuple]) -> "CallEvents":
        ids: list[str] = []
        index: dict[str, int] = {}
        caller: list[int] = []
        callee: list[int] = []
        day: list[int] = []
        dur: list[int] = []

        def intern(cid: str) -> int:
            i = index.get(cid)
            if i is None:
                i = len(ids)
                index[cid] = i
                ids.append(cid)
            return i

        for a, b, d, s in records:
            caller.append(intern(a))
            callee.append(intern(b))
            day.append(int(d))
            dur.append(int(s))
        ev = cls(
            ids,
            np.asarray(caller, dtype=np.int64),
            np.asarray(callee, dtype=np.int64),
            np.asarray(day, dtype=np.int64),
            np.asarray(dur, dtype=np.int64),
        )
        ev._index = index
        return ev

    def __len__(self) -> int:
        return self.caller.shape[0]

    def index(self) -> dict[str, int]:
        if self._index is None:
            self._index = {cid: i for i, cid in enumerate(self.ids)}
        return self._index

    def records(self) -> Iterator[CdrRecord]:
        """Yield the events back as :class:`CdrRecord` tuples."""
        ids = self.ids
        for a, b, d, s in zip(self.caller, self.callee, self.day, self.duration):
            yield CdrRecord(ids[a], ids[b], int(d), int(s))

    def span_end(self) -> int:
        """Last day with any observed activity."""
        if len(self) == 0:
            raise ValueError("no events")
        return int(self.day.max())

    def select(self, mask: np.ndarray) -> "CallEvents":
        ev = CallEvents(
            self.ids,
            self.caller[mask],
            self.callee[mask],
            self.day[mask],
            self.duration[mask],
            self.malformed_rows,
        )
        ev._index = self._index
        return ev


def _open_text(path, mode: str = "rt"):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode, encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def read_cdr(path) -> CallEvents:
    """Read a CDR file into a :class:`CallEvents` table.

    Malformed rows are counted and reported via logging, never fatal.
    """
    ids: list[str] = []
    index: dict[str, int] = {}
    caller: list[int] = []
    callee: list[int] = []
    day: list[int] = []
    dur: list[int] = []
    malformed = 0

    def intern(cid: str) -> int:
        i = index.get(cid)
        if i is None:
            i = len(ids)
            index[cid] = i
            ids.append(cid)
        return i

    with _open_text(path) as fh:
        first = True
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if first:
                first = False
                # Header line: non-numeric third field.
                if len(parts) >= 3 and not _is_int(parts[2]):
                    continue
            if len(parts) != 4 or not (_is_int(parts[2]) and _is_int(parts[3])):
                malformed += 1
                continue
            d, s = int(parts[2]), int(parts[3])
            if d < 0 or s < 0:
                malformed += 1
                continue
            caller.append(intern(parts[0]))
            callee.append(intern(parts[1]))
            day.append(d)
            dur.append(s)
    if malformed:
        log.warning("read_cdr(%s): skipped %d malformed rows", path, malformed)
    ev = CallEvents(
        ids,
        np.asarray(caller, dtype=np.int64),
        np.asarray(callee, dtype=np.int64),
        np.asarray(day, dtype=np.int64),
        np.asarray(dur, dtype=np.int64),
        malformed_rows=malformed,
    )
    ev._index = index
    return ev


def write_cdr(path, records: Iterable[CdrRecord | tuple], header: bool = False) -> int:
    """Write records in the CDR text format; returns the row count."""
    n = 0
    with _open_text(path, "wt") as fh:
        if header:
            fh.write("caller\tcallee\tstart_day\tduration_s\n")
        for a, b, d, s in records:
            fh.write(f"{a}\t{b}\t{int(d)}\t{int(s)}\n")
            n += 1
    return n


def _is_int(token: str) -> bool:
    try:
        int(token)
        return True
    except ValueError:
        return False


def filter_records(
    records: Iterable[CdrRecord | tuple],
    network_members: set[str] | None = None,
) -> Iterator[CdrRecord]:
    """Apply the preprocessing filters to a record stream, preserving order.

    Keeps records with ``duration_s >= MIN_CALL_SECONDS`` and, when a member
    set is given, both endpoints inside it (within-network correspondence
    only).
    """
    for rec in records:
        a, b, d, s = rec
        if s < MIN_CALL_SECONDS:
            continue
        if network_members is not None and (a not in network_members or b not in network_members):
            continue
        yield CdrRecord(a, b, int(d), int(s))


def filter_events(events: CallEvents, network_members: set[str] | None = None) -> CallEvents:
    """Vectorized :func:`filter_records` over a :class:`CallEvents` table."""
    mask = events.duration >= MIN_CALL_SECONDS
    if network_members is not None:
        member = np.fromiter(
            (cid in network_members for cid in events.ids),
            dtype=bool,
            count=len(events.ids),
        )
        mask &= member[events.caller] & member[events.callee]
    return events.select(mask)


def label_churn(
    records: Iterable[CdrRecord | tuple] | CallEvents,
    activity_window_end: int,
    span_end: int | None = None,
    population: set[str] | None = None,
) -> dict[str, ChurnLabel]:
    """Derive churn labels from call activity.

    A customer churns when a run of at least ``CHURN_SILENCE_DAYS``
    consecutive days without any call (as caller or callee) begins at or
    before ``activity_window_end``; the churn day is the first silent day of
    the earliest such run, i.e. last active day + 1.  Silence is only
    observable up to ``span_end`` (defaults to the last day in the data), so
    trailing gaps shorter than the rule are unverifiable and do not label a
    churner.

    Customers with zero activity in the whole span cannot be labelled; when
    a ``population`` is supplied, the silent ones are reported via logging.
    """
    events = records if isinstance(records, CallEvents) else CallEvents.from_records(records)
    if len(events) == 0:
        if population:
            log.warning("label_churn: %d customers with no activity were excluded", len(population))
        return {}
    observed_end = events.span_end()
    if span_end is None:
        span_end = observed_end
    if activity_window_end + CHURN_SILENCE_DAYS > span_end:
        log.warning(
            "label_churn: data ends on day %d; gaps opening near day %d cannot "
            "all be verified against the %d-day rule",
            span_end,
            activity_window_end,
            CHURN_SILENCE_DAYS,
        )

    n_customers = len(events.ids)
    # One (customer, day) activity pair per call side, deduplicated.
    cust = np.concatenate([events.caller, events.callee])
    days = np.concatenate([events.day, events.day])
    keep = days <= span_end
    cust, days = cust[keep], days[keep]
    key = cust * np.int64(span_end + 2) + days
    uniq = np.unique(key)
    u_cust = uniq // (span_end + 2)
    u_day = uniq % (span_end + 2)

    labels: dict[str, ChurnLabel] = {}
    starts = np.flatnonzero(np.r_[True, u_cust[1:] != u_cust[:-1]])
    bounds = np.r_[starts, uniq.shape[0]]
    ids = events.ids
    for s, e in zip(bounds[:-1], bounds[1:]):
        c = int(u_cust[s])
        active = u_day[s:e]
        churn_day: int | None = None
        if active.shape[0] > 1:
            gaps = active[1:] - active[:-1] - 1
            hit = np.flatnonzero((gaps >= CHURN_SILENCE_DAYS) & (active[:-1] + 1 <= activity_window_end))
            if hit.shape[0]:
                churn_day = int(active[hit[0]] + 1)
        if churn_day is None:
            last = int(active[-1])
            trailing = span_end - last
            if trailing >= CHURN_SILENCE_DAYS and last + 1 <= activity_window_end:
                churn_day = last + 1
        cid = ids[c]
        if churn_day is not None:
            labels[cid] = ChurnLabel(cid, CHURNER, churn_day)
        else:
            labels[cid] = ChurnLabel(cid, NON_CHURNER)

    if population is not None:
        silent = population.difference(labels)
        if silent:
            log.warning("label_churn: %d customers with no activity were excluded", len(silent))
    return labels


@dataclass(frozen=True)
class TimelineConfig:
    """Six-month experiment timeline split into M1..M5 plus a label month.

    ``month_boundaries`` holds the six exclusive end days of M1..M5 and the
    label month; the first month starts at ``start_day``.  The short horizon
    pre-trains on M3 and trains on M4; the long horizon pre-trains on M1-M3
    and trains on M2-M4.  The prediction month is M5 in both.
    """

    month_boundaries: tuple[int, int, int, int, int, int]
    start_day: int = 0
    horizon: str = "short"
    edge_type: str = "call_count"

    def __post_init__(self) -> None:
        b = self.month_boundaries
        if len(b) != 6:
            raise ValueError("month_boundaries must list six end days")
        prev = self.start_day
        for x in b:
            if x <= prev:
                raise ValueError("month boundaries must be strictly increasing")
            prev = x
        if self.horizon not in ("short", "long"):
            raise ValueError(f"horizon must be 'short' or 'long', got {self.horizon!r}")
        if self.edge_type not in ("call_count", "call_duration"):
            raise ValueError(f"unknown edge_type {self.edge_type!r}")

    @classmethod
    def thirty_day_months(cls, start_day: int = 0, horizon: str = "short", edge_type: str = "call_count") -> "TimelineConfig":
        """Calendar-free default: six consecutive 30-day blocks."""
        ends = tuple(start_day + 30 * (i + 1) for i in range(6))
        return cls(ends, start_day, horizon, edge_type)

    def _month(self, i: int) -> tuple[int, int]:
        start = self.start_day if i == 0 else self.month_boundaries[i - 1]
        return start, self.month_boundaries[i]

    @property
    def pretrain_window(self) -> tuple[int, int]:
        if self.horizon == "short":
            return self._month(2)
        return self._month(0)[0], self._month(2)[1]

    @property
    def train_window(self) -> tuple[int, int]:
        if self.horizon == "short":
            return self._month(3)
        return self._month(1)[0], self._month(3)[1]

    @property
    def predict_window(self) -> tuple[int, int]:
        return self._month(4)

    @property
    def label_window(self) -> tuple[int, int]:
        return self._month(5)


@dataclass
class WindowedData:
    """Product of :func:`build_windows` for one (horizon, edge type) setting."""

    pretrain_graph: CallGraph
    train_graph: CallGraph
    train_labels: dict[str, ChurnLabel]
    predict_labels: dict[str, ChurnLabel]
    timeline: TimelineConfig


def _window_graph(events: CallEvents, window: tuple[int, int], edge_type: str, gamma: float) -> CallGraph:
    start, end = window
    mask = (events.day >= start) & (events.day < end)
    if not mask.any():
        raise ValueError(f"no records fall inside window [{start}, {end}); degenerate experiment")
    sub = events.select(mask)
    if edge_type == "call_count":
        raw = np.ones(len(sub), dtype=np.float64)
    else:
        raw = sub.duration.astype(np.float64)
        if np.any(raw <= 0):
            raise ValueError("call_duration edges require positive durations")
    # Decay ages are measured from the last day inside the window, so the
    # most recent calls keep their full weight.
    config = DecayConfig(gamma=gamma, time_origin=float(end - 1))
    return build_graph_from_arrays(sub.ids, sub.caller, sub.callee, raw, sub.day, config)


def build_windows(
    records: Iterable[CdrRecord | tuple] | CallEvents,
    config: TimelineConfig,
    decay: DecayConfig | None = None,
) -> WindowedData:
    """Slice a record stream into the pre-train/train/predict windows.

    Returns the two window graphs plus churn labels computed at the end of
    the train window and for the prediction month.  Each call contributes 1
    (``call_count``) or its duration (``call_duration``) to its edge, decayed
    by its age relative to the end of the owning window.
    """
    events = records if isinstance(records, CallEvents) else CallEvents.from_records(records)
    gamma = decay.gamma if decay is not None else 0.0
    if len(events) == 0:
        raise ValueError("no records supplied")
    if events.span_end() < config.predict_window[1] - 1:
        raise ValueError(
            f"records end on day {events.span_end()} but the prediction month "
            f"runs through day {config.predict_window[1] - 1}"
        )
    pretrain_graph = _window_graph(events, config.pretrain_window, config.edge_type, gamma)
    train_graph = _window_graph(events, config.train_window, config.edge_type, gamma)
    train_labels = label_churn(events, activity_window_end=config.train_window[1] - 1)
    predict_labels = label_churn(events, activity_window_end=config.predict_window[1] - 1)
    return WindowedData(pretrain_graph, train_graph, train_labels, predict_labels, config)


def write_labels(path, labels: dict[str, ChurnLabel]) -> None:
    """Write labels as ``customer_id<TAB>status<TAB>churn_day`` rows."""
    with _open_text(path, "wt") as fh:
        for cid in sorted(labels):
            lab = labels[cid]
            day = "" if lab.churn_day is None else str(lab.churn_day)
            fh.write(f"{cid}\t{lab.status}\t{day}\n")


def read_labels(path) -> dict[str, ChurnLabel]:
    out: dict[str, ChurnLabel] = {}
    with _open_text(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            cid, status, day = line.split("\t")
            out[cid] = ChurnLabel(cid, status, int(day) if day else None)
    return out
