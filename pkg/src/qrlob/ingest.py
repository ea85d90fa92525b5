"""Depth-event stream ingestion: parsing, session filtering, the two
aggregation preprocessing passes, and extraction of calibration transitions.

Canonical event CSV (header mandatory, UTF-8, LF):

    ts_ns,action,side,level,price_ticks,size_shares,
    bp4,bq4,bp3,bq3,bp2,bq2,bp1,bq1,ap1,aq1,ap2,aq2,ap3,aq3,ap4,aq4

with action in {A,C,T,CB,CA}, side in {B,S}, prices in integer ticks, sizes in
shares, and the eight (price, size) pairs snapshotting q-4..q-1, q1..q4 just
before the event. ``ts_ns`` is an absolute nanosecond timeline: time-of-day is
``ts % 86_400e9`` and the trading day is ``ts // 86_400e9``.
"""

import io
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Union

from .book import normalize_size
from .errors import CrossedBook, MalformedLine, NonMonotoneTimestamp
from .events import (
    ADD,
    ASK,
    BID,
    CANCEL,
    CODE_KINDS,
    CREATE_ASK,
    CREATE_BID,
    KIND_CODES,
    TRADE,
    EventKey,
    EventKind,
)
from .state import SpreadClass, StateKey, bin_best_units, enumerate_events

NS_PER_DAY = 86_400_000_000_000
SESSION_START_NS = 10 * 3_600_000_000_000  # 10:00:00
SESSION_END_NS = 15 * 3_600_000_000_000 + 30 * 60_000_000_000  # 15:30:00
SESSION_LEN_NS = SESSION_END_NS - SESSION_START_NS

VOLUME_CAP_UNITS = 50

HEADER = (
    "ts_ns,action,side,level,price_ticks,size_shares,"
    "bp4,bq4,bp3,bq3,bp2,bq2,bp1,bq1,ap1,aq1,ap2,aq2,ap3,aq3,ap4,aq4"
)

_SIDE_CODES = {BID: "B", ASK: "S"}
_CODE_SIDES = {"B": BID, "S": ASK}


class RawDepthEvent(NamedTuple):
    ts_ns: int
    action: int  # EventKind
    side: int  # -1 bid, +1 ask
    level: int  # 0 for Create actions
    price_ticks: int
    size_shares: int
    # Snapshot just before the event, in CSV column order:
    # (bp4, bq4, bp3, bq3, bp2, bq2, bp1, bq1, ap1, aq1, ap2, aq2, ap3, aq3, ap4, aq4)
    book_before: tuple

    @property
    def day(self) -> int:
        return self.ts_ns // NS_PER_DAY

    @property
    def time_of_day_ns(self) -> int:
        return self.ts_ns % NS_PER_DAY

    def bid_price(self, level: int) -> int:
        return self.book_before[8 - 2 * level]

    def bid_size(self, level: int) -> int:
        return self.book_before[9 - 2 * level]

    def ask_price(self, level: int) -> int:
        return self.book_before[6 + 2 * level]

    def ask_size(self, level: int) -> int:
        return self.book_before[7 + 2 * level]


class Transition(NamedTuple):
    dt_ns: int
    event: EventKey
    volume_units: int
    state: StateKey


def parse_stream(source: Union[str, "io.TextIOBase", Iterable[str]]) -> Iterator[RawDepthEvent]:
    """Parse a canonical event CSV, validating as it streams.

    Raises MalformedLine, NonMonotoneTimestamp or CrossedBook with the
    offending 1-based line number.
    """
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            yield from _parse_lines(fh)
    else:
        yield from _parse_lines(source)


def _parse_lines(lines: Iterable[str]) -> Iterator[RawDepthEvent]:
    it = iter(lines)
    try:
        header = next(it)
    except StopIteration:
        raise MalformedLine(1, "missing header") from None
    if header.strip() != HEADER:
        raise MalformedLine(1, "unexpected header")
    prev_ts = -1
    for line_no, line in enumerate(it, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 22:
            raise MalformedLine(line_no, f"expected 22 fields, got {len(parts)}")
        try:
            ts = int(parts[0])
            action = CODE_KINDS[parts[1]]
            side = _CODE_SIDES[parts[2]]
            level = int(parts[3])
            price = int(parts[4])
            size = int(parts[5])
            snap = tuple(int(p) for p in parts[6:22])
        except (ValueError, KeyError) as exc:
            raise MalformedLine(line_no, str(exc)) from None
        if size <= 0:
            raise MalformedLine(line_no, "size_shares must be > 0")
        is_create = action in (CREATE_BID, CREATE_ASK)
        if is_create != (level == 0):
            raise MalformedLine(line_no, "level 0 is reserved for Create actions")
        if not is_create and not 1 <= level:
            raise MalformedLine(line_no, f"bad level {level}")
        if ts < prev_ts:
            raise NonMonotoneTimestamp(line_no)
        prev_ts = ts
        bp = snap[6], snap[4], snap[2], snap[0]  # bp1..bp4
        ap = snap[8], snap[10], snap[12], snap[14]
        if not (all(bp[i] > bp[i + 1] for i in range(3)) and all(ap[i] < ap[i + 1] for i in range(3))):
            raise CrossedBook(line_no)
        if bp[0] >= ap[0]:
            raise CrossedBook(line_no)
        if snap[7] <= 0 or snap[9] <= 0:
            raise MalformedLine(line_no, "best queues must be nonempty")
        yield RawDepthEvent(ts, action, side, level, price, size, snap)


def format_event(e: RawDepthEvent) -> str:
    return (
        f"{e.ts_ns},{KIND_CODES[EventKind(e.action)]},{_SIDE_CODES[e.side]},{e.level},"
        f"{e.price_ticks},{e.size_shares}," + ",".join(str(v) for v in e.book_before)
    )


def write_stream(events: Iterable[RawDepthEvent], path: str) -> None:
    """Serialise events to a canonical CSV; inverse of parse_stream."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER + "\n")
        for e in events:
            fh.write(format_event(e) + "\n")


def filter_session(
    events: Iterable[RawDepthEvent],
    session_start_ns: int = SESSION_START_NS,
    session_end_ns: int = SESSION_END_NS,
) -> List[RawDepthEvent]:
    """Keep events in the half-open [start, end) window of each trading day."""
    return [e for e in events if session_start_ns <= e.ts_ns % NS_PER_DAY < session_end_ns]


def aggregate_creates(events: Sequence[RawDepthEvent]) -> List[RawDepthEvent]:
    """Fold the Add burst that follows a level creation into the Create.

    Each Create absorbs all immediately following Add messages at the same
    price; absorption stops at the first other event. The aggregate keeps the
    Create's timestamp and pre-event snapshot.
    """
    out: List[RawDepthEvent] = []
    i, n = 0, len(events)
    while i < n:
        e = events[i]
        if e.action in (CREATE_BID, CREATE_ASK):
            vol = e.size_shares
            j = i + 1
            while j < n and events[j].action == ADD and events[j].price_ticks == e.price_ticks:
                vol += events[j].size_shares
                j += 1
            out.append(e._replace(size_shares=vol) if vol != e.size_shares else e)
            i = j
        else:
            out.append(e)
            i += 1
    return out


def aggregate_trades(events: Sequence[RawDepthEvent]) -> List[RawDepthEvent]:
    """Merge consecutive same-timestamp, same-side Trade messages.

    Individual fills of one aggressive order share the exchange timestamp;
    multi-level sweeps merge the same way, recording only the total traded
    volume with the first fill's price and level 1 semantics.
    """
    out: List[RawDepthEvent] = []
    i, n = 0, len(events)
    while i < n:
        e = events[i]
        if e.action == TRADE:
            vol = e.size_shares
            j = i + 1
            while (
                j < n
                and events[j].action == TRADE
                and events[j].ts_ns == e.ts_ns
                and events[j].side == e.side
            ):
                vol += events[j].size_shares
                j += 1
            if j > i + 1 or e.level != 1:
                e = e._replace(size_shares=vol, level=1)
            out.append(e)
            i = j
        else:
            out.append(e)
            i += 1
    return out


def preprocess(events: Iterable[RawDepthEvent], session_start_ns=SESSION_START_NS, session_end_ns=SESSION_END_NS) -> List[RawDepthEvent]:
    """Session filter followed by both aggregation passes."""
    return aggregate_trades(aggregate_creates(filter_session(events, session_start_ns, session_end_ns)))


@dataclass
class IngestDiagnostics:
    deep_level_drops: int = 0  # Add/Cancel beyond level 2 after preprocessing
    off_model_drops: int = 0  # event illegal for its observed spread class
    zero_dt_clamped: int = 0  # distinct events sharing a timestamp
    n_sessions: int = 0

    def total_dropped(self) -> int:
        return self.deep_level_drops + self.off_model_drops


class TransitionDataset(Sequence):
    """Transitions plus the counters accumulated while building them."""

    def __init__(self, transitions: List[Transition], diagnostics: IngestDiagnostics):
        self.transitions = transitions
        self.diagnostics = diagnostics

    def __len__(self):
        return len(self.transitions)

    def __getitem__(self, i):
        return self.transitions[i]

    def __iter__(self):
        return iter(self.transitions)


def event_state(e: RawDepthEvent, mes: Sequence[int]) -> StateKey:
    """Project an event's pre-event snapshot onto the model state."""
    b1 = normalize_size(e.bid_size(1), mes[0])
    a1 = normalize_size(e.ask_size(1), mes[0])
    spread = e.ask_price(1) - e.bid_price(1)
    return StateKey(
        bin_best_units(b1, a1),
        SpreadClass.ONE if spread == 1 else SpreadClass.WIDE,
    )


def build_transitions(events: Sequence[RawDepthEvent], mes: Sequence[int]) -> TransitionDataset:
    """Extract (waiting time, event, volume, state) tuples for calibration.

    The first event of each session anchors but does not produce a
    transition. Events targeting levels beyond 2 or illegal for their
    observed spread class are dropped (and counted); dropped events still
    advance the waiting-time anchor since they are real activity.
    """
    diag = IngestDiagnostics()
    transitions: List[Transition] = []
    prev_ts: Optional[int] = None
    prev_day: Optional[int] = None
    for e in events:
        day = e.ts_ns // NS_PER_DAY
        if day != prev_day:
            diag.n_sessions += 1
            prev_day = day
            prev_ts = e.ts_ns
            continue
        dt = e.ts_ns - prev_ts
        prev_ts = e.ts_ns
        if dt == 0:
            dt = 1
            diag.zero_dt_clamped += 1

        if e.action in (ADD, CANCEL):
            if e.level > 2:
                diag.deep_level_drops += 1
                continue
            key = EventKey(e.action, e.side, e.level)
            lvl = e.level
        elif e.action == TRADE:
            key = EventKey(TRADE, e.side, 1)
            lvl = 1
        else:
            key = EventKey(e.action, e.side, 0)
            lvl = 1
        state = event_state(e, mes)
        if key not in enumerate_events(state):
            diag.off_model_drops += 1
            continue
        units = min(normalize_size(e.size_shares, mes[lvl - 1]), VOLUME_CAP_UNITS)
        transitions.append(Transition(dt, key, units, state))
    return TransitionDataset(transitions, diag)


def sim_time_to_ts(t_ns: int, first_day: int = 0) -> int:
    """Map continuous simulation time onto the session-of-day timeline."""
    day, within = divmod(t_ns, SESSION_LEN_NS)
    return (first_day + day) * NS_PER_DAY + SESSION_START_NS + within


def generate_synthetic(bundle, duration_ns: int, seed: int, path: str) -> "object":
    """Simulate `duration_ns` of book time and serialise the event stream.

    Deterministic for a fixed seed; spans as many trading sessions as the
    duration requires. Returns the engine diagnostics.
    """
    from .engine import Engine, SimConfig, StreamSink  # circular at module level

    impact_on = bundle.impact.m_plus != 0.0 or bundle.impact.m_minus != 0.0
    cfg = SimConfig(bundle=bundle, seed=seed, horizon_ns=duration_ns, impact_enabled=impact_on)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(HEADER + "\n")
        engine = Engine(cfg, sink=StreamSink(fh))
        engine.run(duration_ns)
    return engine.diagnostics
