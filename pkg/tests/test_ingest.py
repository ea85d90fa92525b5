"""Stream parsing, session filtering, aggregation passes, transitions."""

import io

import pytest

from qrlob.errors import CrossedBook, MalformedLine, NonMonotoneTimestamp
from qrlob.events import ADD, ASK, BID, CANCEL, CREATE_BID, EventKey, TRADE
from qrlob.ingest import (
    HEADER,
    NS_PER_DAY,
    SESSION_END_NS,
    SESSION_START_NS,
    RawDepthEvent,
    aggregate_creates,
    aggregate_trades,
    build_transitions,
    filter_session,
    format_event,
    parse_stream,
    preprocess,
    write_stream,
)
from qrlob.state import SpreadClass

SNAP = (2997, 200, 2998, 300, 2999, 400, 3000, 500, 3001, 450, 3002, 350, 3003, 250, 3004, 150)


def ev(ts, action=ADD, side=BID, level=1, price=3000, size=100, snap=SNAP):
    return RawDepthEvent(ts, action, side, level, price, size, snap)


def line(e):
    return format_event(e)


def parse_text(*rows):
    text = HEADER + "\n" + "\n".join(rows) + "\n"
    return list(parse_stream(io.StringIO(text)))


T0 = SESSION_START_NS + 1_000_000_000


class TestParse:
    def test_identity_roundtrip(self):
        events = [ev(T0), ev(T0 + 5, TRADE, ASK, 1, 3001, 250), ev(T0 + 9, CREATE_BID, BID, 0, 3001, 120)]
        parsed = parse_text(*[line(e) for e in events])
        assert parsed == events

    def test_file_roundtrip(self, tmp_path):
        events = [ev(T0 + i * 1000, size=100 + i) for i in range(50)]
        path = str(tmp_path / "stream.csv")
        write_stream(events, path)
        assert list(parse_stream(path)) == events
        # bit-exact file round trip
        write_stream(parse_stream(path), str(tmp_path / "copy.csv"))
        assert open(path, "rb").read() == open(str(tmp_path / "copy.csv"), "rb").read()

    def test_zero_size_rejected(self):
        with pytest.raises(MalformedLine) as err:
            parse_text(line(ev(T0, size=0)))
        assert err.value.line_no == 2

    def test_decreasing_timestamp_rejected(self):
        with pytest.raises(NonMonotoneTimestamp) as err:
            parse_text(line(ev(T0 + 10)), line(ev(T0)))
        assert err.value.line_no == 3

    def test_equal_timestamps_allowed(self):
        assert len(parse_text(line(ev(T0)), line(ev(T0)))) == 2

    def test_crossed_book_rejected(self):
        bad = SNAP[:6] + (3001, 500) + SNAP[8:]  # bp1 == ap1
        with pytest.raises(CrossedBook):
            parse_text(line(ev(T0, snap=bad)))

    def test_level_zero_reserved_for_creates(self):
        with pytest.raises(MalformedLine):
            parse_text(line(ev(T0, ADD, BID, 0)))
        with pytest.raises(MalformedLine):
            parse_text(line(ev(T0, CREATE_BID, BID, 1)))

    def test_header_required(self):
        with pytest.raises(MalformedLine):
            list(parse_stream(io.StringIO("not,a,header\n")))

    def test_field_count_enforced(self):
        with pytest.raises(MalformedLine):
            parse_text("1,2,3")


class TestSessionFilter:
    def test_documented_boundaries(self):
        before = ev(9 * 3_600_000_000_000 + 45 * 60_000_000_000)  # 09:45
        at_open = ev(SESSION_START_NS)
        at_close = ev(SESSION_END_NS)
        inside = ev(T0)
        kept = filter_session([before, at_open, inside, at_close])
        assert kept == [at_open, inside]

    def test_multi_day(self):
        events = [ev(T0), ev(NS_PER_DAY + T0), ev(2 * NS_PER_DAY + SESSION_END_NS + 5)]
        assert filter_session(events) == events[:2]


class TestAggregateCreates:
    def test_fig7_burst_absorbed(self):
        events = [
            ev(T0, CREATE_BID, BID, 0, 3002, 2),
            ev(T0 + 1, ADD, BID, 1, 3002, 3),
            ev(T0 + 2, ADD, BID, 1, 3002, 1),
        ]
        out = aggregate_creates(events)
        assert len(out) == 1
        assert out[0].size_shares == 6
        assert out[0].ts_ns == T0
        assert out[0].action == CREATE_BID

    def test_interruption_stops_absorption(self):
        events = [
            ev(T0, CREATE_BID, BID, 0, 3002, 2),
            ev(T0 + 1, TRADE, ASK, 1, 3003, 100),
            ev(T0 + 2, ADD, BID, 1, 3002, 3),
        ]
        out = aggregate_creates(events)
        assert len(out) == 3
        assert out[0].size_shares == 2

    def test_different_price_not_absorbed(self):
        events = [ev(T0, CREATE_BID, BID, 0, 3002, 2), ev(T0 + 1, ADD, BID, 2, 3001, 3)]
        assert len(aggregate_creates(events)) == 2

    def test_no_creates_identity(self):
        events = [ev(T0 + i) for i in range(5)]
        assert aggregate_creates(events) == events

    def test_idempotent_and_conserving(self):
        events = [
            ev(T0, CREATE_BID, BID, 0, 3002, 2),
            ev(T0 + 1, ADD, BID, 1, 3002, 3),
            ev(T0 + 2, ADD, BID, 1, 3002, 1),
            ev(T0 + 3, ADD, ASK, 1, 3003, 7),
        ]
        once = aggregate_creates(events)
        assert aggregate_creates(once) == once
        added_at_price = sum(e.size_shares for e in events if e.price_ticks == 3002)
        assert sum(e.size_shares for e in once if e.price_ticks == 3002) == added_at_price


class TestAggregateTrades:
    def test_fig8_same_timestamp_merged(self):
        events = [
            ev(T0, TRADE, ASK, 1, 3001, 3),
            ev(T0, TRADE, ASK, 1, 3001, 2),
            ev(T0, TRADE, ASK, 1, 3001, 1),
        ]
        out = aggregate_trades(events)
        assert len(out) == 1
        assert out[0].size_shares == 6

    def test_distinct_timestamps_untouched(self):
        events = [ev(T0, TRADE, ASK, 1, 3001, 3), ev(T0 + 1, TRADE, ASK, 1, 3001, 2)]
        assert aggregate_trades(events) == events

    def test_multi_level_sweep_merged(self):
        events = [
            ev(T0, TRADE, ASK, 1, 3001, 4),
            ev(T0, TRADE, ASK, 2, 3002, 2),
        ]
        out = aggregate_trades(events)
        assert len(out) == 1
        assert out[0].size_shares == 6
        assert out[0].level == 1 and out[0].price_ticks == 3001

    def test_opposite_sides_not_merged(self):
        events = [ev(T0, TRADE, ASK, 1, 3001, 4), ev(T0, TRADE, BID, 1, 3000, 2)]
        assert len(aggregate_trades(events)) == 2

    def test_idempotent_and_volume_conserving(self):
        events = [
            ev(T0, TRADE, ASK, 1, 3001, 3),
            ev(T0, TRADE, ASK, 1, 3001, 2),
            ev(T0 + 7, TRADE, BID, 1, 3000, 5),
        ]
        once = aggregate_trades(events)
        assert aggregate_trades(once) == once
        assert sum(e.size_shares for e in once if e.action == TRADE) == 10


MES = [100, 150, 150, 150]


class TestBuildTransitions:
    def test_dt_subtraction(self):
        events = [ev(T0), ev(T0 + 1_000_000)]
        ds = build_transitions(events, MES)
        assert len(ds) == 1
        assert ds[0].dt_ns == 1_000_000

    def test_volume_ceiling_and_cap(self):
        events = [ev(T0), ev(T0 + 10, TRADE, ASK, 1, 3001, 150), ev(T0 + 20, TRADE, ASK, 1, 3001, 9000)]
        ds = build_transitions(events, MES)
        assert ds[0].volume_units == 2  # ceil(150 / 100)
        assert ds[1].volume_units == 50  # capped

    def test_state_projection_from_snapshot(self):
        ds = build_transitions([ev(T0), ev(T0 + 10)], MES)
        # snapshot best queues: 500 and 450 shares at MES 100 -> 5 vs 5 units
        assert ds[0].state.imb_tenths == 0
        assert ds[0].state.spread == SpreadClass.ONE

    def test_first_event_of_each_session_anchors(self):
        events = [ev(T0), ev(T0 + 10), ev(NS_PER_DAY + T0), ev(NS_PER_DAY + T0 + 10)]
        ds = build_transitions(events, MES)
        assert len(ds) == len(events) - 2  # two sessions
        assert ds.diagnostics.n_sessions == 2

    def test_deep_levels_dropped_with_counter(self):
        events = [ev(T0), ev(T0 + 10, ADD, BID, 3, 2998, 100), ev(T0 + 20)]
        ds = build_transitions(events, MES)
        assert ds.diagnostics.deep_level_drops == 1
        assert len(ds) == 1

    def test_off_model_events_dropped(self):
        wide = SNAP[:8] + (3002, 450) + SNAP[10:]  # ap1 = 3002: spread 2
        events = [ev(T0, snap=wide), ev(T0 + 10, TRADE, ASK, 1, 3002, 100, snap=wide)]
        ds = build_transitions(events, MES)
        assert len(ds) == 0
        assert ds.diagnostics.off_model_drops == 1

    def test_zero_dt_clamped(self):
        events = [ev(T0), ev(T0, CANCEL, BID, 1, 3000, 100)]
        ds = build_transitions(events, MES)
        assert ds[0].dt_ns == 1
        assert ds.diagnostics.zero_dt_clamped == 1

    def test_transition_count_identity(self):
        events = [ev(T0 + i * 1000, ADD, BID, 1 + i % 2, 3000, 100) for i in range(100)]
        ds = build_transitions(events, MES)
        assert len(ds) == 100 - 1


def test_preprocess_composes():
    events = [
        ev(9 * 3_600_000_000_000),  # outside the session, dropped
        ev(T0, CREATE_BID, BID, 0, 3002, 2),
        ev(T0 + 1, ADD, BID, 1, 3002, 3),
        ev(T0 + 5, TRADE, ASK, 1, 3001, 3),
        ev(T0 + 5, TRADE, ASK, 1, 3001, 2),
    ]
    out = preprocess(events)
    assert [e.action for e in out] == [CREATE_BID, TRADE]
    assert out[0].size_shares == 5
    assert out[1].size_shares == 5
