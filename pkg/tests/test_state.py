"""Imbalance binning and state projection."""

from fractions import Fraction

import pytest

from qrlob.book import OrderBook
from qrlob.errors import OutOfRange
from qrlob.events import EventKey, TRADE
from qrlob.state import (
    BIN_TENTHS,
    SpreadClass,
    StateKey,
    bin_best_units,
    bin_imbalance,
    enumerate_events,
    format_bin,
    parse_bin,
    project,
    state_index,
)


def oracle_bin(imb: Fraction) -> int:
    """Interval-logic reference: scan the 21 bins directly."""
    if imb == 0:
        return 0
    if imb < 0:
        for left in range(-10, 0):  # [left/10, left/10 + 1/10)
            if Fraction(left, 10) <= imb < Fraction(left + 1, 10):
                return left
    for right in range(1, 11):  # (right/10 - 1/10, right/10]
        if Fraction(right - 1, 10) < imb <= Fraction(right, 10):
            return right
    raise AssertionError(f"no bin for {imb}")


def test_documented_examples():
    assert bin_imbalance(-0.47) == -5
    assert bin_imbalance(0.13) == 2
    assert bin_imbalance(-0.03) == -1
    assert bin_imbalance(0.0) == 0


def test_exhaustive_hundredths_sweep_matches_oracle():
    for k in range(-100, 101):
        expected = oracle_bin(Fraction(k, 100))
        assert bin_imbalance(k / 100) == expected, f"imb={k / 100}"


def test_exact_edges_keep_their_own_label():
    for tenths in range(-10, 11):
        assert bin_imbalance(tenths / 10) == tenths


def test_out_of_range():
    with pytest.raises(OutOfRange):
        bin_imbalance(1.2)
    with pytest.raises(OutOfRange):
        bin_imbalance(-1.0001)


def test_surjective_and_antisymmetric():
    seen = set()
    for k in range(-100, 101):
        b = bin_imbalance(k / 100)
        seen.add(b)
        assert bin_imbalance(-k / 100) == -b
    assert seen == set(BIN_TENTHS)


def test_integer_binning_matches_float_path():
    for b in range(1, 60):
        for a in range(1, 60):
            imb = Fraction(b - a, b + a)
            assert bin_best_units(b, a) == oracle_bin(imb), (b, a)


def make_book(bid1, ask1, spread=1):
    return OrderBook(3000, 3000 + spread, [bid1, 2, 2, 2], [ask1, 2, 2, 2], [100] * 4)


def test_project_examples():
    assert project(make_book(5, 5)) == StateKey(0, SpreadClass.ONE)
    # (7 - 3) / 10 = 0.4 exactly; the right-closed bin keeps the edge label
    assert project(make_book(7, 3)) == StateKey(4, SpreadClass.ONE)
    assert project(make_book(4, 9, spread=3)).spread == SpreadClass.WIDE


def test_project_mirror_commutes():
    for b, a in [(1, 9), (3, 4), (8, 8), (50, 1)]:
        for spread in (1, 2):
            book = make_book(b, a, spread)
            assert project(book.mirror()) == project(book).mirror()


def test_enumerate_events():
    one = enumerate_events(StateKey(0, SpreadClass.ONE))
    assert len(one) == 10
    kinds = {(e.kind, e.side, e.level) for e in one}
    assert (TRADE, -1, 1) in kinds and (TRADE, 1, 1) in kinds
    wide = enumerate_events(StateKey(4, SpreadClass.WIDE))
    assert len(wide) == 2
    assert all(e.is_create() for e in wide)
    # independent of the imbalance bin
    for t in BIN_TENTHS:
        assert enumerate_events(StateKey(t, SpreadClass.ONE)) == one
        assert enumerate_events(StateKey(t, SpreadClass.WIDE)) == wide


def test_bin_labels_roundtrip():
    for t in BIN_TENTHS:
        assert parse_bin(format_bin(t)) == t
    assert format_bin(0) == "0"
    assert format_bin(-5) == "-0.5"
    assert format_bin(2) == "0.2"


def test_state_codes_roundtrip():
    for t in BIN_TENTHS:
        for spread in (SpreadClass.ONE, SpreadClass.WIDE):
            s = StateKey(t, spread)
            assert StateKey.from_code(s.code()) == s


def test_state_index_dense():
    from qrlob.state import ALL_STATES

    assert sorted(state_index(s) for s in ALL_STATES) == list(range(42))


def test_event_key_mirror_and_codes():
    e = EventKey.from_code("A|-1|2")
    assert e.mirror().side == 1 and e.mirror().kind == e.kind
    cb = EventKey.from_code("CB|-1|0")
    assert cb.mirror().code() == "CA|+1|0"
    assert cb.mirror().mirror() == cb
