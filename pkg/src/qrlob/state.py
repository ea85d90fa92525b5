"""Book state projection: (imbalance bin, spread class) and the legal event set.

The imbalance ``(q_-1 - q_1) / (q_-1 + q_1)`` is discretised into 21 bins of
width 0.1. Negative bins are left-closed and labelled by their left edge,
positive bins are right-closed and labelled by their right edge, and the 0 bin
is a point bin capturing exact balance only. Bins are represented internally
as integer tenths in -10..10.
"""

import math
from enum import IntEnum
from typing import NamedTuple, Tuple

from .errors import OutOfRange
from .events import (
    ADD,
    ASK,
    BID,
    CANCEL,
    CREATE_ASK_EVENT,
    CREATE_BID_EVENT,
    EventKey,
    TRADE_ASK,
    TRADE_BID,
)

N_BINS = 21
BIN_TENTHS = tuple(range(-10, 11))

# Snap tolerance for values that are numerically on a bin edge. Imbalance is a
# ratio of integers bounded by 100, so genuine interior points sit at least
# 1e-2 away from the nearest edge in scaled space.
_EDGE_TOL = 1e-9


class SpreadClass(IntEnum):
    ONE = 0  # n = 1
    WIDE = 1  # n >= 2


class StateKey(NamedTuple):
    imb_tenths: int  # bin label * 10, in -10..10
    spread: int  # SpreadClass value

    def mirror(self) -> "StateKey":
        return StateKey(-self.imb_tenths, self.spread)

    def code(self) -> str:
        """Serialised form, e.g. ``-0.5|1`` or ``0.2|2+``."""
        return f"{format_bin(self.imb_tenths)}|{'2+' if self.spread else '1'}"

    @classmethod
    def from_code(cls, code: str) -> "StateKey":
        bin_s, spread_s = code.split("|")
        return cls(parse_bin(bin_s), SpreadClass.WIDE if spread_s == "2+" else SpreadClass.ONE)


ALL_STATES = tuple(
    StateKey(t, s) for s in (SpreadClass.ONE, SpreadClass.WIDE) for t in BIN_TENTHS
)


def state_index(state: StateKey) -> int:
    """Dense index in 0..41 used by the simulation engine's lookup tables."""
    return state.imb_tenths + 10 + N_BINS * state.spread


def format_bin(tenths: int) -> str:
    if tenths == 0:
        return "0"
    return f"{tenths / 10:.1f}"


def parse_bin(label: str) -> int:
    tenths = round(float(label) * 10)
    if not -10 <= tenths <= 10:
        raise OutOfRange(f"bin label {label!r} outside [-1, 1]")
    return tenths


def bin_imbalance(imb: float) -> int:
    """Bin label (in tenths) for an imbalance value in [-1, 1].

    Values numerically on an edge keep that edge's label: the left edge for
    negative bins, the right edge for positive ones.
    """
    if not -1.0 - _EDGE_TOL <= imb <= 1.0 + _EDGE_TOL:
        raise OutOfRange(f"imbalance {imb} outside [-1, 1]")
    scaled = imb * 10.0
    nearest = round(scaled)
    if abs(scaled - nearest) <= _EDGE_TOL:
        return min(10, max(-10, int(nearest)))
    return math.floor(scaled) if scaled < 0 else math.ceil(scaled)


def bin_best_units(bid_units: int, ask_units: int) -> int:
    """Exact integer-arithmetic binning of (q_-1 - q_1)/(q_-1 + q_1)."""
    num = 10 * (bid_units - ask_units)
    if num == 0:
        return 0
    den = bid_units + ask_units
    if num > 0:
        return -((-num) // den)  # ceil
    return num // den  # floor


def project(book) -> StateKey:
    """Project an order book onto its (imbalance bin, spread class) state."""
    tenths = bin_best_units(book.bid[0], book.ask[0])
    spread = SpreadClass.ONE if book.spread == 1 else SpreadClass.WIDE
    return StateKey(tenths, spread)


# When the spread is one tick: additions and cancellations at the first two
# levels on both sides, trades at the best queues. Canonical (sorted) order,
# trades last; the engine's biased sampler relies on this layout.
EVENTS_SPREAD_ONE: Tuple[EventKey, ...] = (
    EventKey(ADD, BID, 1),
    EventKey(ADD, BID, 2),
    EventKey(ADD, ASK, 1),
    EventKey(ADD, ASK, 2),
    EventKey(CANCEL, BID, 1),
    EventKey(CANCEL, BID, 2),
    EventKey(CANCEL, ASK, 1),
    EventKey(CANCEL, ASK, 2),
    TRADE_BID,
    TRADE_ASK,
)

# A wide spread is a transient state resolved exclusively by Create events.
EVENTS_WIDE: Tuple[EventKey, ...] = (CREATE_BID_EVENT, CREATE_ASK_EVENT)


def enumerate_events(state: StateKey) -> Tuple[EventKey, ...]:
    """The legal event set E(state); independent of the imbalance bin."""
    return EVENTS_WIDE if state.spread == SpreadClass.WIDE else EVENTS_SPREAD_ONE
