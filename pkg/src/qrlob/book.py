"""Order book state and event application.

Queues are indexed relative to the current best: ``bid[0]`` is the best bid
queue, ``bid[3]`` the fourth bid level, and symmetrically for asks. Queue
sizes are integers in per-level median-event-size (MES) units. Level ``i``
rests ``i - 1`` ticks behind the best on its side, so a depleted best queue
shifts the whole window inward and a Create event shifts it outward.

The mid-price lives on a half-tick grid (``best_bid + best_ask``) so that all
price arithmetic stays integral.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Tuple

from .errors import IllegalEvent
from .events import ADD, ASK, BID, CANCEL, CREATE_ASK, CREATE_BID, TRADE, EventKey

DEPTH = 4


def normalize_size(raw_shares: int, mes_shares: int) -> int:
    """Shares to MES units, rounded up."""
    return -((-raw_shares) // mes_shares)


def re_express_units(units: int, mes_from: int, mes_to: int, at_best: bool = False) -> int:
    """Convert a queue size between the MES of two levels (rounding up).

    A queue promoted to best is floored at one unit: best queues are never
    empty by definition.
    """
    u = -((-units * mes_from) // mes_to)
    if at_best and u < 1:
        return 1
    return u


@dataclass
class BookDiagnostics:
    """Counters for off-model situations absorbed during simulation."""

    clamped_cancels: int = 0  # cancel floored at the best queue or an empty deeper queue
    dropped_trade_units: int = 0  # residual trade volume beyond the best queue
    exhausted_side: int = 0  # depletion with q2..q4 all empty
    floored_best: int = 0  # revealed best queue sampled at 0, floored to 1


@dataclass
class PriceMoveReport:
    """Outcome of one applied event."""

    mid_move_half_ticks: int = 0
    levels_shifted: int = 0
    revealed_levels: List[Tuple[int, int]] = field(default_factory=list)
    executed_units: int = 0


class OrderBook:
    """Tracked book window: best prices in ticks, four queues per side."""

    __slots__ = ("best_bid", "best_ask", "bid", "ask", "mes", "diag")

    def __init__(self, best_bid: int, best_ask: int, bid_units, ask_units, mes):
        self.best_bid = best_bid
        self.best_ask = best_ask
        self.bid = list(bid_units)
        self.ask = list(ask_units)
        self.mes = list(mes)
        self.diag = BookDiagnostics()
        self.check()

    @property
    def spread(self) -> int:
        return self.best_ask - self.best_bid

    @property
    def mid_half_ticks(self) -> int:
        return self.best_bid + self.best_ask

    def copy(self) -> "OrderBook":
        return OrderBook(self.best_bid, self.best_ask, self.bid, self.ask, self.mes)

    def mirror(self) -> "OrderBook":
        """Bid/ask-swapped book around the same mid (for symmetry tests)."""
        return OrderBook(self.best_bid, self.best_ask, self.ask, self.bid, self.mes)

    def check(self) -> None:
        assert self.best_ask - self.best_bid >= 1, "spread must be >= 1 tick"
        assert len(self.bid) == DEPTH and len(self.ask) == DEPTH
        assert self.bid[0] >= 1 and self.ask[0] >= 1, "best queues are never empty"
        assert all(q >= 0 for q in self.bid) and all(q >= 0 for q in self.ask)
        assert all(m >= 1 for m in self.mes)

    def __repr__(self):
        return (
            f"OrderBook(bid={self.best_bid}x{self.bid}, "
            f"ask={self.best_ask}x{self.ask}, n={self.spread})"
        )


def imbalance(book: OrderBook) -> float:
    """Best-level volume imbalance in [-1, 1], computed on MES units."""
    b, a = book.bid[0], book.ask[0]
    return (b - a) / (b + a)


def _shift_inward(book: OrderBook, side: int, revealed_sampler, rng, report: PriceMoveReport):
    """Reindex a side after its best queue fully depleted.

    The first nonempty deeper queue becomes the new best; queue volumes are
    re-expressed in their new level's MES and newly revealed deep levels are
    sampled from the empirical stationary law.
    """
    queue = book.ask if side == ASK else book.bid
    mes = book.mes
    shift = 0
    for j in range(1, DEPTH):
        if queue[j] > 0:
            shift = j
            break
    else:
        shift = DEPTH
        book.diag.exhausted_side += 1

    new_queue = []
    for lvl in range(DEPTH):
        src = lvl + shift
        if src < DEPTH:
            u = queue[src]
            if u > 0:
                u = re_express_units(u, mes[src], mes[lvl], at_best=(lvl == 0))
            new_queue.append(u)
        else:
            u = revealed_sampler(lvl + 1, rng)
            report.revealed_levels.append((lvl + 1, u))
            new_queue.append(u)
    if new_queue[0] < 1:
        new_queue[0] = 1
        book.diag.floored_best += 1

    queue[:] = new_queue
    if side == ASK:
        book.best_ask += shift
    else:
        book.best_bid -= shift
    report.levels_shifted = shift


def _create_best(book: OrderBook, side: int, units: int):
    """Insert a new best queue one tick inside the spread on `side`."""
    queue = book.bid if side == BID else book.ask
    mes = book.mes
    shifted = [units]
    for lvl in range(DEPTH - 1):  # old level lvl+1 moves to lvl+2; old deepest drops
        u = queue[lvl]
        if u > 0:
            u = re_express_units(u, mes[lvl], mes[lvl + 1])
        shifted.append(u)
    queue[:] = shifted
    if side == BID:
        book.best_bid += 1
    else:
        book.best_ask -= 1


def apply_event(
    book: OrderBook,
    event: EventKey,
    volume_units: int,
    revealed_sampler: Callable,
    rng,
    strict: bool = True,
) -> PriceMoveReport:
    """Apply one event to the book and report any price move.

    `revealed_sampler(level, rng)` supplies sizes for levels uncovered by a
    shift. With ``strict`` the event must belong to E(state): Creates only at
    spread >= 2, everything else only at spread 1. Creates are rejected at
    spread 1 regardless since there is no room inside the spread.
    """
    kind, side, level = event
    wide = book.spread >= 2
    if event.is_create():
        if not wide:
            raise IllegalEvent(f"{event} requires spread >= 2")
    elif strict and wide:
        raise IllegalEvent(f"{event} illegal while spread is {book.spread}")
    if volume_units < 1:
        raise IllegalEvent("volume must be >= 1 unit")

    report = PriceMoveReport()
    mid_before = book.best_bid + book.best_ask
    queue = book.bid if side == BID else book.ask

    if kind == ADD:
        queue[level - 1] += volume_units
        report.executed_units = volume_units
    elif kind == CANCEL:
        lvl = level - 1
        avail = queue[lvl] - 1 if lvl == 0 else queue[lvl]
        x = volume_units if volume_units < avail else avail
        if x < volume_units:
            book.diag.clamped_cancels += 1
        if x > 0:
            queue[lvl] -= x
            report.executed_units = x
    elif kind == TRADE:
        x = volume_units if volume_units < queue[0] else queue[0]
        queue[0] -= x
        report.executed_units = x
        if x < volume_units:
            book.diag.dropped_trade_units += volume_units - x
        if queue[0] == 0:
            _shift_inward(book, side, revealed_sampler, rng, report)
    elif kind == CREATE_BID or kind == CREATE_ASK:
        _create_best(book, BID if kind == CREATE_BID else ASK, volume_units)
        report.executed_units = volume_units
    else:
        raise IllegalEvent(f"unknown event kind {kind}")

    report.mid_move_half_ticks = book.best_bid + book.best_ask - mid_before
    return report
