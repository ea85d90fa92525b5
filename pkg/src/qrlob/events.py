"""Event vocabulary: the (type, side, level) tuples the model recognises.

An event targets queue ``q_{side*level}``. Trades always hit the best queue
(level 1), Create events establish a new best level (level 0 by convention),
additions and cancellations target levels 1 or 2.
"""

from enum import IntEnum
from typing import NamedTuple


class EventKind(IntEnum):
    ADD = 0
    CANCEL = 1
    TRADE = 2
    CREATE_BID = 3
    CREATE_ASK = 4


BID = -1
ASK = +1

ADD = EventKind.ADD
CANCEL = EventKind.CANCEL
TRADE = EventKind.TRADE
CREATE_BID = EventKind.CREATE_BID
CREATE_ASK = EventKind.CREATE_ASK

# Codes used by the canonical CSV schema and bundle serialisation.
KIND_CODES = {ADD: "A", CANCEL: "C", TRADE: "T", CREATE_BID: "CB", CREATE_ASK: "CA"}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


class EventKey(NamedTuple):
    kind: int
    side: int  # -1 bid, +1 ask
    level: int  # 0 for Create, 1..2 otherwise

    def mirror(self) -> "EventKey":
        """The same event on the opposite side of the book."""
        kind = self.kind
        if kind == CREATE_BID:
            kind = CREATE_ASK
        elif kind == CREATE_ASK:
            kind = CREATE_BID
        return EventKey(kind, -self.side, self.level)

    def is_trade(self) -> bool:
        return self.kind == TRADE

    def is_create(self) -> bool:
        return self.kind == CREATE_BID or self.kind == CREATE_ASK

    def code(self) -> str:
        """Compact string form, e.g. ``A|-1|1`` or ``CB|-1|0``."""
        return f"{KIND_CODES[EventKind(self.kind)]}|{self.side:+d}|{self.level}"

    @classmethod
    def from_code(cls, code: str) -> "EventKey":
        kind_s, side_s, level_s = code.split("|")
        return cls(CODE_KINDS[kind_s], int(side_s), int(level_s))


# Convenience instances for the fixed event sets.
TRADE_BID = EventKey(TRADE, BID, 1)
TRADE_ASK = EventKey(TRADE, ASK, 1)
CREATE_BID_EVENT = EventKey(CREATE_BID, BID, 0)
CREATE_ASK_EVENT = EventKey(CREATE_ASK, ASK, 0)


def target_level(event: EventKey) -> int:
    """Book level whose MES prices the event's volume.

    Creates build a new best queue, so like trades they are expressed in
    level-1 units.
    """
    if event.level >= 1:
        return event.level
    return 1
