"""Event-driven simulation of the calibrated book model.

The loop projects the book onto its state, draws the next event, waiting
time and volume from the calibrated tables (tilting trade probabilities by
the impact/signal bias when enabled), applies the event, and feeds executed
trades back into the impact state. User market orders race the next market
event: they fill when they beat its waiting time, and otherwise fall back to
a pluggable fill probability.

The hot path deliberately avoids numpy: per-event work is a couple of bisect
calls on precompiled cumulative tables and integer book updates, which keeps
a single core above ~10^5 events per second.
"""

import math
import random
from array import array
from bisect import bisect_right
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .book import OrderBook, apply_event
from .calibrate import ParameterBundle
from .errors import CooldownViolation, IllegalEvent
from .events import ASK, BID, KIND_CODES, TRADE, EventKey
from .impact import ImpactState
from .ingest import sim_time_to_ts
from .state import (
    ALL_STATES,
    SpreadClass,
    StateKey,
    bin_best_units,
    enumerate_events,
    state_index,
)

ORIGIN_MARKET = 0
ORIGIN_USER = 1

_RNG_STREAMS = ("event", "volume", "timing", "revealed", "fill")


def derive_seed(seed: int, *key) -> int:
    """Deterministic child seed for a named stream or path index."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, *(hash(k) & 0xFFFFFFFF for k in key)])
    return int(ss.generate_state(1)[0])


class _Row:
    """Per-state sampling tables: event and volume cumulatives, timing."""

    __slots__ = ("events", "cum", "rest_cum", "p_bid", "p_ask", "p_rest", "vol_cum", "lam", "gmm")

    def __init__(self, state: StateKey, bundle: ParameterBundle):
        self.events = enumerate_events(state)
        probs = bundle.event_probs[state]
        ordered = [probs.get(e, 0.0) for e in self.events]
        total = sum(ordered)
        ordered = [p / total for p in ordered]
        acc, self.cum = 0.0, []
        for p in ordered:
            acc += p
            self.cum.append(acc)
        self.cum[-1] = 1.0
        if state.spread == SpreadClass.ONE:
            # Canonical order puts the two trades last: bid trade at -2, ask at -1.
            self.p_bid = ordered[-2]
            self.p_ask = ordered[-1]
            rest = ordered[:-2]
        else:
            self.p_bid = self.p_ask = 0.0
            rest = ordered
        self.p_rest = 1.0 - self.p_bid - self.p_ask
        acc, self.rest_cum = 0.0, []
        for p in rest:
            acc += p
            self.rest_cum.append(acc)

        self.vol_cum = []
        for e in self.events:
            hist = bundle.volumes[state][e]
            acc, cum = 0.0, []
            for p in hist:
                acc += p
                cum.append(acc)
            cum[-1] = 1.0
            self.vol_cum.append(cum)

        self.lam = bundle.intensity[state]
        if bundle.timing.mode == "gmm":
            self.gmm = []
            for e in self.events:
                mix = bundle.timing.mixture_for(state, e)
                acc, pi_cum = 0.0, []
                for w in mix.weights:
                    acc += w
                    pi_cum.append(acc)
                pi_cum[-1] = 1.0
                self.gmm.append((pi_cum, [float(m) for m in mix.means], [float(s) for s in mix.sigmas]))
        else:
            self.gmm = None


_table_cache: Dict[int, Tuple[object, List[_Row]]] = {}


def compile_tables(bundle: ParameterBundle) -> List[_Row]:
    key = id(bundle.event_probs)
    hit = _table_cache.get(key)
    if hit is not None and hit[0] is bundle.event_probs:
        return hit[1]
    rows = [None] * len(ALL_STATES)
    for s in ALL_STATES:
        rows[state_index(s)] = _Row(s, bundle)
    _table_cache[key] = (bundle.event_probs, rows)
    return rows


class EventLogEntry(NamedTuple):
    t_ns: int
    event: EventKey
    volume_units: int
    state: StateKey
    mid_half_ticks: int
    phi: float
    origin: int


class EventLog:
    """Columnar event log backed by typed arrays."""

    def __init__(self):
        self.t = array("q")
        self.kind = array("b")
        self.side = array("b")
        self.level = array("b")
        self.volume = array("h")
        self.imb = array("b")
        self.wide = array("b")
        self.mid = array("q")
        self.phi = array("d")
        self.origin = array("b")

    def __len__(self):
        return len(self.t)

    def append(self, t, kind, side, level, volume, imb, wide, mid, phi, origin):
        self.t.append(t)
        self.kind.append(kind)
        self.side.append(side)
        self.level.append(level)
        self.volume.append(volume)
        self.imb.append(imb)
        self.wide.append(wide)
        self.mid.append(mid)
        self.phi.append(phi)
        self.origin.append(origin)

    def column(self, name: str) -> np.ndarray:
        return np.frombuffer(getattr(self, name), dtype={"q": np.int64, "h": np.int16, "b": np.int8, "d": np.float64}[getattr(self, name).typecode])

    def entry(self, i: int) -> EventLogEntry:
        return EventLogEntry(
            self.t[i],
            EventKey(self.kind[i], self.side[i], self.level[i]),
            self.volume[i],
            StateKey(self.imb[i], self.wide[i]),
            self.mid[i],
            self.phi[i],
            self.origin[i],
        )

    def entries(self):
        for i in range(len(self)):
            yield self.entry(i)


class StreamSink:
    """Serialises simulated events as canonical depth CSV rows."""

    def __init__(self, fh, first_day: int = 0):
        self.fh = fh
        self.first_day = first_day
        self._side_code = {BID: "B", ASK: "S"}

    def __call__(self, t_ns, event, feed_units, book_before):
        bb, ba, bid, ask, mes = book_before
        kind, side, level = event
        if kind == TRADE:
            price = ba if side == ASK else bb
            out_level = 1
        elif level >= 1:
            price = (ba + level - 1) if side == ASK else (bb - level + 1)
            out_level = level
        elif side == BID:  # CreateBid one tick above the best bid
            price = bb + 1
            out_level = 0
        else:
            price = ba - 1
            out_level = 0
        lvl_mes = mes[level - 1] if level >= 1 else mes[0]
        snap = []
        for i in (4, 3, 2, 1):
            snap.append(str(bb - i + 1))
            snap.append(str(bid[i - 1] * mes[i - 1]))
        for i in (1, 2, 3, 4):
            snap.append(str(ba + i - 1))
            snap.append(str(ask[i - 1] * mes[i - 1]))
        ts = sim_time_to_ts(t_ns, self.first_day)
        self.fh.write(
            f"{ts},{_KIND_CODE[kind]},{self._side_code[side]},{out_level},"
            f"{price},{feed_units * lvl_mes}," + ",".join(snap) + "\n"
        )


_KIND_CODE = {int(k): v for k, v in KIND_CODES.items()}


@dataclass
class FillResult:
    filled_units: int
    requested_units: int
    price_ticks: int
    won_race: bool
    dt_next_ns: int


@dataclass
class EngineDiagnostics:
    n_market_events: int = 0
    n_user_fills: int = 0
    race_wins: int = 0
    race_losses: int = 0
    resampled_pending: int = 0


@dataclass
class SimConfig:
    """One simulation run's knobs; paths derive per-stream RNGs from `seed`."""

    bundle: ParameterBundle
    seed: int = 0
    horizon_ns: int = 0
    timing_mode: Optional[str] = None  # None: follow the bundle
    impact_enabled: bool = False
    self_impact: bool = True
    initial_bid_ticks: int = 3000
    p_fill: Optional[Callable[[int], float]] = None  # fill probability in lost races

    def resolved_timing(self) -> str:
        return self.timing_mode or self.bundle.timing.mode

    def with_impact_m(self, m: float) -> "SimConfig":
        return replace(self, bundle=self.bundle.with_impact(m), impact_enabled=m != 0.0)


def sample_dt(timing, state: StateKey, event: EventKey, rng: random.Random, intensity=None) -> int:
    """Waiting time in ns: exponential at the state's rate, or 10**x with x
    drawn from the fitted log10 mixture for (state, event)."""
    if timing.mode == "exp":
        dt = rng.expovariate(intensity[state]) * 1e9
        return max(1, int(dt))
    mix = timing.mixture_for(state, event)
    u = rng.random()
    acc, j = 0.0, 0
    for j, w in enumerate(mix.weights):
        acc += w
        if u <= acc:
            break
    x = rng.gauss(float(mix.means[j]), float(mix.sigmas[j]))
    if x < 0.0:
        x = 0.0
    elif x > 12.0:
        x = 12.0
    return max(1, int(10.0**x + 0.5))


class Engine:
    """Single-path simulator; one instance per Monte Carlo path."""

    def __init__(self, config: SimConfig, sink=None, collect_log: bool = True, book: Optional[OrderBook] = None):
        self.cfg = config
        bundle = config.bundle
        self.rows = compile_tables(bundle)
        self.timing_exp = config.resolved_timing() == "exp"
        self.sink = sink
        self.log = EventLog() if collect_log else None
        rngs = {name: random.Random(derive_seed(config.seed, name)) for name in _RNG_STREAMS}
        self.rng_event = rngs["event"]
        self.rng_volume = rngs["volume"]
        self.rng_timing = rngs["timing"]
        self.rng_revealed = rngs["revealed"]
        self.rng_fill = rngs["fill"]

        self._stationary_cum = {}
        for lvl, hist in bundle.stationary.items():
            acc, cum = 0.0, []
            for p in hist:
                acc += p
                cum.append(acc)
            cum[-1] = 1.0
            self._stationary_cum[lvl] = cum

        self.book = book if book is not None else self._initial_book()
        self.t_ns = 0
        self.impact = ImpactState(bundle.kernel)
        self.impact_params = bundle.impact
        self.signal_bias: Optional[Callable[[int], float]] = None
        self.diagnostics = EngineDiagnostics()
        self._pending: Optional[tuple] = None  # (t_due_ns, event_idx|None, volume|None)
        self._events_since_user_fill = 1 << 30

    # -- setup ---------------------------------------------------------------

    def revealed_sampler(self, level: int, rng) -> int:
        cum = self._stationary_cum[2 if level < 2 else level]
        return bisect_right(cum, rng.random())

    def _initial_book(self) -> OrderBook:
        # Stationary-law start at spread 1, best queues floored at one unit.
        rng = self.rng_revealed
        bid = [max(1, self.revealed_sampler(1, rng))] + [self.revealed_sampler(l, rng) for l in (2, 3, 4)]
        ask = [max(1, self.revealed_sampler(1, rng))] + [self.revealed_sampler(l, rng) for l in (2, 3, 4)]
        bb = self.cfg.initial_bid_ticks
        return OrderBook(bb, bb + 1, bid, ask, self.cfg.bundle.mes)

    # -- state helpers ---------------------------------------------------------

    def state_idx(self) -> int:
        book = self.book
        t = bin_best_units(book.bid[0], book.ask[0])
        return t + 10 + (21 if book.best_ask - book.best_bid >= 2 else 0)

    def current_state(self) -> StateKey:
        i = self.state_idx()
        return StateKey(i % 21 - 10, SpreadClass.WIDE if i >= 21 else SpreadClass.ONE)

    def _bias_at(self, t_ns: int) -> float:
        b = 0.0
        if self.cfg.impact_enabled:
            # phi decay inlined: this runs once per event when impact is on
            imp = self.impact
            dt = t_ns - imp.last_t_ns
            exp = math.exp
            phi = 0.0
            for c, r in zip(imp.components, imp.rates_ns):
                phi += c * exp(-r * dt)
            p = self.impact_params
            b = (p.m_plus if phi > 0.0 else p.m_minus) * phi
        if self.signal_bias is not None:
            b += self.signal_bias(t_ns)
        return b

    def _sample_event_idx(self, row: _Row, t_bias_ns: int) -> int:
        u = self.rng_event.random()
        if (self.cfg.impact_enabled or self.signal_bias is not None) and row.p_bid > 0.0:
            b = self._bias_at(t_bias_ns)
            if b != 0.0:
                f_bid = math.exp(b) if b > 0.0 else 1.0
                f_ask = math.exp(-b) if b < 0.0 else 1.0
                x = u * (row.p_rest + row.p_bid * f_bid + row.p_ask * f_ask)
                if x < row.p_rest:
                    return bisect_right(row.rest_cum, x)
                if x < row.p_rest + row.p_bid * f_bid:
                    return len(row.events) - 2
                return len(row.events) - 1
        idx = bisect_right(row.cum, u)
        return idx if idx < len(row.events) else len(row.events) - 1

    def _sample_volume(self, row: _Row, idx: int) -> int:
        v = bisect_right(row.vol_cum[idx], self.rng_volume.random()) + 1
        return v if v <= 50 else 50

    def _sample_dt_ns(self, row: _Row, idx: Optional[int]) -> int:
        if self.timing_exp:
            dt = self.rng_timing.expovariate(row.lam) * 1e9
            return max(1, int(dt))
        pi_cum, mus, sigmas = row.gmm[idx]
        j = bisect_right(pi_cum, self.rng_timing.random())
        if j >= len(mus):
            j = len(mus) - 1
        x = self.rng_timing.gauss(mus[j], sigmas[j])
        if x < 0.0:
            x = 0.0
        elif x > 12.0:
            x = 12.0
        return max(1, int(10.0**x + 0.5))

    # -- core loop -------------------------------------------------------------

    def _ensure_pending(self) -> tuple:
        if self._pending is None:
            row = self.rows[self.state_idx()]
            if self.timing_exp:
                # Event identity is drawn at arrival so the bias is evaluated
                # at the event time, matching the likelihood's b_n = m*phi(t_n).
                self._pending = (self.t_ns + self._sample_dt_ns(row, None), None, None)
            else:
                idx = self._sample_event_idx(row, self.t_ns)
                dt = self._sample_dt_ns(row, idx)
                self._pending = (self.t_ns + dt, row.events[idx], self._sample_volume(row, idx))
        return self._pending

    def peek_next_dt(self) -> int:
        return self._ensure_pending()[0] - self.t_ns

    def step(self) -> None:
        """Advance the simulation by one market event."""
        si = self.state_idx()
        row = self.rows[si]
        pending = self._pending
        if pending is None:
            if self.timing_exp:
                t_due = self.t_ns + self._sample_dt_ns(row, None)
                idx = self._sample_event_idx(row, t_due)
            else:
                idx = self._sample_event_idx(row, self.t_ns)
                t_due = self.t_ns + self._sample_dt_ns(row, idx)
            event = row.events[idx]
            vol = self._sample_volume(row, idx)
        else:
            self._pending = None
            t_due, event, vol = pending
            if event is None:
                idx = self._sample_event_idx(row, t_due)
                event = row.events[idx]
                vol = self._sample_volume(row, idx)
            elif event not in row.events:
                # A user fill between peek and consumption moved the spread class.
                idx = self._sample_event_idx(row, t_due)
                event = row.events[idx]
                vol = self._sample_volume(row, idx)
                self.diagnostics.resampled_pending += 1
        # A user fill may have advanced the clock to the pending due time;
        # log timestamps stay strictly increasing.
        self.t_ns = t_due if t_due > self.t_ns else self.t_ns + 1
        self._apply_and_record(event, vol, si % 21 - 10, 1 if si >= 21 else 0, ORIGIN_MARKET)
        self.diagnostics.n_market_events += 1
        self._events_since_user_fill += 1

    def _apply_and_record(self, event: EventKey, volume: int, imb_tenths: int, wide: int, origin: int) -> int:
        """Apply the event; log and serialise its feed-visible volume.

        Market events carry the sampled model volume (a public feed reports
        the aggregated order size even when it exceeds the queue it hit, and
        a cancel race that found nothing left is still a message); user
        fills carry what actually executed. The book itself only ever moves
        by the executed amount.
        """
        book = self.book
        snap = (book.best_bid, book.best_ask, tuple(book.bid), tuple(book.ask), book.mes) if self.sink else None
        report = apply_event(book, event, volume, self.revealed_sampler, self.rng_revealed, strict=False)
        executed = report.executed_units
        feed_volume = volume if origin == ORIGIN_MARKET else executed
        t = self.t_ns
        if event.kind == TRADE and self.cfg.impact_enabled:
            if origin == ORIGIN_MARKET:
                self.impact.register_trade(t, event.side, feed_volume)
            elif self.cfg.self_impact and executed > 0:
                self.impact.register_trade(t, event.side, executed)
        if self.log is not None:
            phi = self.impact.phi(t) if self.cfg.impact_enabled else 0.0
            self.log.append(
                t, event.kind, event.side, event.level, feed_volume,
                imb_tenths, wide, book.best_bid + book.best_ask, phi, origin,
            )
        if self.sink is not None:
            self.sink(t, event, feed_volume, snap)
        return executed

    def run(self, horizon_ns: Optional[int] = None) -> Optional[EventLog]:
        horizon = self.cfg.horizon_ns if horizon_ns is None else horizon_ns
        while self.t_ns < horizon:
            self.step()
        return self.log

    def run_until(self, t_target_ns: int) -> None:
        """Consume market events due at or before `t_target_ns`."""
        while self._ensure_pending()[0] <= t_target_ns:
            self.step()

    # -- user orders -------------------------------------------------------------

    def can_submit(self) -> bool:
        return self._events_since_user_fill >= 1

    def _fill(self, side: int, size_units: int, t_fill_ns: int, cap: Optional[int] = None) -> Tuple[int, int]:
        book = self.book
        depth = book.ask[0] if side == ASK else book.bid[0]
        price = book.best_ask if side == ASK else book.best_bid
        executed = min(size_units, depth if cap is None else min(depth, cap))
        if executed <= 0:
            return 0, price
        self.t_ns = max(t_fill_ns, self.t_ns + 1)
        si = self.state_idx()
        self._apply_and_record(EventKey(TRADE, side, 1), executed, si % 21 - 10, 1 if si >= 21 else 0, ORIGIN_USER)
        self.diagnostics.n_user_fills += 1
        self._events_since_user_fill = 0
        return executed, price

    def submit_market_order(self, side: int, size_units: int, latency_ns: int, p_fill=None) -> FillResult:
        """Race the next market event with round-trip latency `latency_ns`.

        The order fills (up to the touched queue's depth) when the next
        waiting time exceeds the latency; otherwise it lost the race and fills
        only with probability ``p_fill(dt)``, after the winning event.
        """
        if size_units < 1:
            raise IllegalEvent("order size must be >= 1 unit")
        if not self.can_submit():
            raise CooldownViolation("a market event must occur between user trades")
        dt_next = self.peek_next_dt()
        if dt_next > latency_ns:
            executed, price = self._fill(side, size_units, self.t_ns + latency_ns)
            self.diagnostics.race_wins += 1
            return FillResult(executed, size_units, price, True, dt_next)
        self.diagnostics.race_losses += 1
        pf = p_fill if p_fill is not None else self.cfg.p_fill
        prob = pf(dt_next) if callable(pf) else (pf or 0.0)
        if prob > 0.0 and self.rng_fill.random() < prob:
            depth_at_submit = self.book.ask[0] if side == ASK else self.book.bid[0]
            self.step()  # the race winner arrives first
            executed, price = self._fill(side, size_units, self.t_ns + 1, cap=depth_at_submit)
            return FillResult(executed, size_units, price, False, dt_next)
        return FillResult(0, size_units, self.book.best_ask if side == ASK else self.book.best_bid, False, dt_next)

    def force_user_trade(self, side: int, size_units: int, t_ns: Optional[int] = None) -> Tuple[int, int]:
        """Fill a child order unconditionally (no race, no cooldown)."""
        return self._fill(side, size_units, self.t_ns + 1 if t_ns is None else t_ns)


# ---------------------------------------------------------------------------
# Metaorder experiment


@dataclass
class MetaorderSpec:
    """TWAP parent order: equally spaced, equally sized child market orders."""

    n_children: int
    child_size_units: int = 2
    exec_horizon_ns: int = 600_000_000_000  # 10 min
    observe_horizon_ns: int = 3_600_000_000_000  # 60 min
    side: int = ASK  # buy
    warmup_ns: int = 0
    n_grid: int = 60

    def child_times(self) -> List[int]:
        step = self.exec_horizon_ns // self.n_children
        return [k * step for k in range(self.n_children)]


@dataclass
class MetaorderResult:
    grid_s: np.ndarray
    avg_path_half_ticks: np.ndarray
    normalized_path: np.ndarray
    peak_half_ticks: float
    child_cum_volume: np.ndarray
    child_avg_impact: np.ndarray
    n_paths: int

    def loglog_slope(self) -> float:
        """Regression slope of log impact vs log executed volume."""
        mask = (self.child_avg_impact > 0) & (self.child_cum_volume > 0)
        x = np.log(self.child_cum_volume[mask])
        y = np.log(self.child_avg_impact[mask])
        if len(x) < 2:
            return float("nan")
        return float(np.polyfit(x, y, 1)[0])


def _metaorder_path_block(config: SimConfig, spec: MetaorderSpec, path_range) -> tuple:
    grid = np.linspace(0, spec.observe_horizon_ns, spec.n_grid + 1)[1:].astype(np.int64)
    child_times = spec.child_times()
    sum_path = np.zeros(len(grid))
    sum_child_impact = np.zeros(len(child_times))
    sum_child_volume = np.zeros(len(child_times))
    for p in path_range:
        cfg = replace(config, seed=derive_seed(config.seed, "path", p))
        eng = Engine(cfg, collect_log=False)
        eng.run_until(spec.warmup_ns)
        t0 = eng.t_ns
        mid0 = eng.book.best_bid + eng.book.best_ask
        checkpoints = sorted(
            [(t0 + t, "child", i) for i, t in enumerate(child_times)]
            + [(t0 + int(t), "grid", i) for i, t in enumerate(grid)]
        )
        cum_vol = 0
        for t_cp, kind, i in checkpoints:
            eng.run_until(t_cp)
            if kind == "child":
                executed, _ = eng.force_user_trade(spec.side, spec.child_size_units, max(t_cp, eng.t_ns + 1))
                cum_vol += executed
                sum_child_volume[i] += cum_vol
                sum_child_impact[i] += eng.book.best_bid + eng.book.best_ask - mid0
            else:
                sum_path[i] += eng.book.best_bid + eng.book.best_ask - mid0
    return sum_path, sum_child_impact, sum_child_volume


def run_metaorder_experiment(
    config: SimConfig, spec: MetaorderSpec, n_paths: int, threads: int = 1
) -> MetaorderResult:
    """Average impact path over simulated metaorders.

    Children always fill (the experiment measures impact, not fill risk).
    Mid moves are recorded relative to the pre-execution mid on a fixed grid
    and around every child. Paths use per-index seeds derived from the config
    seed, so repeated runs (e.g. during m calibration) share their randomness
    and the result is independent of `threads`.
    """
    grid = np.linspace(0, spec.observe_horizon_ns, spec.n_grid + 1)[1:].astype(np.int64)
    if threads > 1 and n_paths >= 2 * threads:
        from concurrent.futures import ProcessPoolExecutor

        blocks = [range(w, n_paths, threads) for w in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(_metaorder_path_block, [config] * threads, [spec] * threads, blocks))
        sum_path = sum(p[0] for p in parts)
        sum_child_impact = sum(p[1] for p in parts)
        sum_child_volume = sum(p[2] for p in parts)
    else:
        sum_path, sum_child_impact, sum_child_volume = _metaorder_path_block(config, spec, range(n_paths))
    avg_path = sum_path / n_paths
    exec_end_idx = int(np.searchsorted(grid, spec.exec_horizon_ns))
    exec_end_idx = min(max(exec_end_idx, 1), len(grid) - 1)
    peak = avg_path[exec_end_idx]
    denom = peak if abs(peak) > 1e-12 else 1.0
    return MetaorderResult(
        grid_s=grid * 1e-9,
        avg_path_half_ticks=avg_path,
        normalized_path=avg_path / denom,
        peak_half_ticks=peak,
        child_cum_volume=sum_child_volume / n_paths,
        child_avg_impact=sum_child_impact / n_paths,
        n_paths=n_paths,
    )
