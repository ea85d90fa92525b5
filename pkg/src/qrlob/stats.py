"""Validation statistics over event logs.

Every statistic here is a pure fold over a (simulated or ingested) event
log; reports are emitted as CSV files with a one-line JSON metadata header
so any plotting tool can consume them.
"""

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engine import ORIGIN_MARKET, EventLog
from .events import ADD, CANCEL, CREATE_ASK, CREATE_BID, TRADE
from .errors import EmptyLog, InsufficientBins, InsufficientTrades
from .ingest import SESSION_LEN_NS
from .state import BIN_TENTHS, EVENTS_SPREAD_ONE, SpreadClass, StateKey

FIVE_MIN_NS = 300_000_000_000
BINS_PER_DAY = SESSION_LEN_NS // FIVE_MIN_NS  # 66


def event_type_distribution(log: EventLog) -> Dict[str, float]:
    """Proportions of Add / Cancel / Trade / Create events."""
    if len(log) == 0:
        raise EmptyLog("empty event log")
    kinds = log.column("kind")
    n = len(kinds)
    return {
        "Add": float(np.count_nonzero(kinds == ADD)) / n,
        "Cancel": float(np.count_nonzero(kinds == CANCEL)) / n,
        "Trade": float(np.count_nonzero(kinds == TRADE)) / n,
        "Create": float(np.count_nonzero((kinds == CREATE_BID) | (kinds == CREATE_ASK))) / n,
    }


def _imbalance_histogram(imb_tenths: np.ndarray) -> np.ndarray:
    hist = np.zeros(21)
    if len(imb_tenths):
        counts = np.bincount(imb_tenths + 10, minlength=21)
        hist = counts / counts.sum()
    return hist


def imbalance_before_trades(log: EventLog, delta_ns: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Histogram of the pre-trade imbalance bin, optionally split by speed.

    With a round-trip delay, trades are keyed "fast" when their waiting time
    is at most delta (race reactions) and "control" otherwise.
    """
    kinds = log.column("kind")
    trades = kinds == TRADE
    imb = log.column("imb").astype(int)
    if delta_ns is None:
        return {"all": _imbalance_histogram(imb[trades])}
    t = log.column("t")
    dt = np.empty(len(t), dtype=np.int64)
    dt[0] = np.iinfo(np.int64).max  # first event has no waiting time
    dt[1:] = np.diff(t)
    fast = trades & (dt <= delta_ns)
    control = trades & (dt > delta_ns)
    return {
        "fast": _imbalance_histogram(imb[fast]),
        "control": _imbalance_histogram(imb[control]),
    }


def realized_vol_5m(prices: Sequence[float]) -> float:
    """Root-mean-square of consecutive 5-minute price changes."""
    p = np.asarray(prices, dtype=float)
    if len(p) < 2:
        raise InsufficientBins("need at least two price bins")
    d = np.diff(p)
    return float(np.sqrt((d @ d) / (len(p) - 1)))


def last_trade_prices_5m(log: EventLog) -> List[np.ndarray]:
    """Per-session series of last-traded prices per 5-minute bin.

    Trades in this model execute at the touched best quote one half-tick off
    the pre-trade mid; empty bins carry the previous price forward.
    """
    t = log.column("t")
    kinds = log.column("kind")
    sides = log.column("side")
    mids = log.column("mid")
    trade_idx = np.flatnonzero(kinds == TRADE)
    trade_idx = trade_idx[trade_idx > 0]
    if len(trade_idx) == 0:
        return []
    # Execution price in half-ticks from the pre-trade mid and touched side.
    price_half = mids[trade_idx - 1] + sides[trade_idx]
    tt = t[trade_idx]
    out = []
    n_days = int(t[-1] // SESSION_LEN_NS) + 1
    for day in range(n_days):
        lo, hi = day * SESSION_LEN_NS, (day + 1) * SESSION_LEN_NS
        mask = (tt >= lo) & (tt < hi)
        if not mask.any():
            continue
        bins = ((tt[mask] - lo) // FIVE_MIN_NS).astype(int)
        series = np.full(int(BINS_PER_DAY), np.nan)
        for b, p in zip(bins, price_half[mask] / 2.0):
            series[b] = p
        # forward-fill, then back-fill the leading gap
        last = np.nan
        for i in range(len(series)):
            if np.isnan(series[i]):
                series[i] = last
            else:
                last = series[i]
        first_valid = series[~np.isnan(series)]
        if len(first_valid) == 0:
            continue
        series[np.isnan(series)] = first_valid[0]
        out.append(series)
    return out


def daily_realized_vols(log: EventLog) -> List[float]:
    return [realized_vol_5m(day) for day in last_trade_prices_5m(log)]


def mid_series_5m(log: EventLog) -> np.ndarray:
    """Mid price (ticks) at each 5-minute boundary, last-observation carried."""
    t = log.column("t")
    mids = log.column("mid") / 2.0
    edges = np.arange(FIVE_MIN_NS, t[-1] + 1, FIVE_MIN_NS)
    idx = np.searchsorted(t, edges, side="right") - 1
    idx = idx[idx >= 0]
    return mids[idx]


def returns_5m(log: EventLog) -> np.ndarray:
    """Five-minute mid-to-mid returns in ticks."""
    series = mid_series_5m(log)
    if len(series) < 2:
        raise InsufficientBins("need at least two 5-minute bins")
    return np.diff(series)


def return_histogram(returns: np.ndarray, max_abs: int = 10) -> Tuple[np.ndarray, np.ndarray]:
    edges = np.arange(-max_abs - 0.5, max_abs + 1.0, 1.0)
    counts, _ = np.histogram(np.clip(returns, -max_abs, max_abs), bins=edges)
    return edges, counts / counts.sum()


def qq_pairs(sample: Sequence[float], reference: Sequence[float], n_quantiles: int = 99) -> np.ndarray:
    """Matched empirical quantiles (reference, sample) at percentile points."""
    qs = np.linspace(1, 99, n_quantiles)
    return np.column_stack(
        [np.percentile(np.asarray(reference, dtype=float), qs), np.percentile(np.asarray(sample, dtype=float), qs)]
    )


def trade_signs(log: EventLog) -> np.ndarray:
    kinds = log.column("kind")
    sides = log.column("side")
    return sides[kinds == TRADE].astype(float)


def trade_sign_autocorrelation(log: EventLog, max_lag: int) -> np.ndarray:
    """Sample autocorrelation of trade signs at lags 1..max_lag."""
    eps = trade_signs(log)
    if len(eps) < max_lag + 1:
        raise InsufficientTrades(f"{len(eps)} trades for max lag {max_lag}")
    eps = eps - eps.mean()
    denom = float(eps @ eps)
    if denom == 0.0:
        return np.zeros(max_lag)
    return np.array([float(eps[:-k] @ eps[k:]) / denom for k in range(1, max_lag + 1)])


def hourly_volume(log: EventLog) -> np.ndarray:
    """Traded volume (MES units) per simulated hour."""
    t = log.column("t")
    kinds = log.column("kind")
    vols = log.column("volume")
    trades = kinds == TRADE
    hours = (t[trades] // 3_600_000_000_000).astype(int)
    if len(hours) == 0:
        return np.zeros(0)
    return np.bincount(hours, weights=vols[trades])


def mid_drift_by_chunk(log: EventLog, chunk_ns: int = 3_600_000_000_000) -> np.ndarray:
    """Mid change (half-ticks) over consecutive fixed-length chunks."""
    t = log.column("t")
    mids = log.column("mid")
    edges = np.arange(0, t[-1] + chunk_ns, chunk_ns)
    idx = np.searchsorted(t, edges, side="right") - 1
    idx = np.clip(idx, 0, len(mids) - 1)
    series = mids[idx]
    return np.diff(series).astype(float)


def log10_dt_histogram(log: EventLog, lo: float = 3.0, hi: float = 8.0, width: float = 0.01):
    t = log.column("t")
    if len(t) < 2:
        raise EmptyLog("need two events for waiting times")
    dts = np.diff(t).astype(float)
    dts = dts[dts > 0]
    counts, edges = np.histogram(np.log10(dts), bins=round((hi - lo) / width), range=(lo, hi))
    total = counts.sum()
    return edges, counts / total if total else counts.astype(float)


# ---------------------------------------------------------------------------
# Parameter stability across calibration windows


@dataclass
class StabilityReport:
    bins: List[int]
    prob_curves: Dict[str, List[np.ndarray]]  # event code -> one curve per window
    mean_dt_curves: List[np.ndarray]  # seconds, one per window
    max_abs_prob_deviation: float
    mean_dt_rank_correlation: float


def _rankdata(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x)
    ranks = np.empty(len(x))
    ranks[order] = np.arange(len(x), dtype=float)
    return ranks


def stability_report(bundles: Sequence) -> StabilityReport:
    """Overlay event probabilities and mean waiting times across windows."""
    if len(bundles) < 2:
        raise EmptyLog("need at least two calibration windows")
    bins = list(BIN_TENTHS)
    prob_curves: Dict[str, List[np.ndarray]] = {e.code(): [] for e in EVENTS_SPREAD_ONE}
    dt_curves = []
    for b in bundles:
        for e in EVENTS_SPREAD_ONE:
            prob_curves[e.code()].append(
                np.array([b.event_probs[StateKey(t, SpreadClass.ONE)].get(e, 0.0) for t in bins])
            )
        dt_curves.append(
            np.array([1.0 / b.intensity[StateKey(t, SpreadClass.ONE)] for t in bins])
        )
    max_dev = 0.0
    for curves in prob_curves.values():
        stacked = np.vstack(curves)
        max_dev = max(max_dev, float((stacked.max(axis=0) - stacked.min(axis=0)).max()))
    rank_corrs = []
    base = _rankdata(dt_curves[0])
    for other in dt_curves[1:]:
        r = _rankdata(other)
        c = np.corrcoef(base, r)[0, 1]
        rank_corrs.append(c)
    return StabilityReport(
        bins=bins,
        prob_curves=prob_curves,
        mean_dt_curves=dt_curves,
        max_abs_prob_deviation=max_dev,
        mean_dt_rank_correlation=float(min(rank_corrs)),
    )


# ---------------------------------------------------------------------------
# Report output: CSV with a one-line JSON metadata header


def write_stat_csv(path: str, name: str, params: Dict, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"statistic": name, **params}, sort_keys=True) + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_stat_csv(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        meta = json.loads(fh.readline())
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return meta, header, rows


def write_validation_report(
    out_dir: str,
    log: EventLog,
    delta_ns: Optional[int] = None,
    reference_returns: Optional[Sequence[float]] = None,
    provenance: str = "",
    bootstrap_seed: int = 0,
) -> List[str]:
    """Emit every §-style validation panel as a CSV; returns written paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    meta = {"provenance": provenance}
    paths = []

    def emit(fname, name, header, rows, extra=None):
        p = os.path.join(out_dir, fname)
        write_stat_csv(p, name, {**meta, **(extra or {})}, header, rows)
        paths.append(p)

    dist = event_type_distribution(log)
    emit("event_types.csv", "event_type_distribution", ["event", "proportion"], dist.items())

    hists = imbalance_before_trades(log, delta_ns)
    for key, hist in hists.items():
        emit(
            f"imbalance_before_trades_{key}.csv",
            "imbalance_before_trades",
            ["bin", "mass"],
            zip([t / 10 for t in BIN_TENTHS], hist),
            {"split": key, "delta_ns": delta_ns},
        )

    vols = daily_realized_vols(log)
    emit("realized_vol_5m.csv", "realized_vol_5m", ["day", "sigma_ticks"], enumerate(vols))

    try:
        rets = returns_5m(log)
        edges, masses = return_histogram(rets)
        centers = 0.5 * (edges[:-1] + edges[1:])
        emit("returns_5m_hist.csv", "returns_5m_histogram", ["ticks", "mass"], zip(centers, masses))
        if reference_returns is not None:
            pairs = qq_pairs(rets, reference_returns)
            emit("returns_5m_qq.csv", "returns_5m_qq", ["reference_q", "simulated_q"], pairs)
    except InsufficientBins:
        pass

    hv = hourly_volume(log)
    emit("hourly_volume.csv", "hourly_volume", ["hour", "units"], enumerate(hv))

    edges, masses = log10_dt_histogram(log)
    centers = 0.5 * (edges[:-1] + edges[1:])
    emit("log10_dt_hist.csv", "log10_dt_histogram", ["log10_dt_ns", "mass"], zip(centers, masses))

    try:
        acf = trade_sign_autocorrelation(log, 20)
        emit("trade_sign_acf.csv", "trade_sign_autocorrelation", ["lag", "acf"], enumerate(acf, 1))
    except InsufficientTrades:
        pass
    return paths
