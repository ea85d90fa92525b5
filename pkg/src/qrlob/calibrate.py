"""Maximum-likelihood estimation of every model parameter from transitions.

Event probabilities are empirical frequencies per state, the total intensity
is the inverse mean waiting time, and volume distributions are per-cell
empirical histograms. All statistics are symmetrised between bid and ask
(mirror states averaged), sparse states inherit the nearest populated bin
toward zero, and the result is packaged into a versioned ParameterBundle.
"""

import json
import math
from array import array
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import Corrupt, EmptyDataset, InsufficientData, NoData, SchemaVersionMismatch
from .events import ADD, CANCEL, CREATE_ASK, CREATE_BID, TRADE, EventKey, EventKind, target_level
from .gmm import Mixture1D, bic, fit_gmm
from .impact import ImpactParams, KernelSpec, fit_exponential_weights
from .ingest import VOLUME_CAP_UNITS, RawDepthEvent, Transition
from .state import ALL_STATES, BIN_TENTHS, SpreadClass, StateKey, enumerate_events

BUNDLE_VERSION = "qrlob-bundle/1"

SPARSE_STATE_THRESHOLD = 100  # observations below which a state inherits a donor bin

# Latency histogram: log10(dt in ns) on [3, 8] with 0.01-wide bins.
DELTA_HIST_RANGE = (3.0, 8.0)
DELTA_HIST_WIDTH = 0.01
DELTA_MIN_SAMPLES = 10_000
DELTA_PEAK_FRACTION = 0.7
DEFAULT_DELTA_NS = 29_512  # 10**4.47, the exchange round-trip mode

EventProbTable = Dict[StateKey, Dict[EventKey, float]]
IntensityTable = Dict[StateKey, float]
VolumeDist = Dict[StateKey, Dict[EventKey, np.ndarray]]
StationaryDist = Dict[int, np.ndarray]


# ---------------------------------------------------------------------------
# Median event size


def compute_mes(events: Iterable[RawDepthEvent], level: int) -> int:
    """Median event size in shares at a queue level, pooled across sides.

    Trades and Creates count toward level 1. Even-sized pools take the lower
    median.
    """
    sizes = sorted(
        e.size_shares
        for e in events
        if (e.level if e.action in (ADD, CANCEL) else 1) == level
    )
    if not sizes:
        raise NoData(level)
    return sizes[(len(sizes) - 1) // 2]


def mes_table(events: Sequence[RawDepthEvent], warnings: Optional[List[str]] = None) -> List[int]:
    """MES for levels 1..4; deep levels without data inherit the shallower one."""
    mes: List[int] = []
    for level in range(1, 5):
        try:
            mes.append(compute_mes(events, level))
        except NoData:
            if not mes:
                raise
            if warnings is not None:
                warnings.append(f"no events at level {level}; inheriting MES of level {level - 1}")
            mes.append(mes[-1])
    return mes


# ---------------------------------------------------------------------------
# Sufficient statistics (a parallel-foldable accumulator)


class SufficientStats:
    """Counts, waiting-time sums, volume histograms and timing samples.

    Merging two accumulators is associative, so estimation can shard by day
    and fold.
    """

    def __init__(self):
        self.state_count: Dict[StateKey, int] = {}
        self.event_count: Dict[StateKey, Dict[EventKey, int]] = {}
        self.dt_sum_ns: Dict[StateKey, int] = {}
        self.volume_count: Dict[StateKey, Dict[EventKey, np.ndarray]] = {}
        self.log_dt: Dict[Tuple[StateKey, EventKey], array] = {}

    def add(self, tr: Transition) -> None:
        s, e = tr.state, tr.event
        self.state_count[s] = self.state_count.get(s, 0) + 1
        self.dt_sum_ns[s] = self.dt_sum_ns.get(s, 0) + tr.dt_ns
        per_event = self.event_count.setdefault(s, {})
        per_event[e] = per_event.get(e, 0) + 1
        vols = self.volume_count.setdefault(s, {})
        hist = vols.get(e)
        if hist is None:
            hist = vols[e] = np.zeros(VOLUME_CAP_UNITS, dtype=np.int64)
        hist[min(tr.volume_units, VOLUME_CAP_UNITS) - 1] += 1
        self.log_dt.setdefault((s, e), array("f")).append(math.log10(tr.dt_ns))

    def merge(self, other: "SufficientStats") -> "SufficientStats":
        for s, c in other.state_count.items():
            self.state_count[s] = self.state_count.get(s, 0) + c
        for s, c in other.dt_sum_ns.items():
            self.dt_sum_ns[s] = self.dt_sum_ns.get(s, 0) + c
        for s, per_event in other.event_count.items():
            mine = self.event_count.setdefault(s, {})
            for e, c in per_event.items():
                mine[e] = mine.get(e, 0) + c
        for s, vols in other.volume_count.items():
            mine = self.volume_count.setdefault(s, {})
            for e, h in vols.items():
                if e in mine:
                    mine[e] = mine[e] + h
                else:
                    mine[e] = h.copy()
        for cell, xs in other.log_dt.items():
            self.log_dt.setdefault(cell, array("f")).extend(xs)
        return self

    def all_log_dt(self) -> np.ndarray:
        out = array("f")
        for xs in self.log_dt.values():
            out.extend(xs)
        return np.frombuffer(out, dtype=np.float32).astype(float)


def accumulate(transitions: Iterable[Transition]) -> SufficientStats:
    stats = SufficientStats()
    for tr in transitions:
        stats.add(tr)
    if not stats.state_count:
        raise EmptyDataset("no transitions")
    return stats


# ---------------------------------------------------------------------------
# Tables, symmetrisation, sparse-state fallback


@dataclass
class CalibrationTables:
    """Raw per-state estimates prior to fallback filling."""

    counts: Dict[StateKey, int]
    probs: EventProbTable
    mean_dt_s: Dict[StateKey, float]
    volumes: VolumeDist

    @classmethod
    def from_stats(cls, stats: SufficientStats) -> "CalibrationTables":
        probs: EventProbTable = {}
        mean_dt: Dict[StateKey, float] = {}
        volumes: VolumeDist = {}
        for s, n in stats.state_count.items():
            probs[s] = {e: c / n for e, c in stats.event_count[s].items()}
            mean_dt[s] = stats.dt_sum_ns[s] * 1e-9 / n
            volumes[s] = {
                e: h / h.sum() for e, h in stats.volume_count[s].items() if h.sum() > 0
            }
        return cls(dict(stats.state_count), probs, mean_dt, volumes)


def _avg_rows(row_a: Optional[dict], row_b: Optional[dict]) -> dict:
    if row_a is None:
        return dict(row_b)
    if row_b is None:
        return dict(row_a)
    keys = set(row_a) | set(row_b)
    out = {}
    for k in keys:
        a, b = row_a.get(k), row_b.get(k)
        if a is None:
            out[k] = b if np.isscalar(b) else b.copy()
        elif b is None:
            out[k] = a if np.isscalar(a) else a.copy()
        else:
            out[k] = (a + b) / 2
    return out


def symmetrise(tables: CalibrationTables) -> CalibrationTables:
    """Average every statistic with its bid/ask mirror.

    The entry for a bid event at imbalance +x and the mirrored ask event at
    -x both become their average; waiting times and volume histograms are
    treated identically. Idempotent, and the result is exactly
    mirror-invariant.
    """
    counts: Dict[StateKey, int] = {}
    probs: EventProbTable = {}
    mean_dt: Dict[StateKey, float] = {}
    volumes: VolumeDist = {}
    states = set(tables.counts) | {s.mirror() for s in tables.counts}
    for s in states:
        ms = s.mirror()
        counts[s] = tables.counts.get(s, 0) + (tables.counts.get(ms, 0) if ms != s else 0)

        row = tables.probs.get(s)
        mrow = tables.probs.get(ms)
        mirrored = None if mrow is None else {e.mirror(): p for e, p in mrow.items()}
        probs[s] = _avg_rows(row, mirrored)

        dt_a, dt_b = tables.mean_dt_s.get(s), tables.mean_dt_s.get(ms)
        mean_dt[s] = dt_a if dt_b is None else dt_b if dt_a is None else 0.5 * (dt_a + dt_b)

        vrow = tables.volumes.get(s)
        mvrow = tables.volumes.get(ms)
        vmirrored = None if mvrow is None else {e.mirror(): h for e, h in mvrow.items()}
        volumes[s] = _avg_rows(vrow, vmirrored)
    return CalibrationTables(counts, probs, mean_dt, volumes)


def _fallback_path(state: StateKey) -> List[StateKey]:
    """Donor bins in preference order: toward 0, across 0 outward, then away."""
    t = state.imb_tenths
    if t == 0:
        order = [x for k in range(1, 11) for x in (k, -k)]
    else:
        sign = 1 if t > 0 else -1
        toward = [t - sign * k for k in range(1, abs(t) + 1)]  # ends at 0
        across = [-sign * k for k in range(1, 11)]
        away = [t + sign * k for k in range(1, 11 - abs(t))]
        order = toward + across + away
    return [StateKey(x, state.spread) for x in order]


def resolve_donors(
    counts: Dict[StateKey, int], threshold: int
) -> Tuple[Dict[StateKey, StateKey], int]:
    """Map every state to itself or to the donor bin it inherits from."""
    donors: Dict[StateKey, StateKey] = {}
    n_fallbacks = 0
    for spread in (SpreadClass.ONE, SpreadClass.WIDE):
        in_class = {s: c for s, c in counts.items() if s.spread == spread and c > 0}
        best = max(in_class, key=in_class.get) if in_class else None
        for t in BIN_TENTHS:
            s = StateKey(t, spread)
            if counts.get(s, 0) >= threshold:
                donors[s] = s
                continue
            donor = next(
                (c for c in _fallback_path(s) if counts.get(c, 0) >= threshold), best
            )
            if donor is None:
                continue  # class entirely unpopulated; handled by the caller
            donors[s] = donor
            if donor != s:
                n_fallbacks += 1
    return donors, n_fallbacks


# ---------------------------------------------------------------------------
# Spec-level estimator operations


def estimate_event_probs(transitions: Sequence[Transition], min_count: int = 1) -> EventProbTable:
    """Empirical event frequencies per state; sparse states inherit a donor."""
    tables = CalibrationTables.from_stats(accumulate(transitions))
    donors, _ = resolve_donors(tables.counts, min_count)
    return {s: dict(tables.probs[d]) for s, d in donors.items()}


def estimate_intensity(transitions: Sequence[Transition], min_count: int = 1) -> IntensityTable:
    """Total event rate per state (1 / mean waiting time), in events per second."""
    tables = CalibrationTables.from_stats(accumulate(transitions))
    donors, _ = resolve_donors(tables.counts, min_count)
    return {s: 1.0 / tables.mean_dt_s[d] for s, d in donors.items()}


def estimate_volume_dists(transitions: Sequence[Transition], min_count: int = 1) -> VolumeDist:
    """Per-(state, event) histograms over 1..50 units."""
    tables = CalibrationTables.from_stats(accumulate(transitions))
    donors, _ = resolve_donors(tables.counts, min_count)
    return {s: {e: h.copy() for e, h in tables.volumes[d].items()} for s, d in donors.items()}


def estimate_stationary(events: Sequence[RawDepthEvent], mes: Sequence[int]) -> StationaryDist:
    """Empirical distribution of deep-queue sizes (levels 2..4), in MES units.

    Sampled from the pre-event snapshots, pooled across sides; used to fill
    levels revealed by a price move.
    """
    hists = {lvl: np.zeros(VOLUME_CAP_UNITS + 1, dtype=np.int64) for lvl in (2, 3, 4)}
    for e in events:
        for lvl in (2, 3, 4):
            for shares in (e.bid_size(lvl), e.ask_size(lvl)):
                units = 0 if shares == 0 else -((-shares) // mes[lvl - 1])
                hists[lvl][min(units, VOLUME_CAP_UNITS)] += 1
    out: StationaryDist = {}
    for lvl, h in hists.items():
        total = h.sum()
        out[lvl] = h / total if total else _default_stationary()
    return out


def _default_stationary() -> np.ndarray:
    # Geometric-ish default for bundles built without snapshot data.
    h = np.zeros(VOLUME_CAP_UNITS + 1)
    h[:12] = 0.75 ** np.arange(12)
    return h / h.sum()


# ---------------------------------------------------------------------------
# Timing model


@dataclass
class TimingModel:
    """Waiting-time law: exponential clocks or per-cell log10 mixtures."""

    mode: str = "exp"  # "exp" or "gmm"
    k: int = 5
    cells: Dict[Tuple[StateKey, EventKey], Mixture1D] = field(default_factory=dict)
    fallback_counts: Dict[str, int] = field(default_factory=dict)

    def mixture_for(self, state: StateKey, event: EventKey) -> Mixture1D:
        return self.cells[(state, event)]


def fit_timing_model(stats: SufficientStats, k: int = 5, seed: int = 0) -> TimingModel:
    """Per-cell GMM fits with pooled fallbacks.

    Cells below 10k samples fall back, in order, to the side-symmetrised
    (imbalance bin, kind, level) pool, the per-kind pool, and the global
    pool; the depth of each fallback is counted.
    """
    min_n = 10 * k
    model = TimingModel(mode="gmm", k=k)
    counts = {"cell": 0, "bin_kind": 0, "kind": 0, "global": 0}

    def samples_of(cell) -> np.ndarray:
        xs = stats.log_dt.get(cell)
        return np.frombuffer(xs, dtype=np.float32).astype(float) if xs else np.empty(0)

    pooled_bin_kind: Dict[Tuple[int, int, int, int], list] = {}
    pooled_kind: Dict[int, list] = {}
    all_samples: List[np.ndarray] = []
    for (s, e), xs in stats.log_dt.items():
        arr = np.frombuffer(xs, dtype=np.float32).astype(float)
        canon_t = s.imb_tenths if e.side < 0 else -s.imb_tenths  # side-symmetrised pool
        pooled_bin_kind.setdefault((canon_t, s.spread, e.kind, e.level), []).append(arr)
        pooled_kind.setdefault(e.kind, []).append(arr)
        all_samples.append(arr)
    pooled_bin_kind = {key: np.concatenate(v) for key, v in pooled_bin_kind.items()}
    pooled_kind = {key: np.concatenate(v) for key, v in pooled_kind.items()}
    global_pool = np.concatenate(all_samples) if all_samples else np.empty(0)
    if len(global_pool) < min_n:
        raise InsufficientData(f"{len(global_pool)} waiting times for k={k}")

    fit_cache: Dict[tuple, Mixture1D] = {}

    def fit(tag, key, xs) -> Mixture1D:
        cache_key = (tag, key)
        if cache_key not in fit_cache:
            kk = k
            while len(xs) < 10 * kk and kk > 1:
                kk -= 1
            fit_cache[cache_key] = fit_gmm(xs, kk, seed=seed).mixture
        return fit_cache[cache_key]

    global_mix = fit("global", None, global_pool)
    for s in ALL_STATES:
        for e in enumerate_events(s):
            cell = (s, e)
            xs = samples_of(cell)
            if len(xs) >= min_n:
                model.cells[cell] = fit("cell", cell, xs)
                counts["cell"] += 1
                continue
            canon_t = s.imb_tenths if e.side < 0 else -s.imb_tenths
            pooled = pooled_bin_kind.get((canon_t, s.spread, e.kind, e.level))
            if pooled is not None and len(pooled) >= min_n:
                model.cells[cell] = fit("bin_kind", (canon_t, s.spread, e.kind, e.level), pooled)
                counts["bin_kind"] += 1
                continue
            pooled = pooled_kind.get(e.kind)
            if pooled is not None and len(pooled) >= min_n:
                model.cells[cell] = fit("kind", e.kind, pooled)
                counts["kind"] += 1
                continue
            model.cells[cell] = global_mix
            counts["global"] += 1
    model.fallback_counts = counts
    return model


def aggregate_delta_bic(
    cell_samples: Dict[object, np.ndarray], k_range: Sequence[int], seed: int = 0
) -> Dict[int, float]:
    """Sum of BIC(k) - BIC(1) over cells; the elbow motivates the global k."""
    out = {k: 0.0 for k in k_range}
    for xs in cell_samples.values():
        base = bic(fit_gmm(xs, 1, seed).loglik, 1, len(xs))
        for k in k_range:
            out[k] += bic(fit_gmm(xs, k, seed).loglik, k, len(xs)) - base
    return out


# ---------------------------------------------------------------------------
# Round-trip latency


@dataclass
class LatencyModel:
    """Exchange round-trip delay: a mode plus optional uniform jitter."""

    delta_ns: int
    jitter_ns: int = 0

    def sample(self, rng) -> int:
        if self.jitter_ns <= 0:
            return self.delta_ns
        return max(1, self.delta_ns + rng.randint(-self.jitter_ns, self.jitter_ns))

    def to_dict(self) -> dict:
        return {"delta_ns": self.delta_ns, "jitter_ns": self.jitter_ns}

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyModel":
        return cls(d["delta_ns"], d.get("jitter_ns", 0))


def estimate_delta(log_dt_samples: Sequence[float]) -> LatencyModel:
    """Locate the waiting-time mode and its 70%-of-peak spread.

    Histograms log10(dt/ns) with 0.01-wide bins on [3, 8]; the mode gives the
    round-trip delay and the contiguous region where density stays above 70%
    of the peak gives the jitter half-width.
    """
    xs = np.asarray(log_dt_samples, dtype=float)
    if len(xs) < DELTA_MIN_SAMPLES:
        raise InsufficientData(f"{len(xs)} samples, need >= {DELTA_MIN_SAMPLES}")
    lo, hi = DELTA_HIST_RANGE
    n_bins = round((hi - lo) / DELTA_HIST_WIDTH)
    counts, edges = np.histogram(xs, bins=n_bins, range=(lo, hi))
    peak = int(np.argmax(counts))
    centers = 0.5 * (edges[:-1] + edges[1:])
    level = DELTA_PEAK_FRACTION * counts[peak]
    left = peak
    while left > 0 and counts[left - 1] >= level:
        left -= 1
    right = peak
    while right < n_bins - 1 and counts[right + 1] >= level:
        right += 1
    delta_ns = int(round(10.0 ** centers[peak]))
    jitter_ns = int(round(0.5 * (10.0 ** centers[right] - 10.0 ** centers[left])))
    return LatencyModel(delta_ns, jitter_ns)


# ---------------------------------------------------------------------------
# Parameter bundle


@dataclass
class ParameterBundle:
    mes: List[int]
    event_probs: EventProbTable
    intensity: IntensityTable
    volumes: VolumeDist
    stationary: StationaryDist
    timing: TimingModel
    latency: LatencyModel
    kernel: KernelSpec
    impact: ImpactParams
    provenance: Dict[str, object] = field(default_factory=dict)
    version: str = BUNDLE_VERSION

    def with_impact(self, m_plus: float, m_minus: Optional[float] = None) -> "ParameterBundle":
        impact = ImpactParams(m_plus, m_plus if m_minus is None else m_minus)
        return ParameterBundle(
            self.mes, self.event_probs, self.intensity, self.volumes, self.stationary,
            self.timing, self.latency, self.kernel, impact, dict(self.provenance),
        )


def _cell_key(state: StateKey, event: EventKey) -> str:
    return f"{state.code()}@{event.code()}"


def bundle_to_dict(bundle: ParameterBundle) -> dict:
    return {
        "version": bundle.version,
        "mes": list(bundle.mes),
        "event_probs": {
            s.code(): {e.code(): p for e, p in sorted(row.items())}
            for s, row in sorted(bundle.event_probs.items())
        },
        "intensity": {s.code(): lam for s, lam in sorted(bundle.intensity.items())},
        "volumes": {
            s.code(): {e.code(): h.tolist() for e, h in sorted(row.items())}
            for s, row in sorted(bundle.volumes.items())
        },
        "stationary": {str(lvl): h.tolist() for lvl, h in sorted(bundle.stationary.items())},
        "timing": {
            "mode": bundle.timing.mode,
            "k": bundle.timing.k,
            "cells": {
                _cell_key(s, e): mix.to_dict()
                for (s, e), mix in sorted(bundle.timing.cells.items())
            },
            "fallback_counts": dict(bundle.timing.fallback_counts),
        },
        "latency": bundle.latency.to_dict(),
        "kernel": bundle.kernel.to_dict(),
        "impact": bundle.impact.to_dict(),
        "provenance": bundle.provenance,
    }


def bundle_from_dict(doc: dict) -> ParameterBundle:
    version = doc.get("version")
    if version != BUNDLE_VERSION:
        raise SchemaVersionMismatch(f"expected {BUNDLE_VERSION!r}, found {version!r}")
    try:
        timing = TimingModel(
            mode=doc["timing"]["mode"],
            k=doc["timing"].get("k", 5),
            fallback_counts=doc["timing"].get("fallback_counts", {}),
        )
        for key, mix in doc["timing"]["cells"].items():
            state_s, event_s = key.split("@")
            timing.cells[(StateKey.from_code(state_s), EventKey.from_code(event_s))] = (
                Mixture1D.from_dict(mix)
            )
        return ParameterBundle(
            mes=[int(m) for m in doc["mes"]],
            event_probs={
                StateKey.from_code(s): {EventKey.from_code(e): float(p) for e, p in row.items()}
                for s, row in doc["event_probs"].items()
            },
            intensity={StateKey.from_code(s): float(v) for s, v in doc["intensity"].items()},
            volumes={
                StateKey.from_code(s): {
                    EventKey.from_code(e): np.asarray(h, dtype=float) for e, h in row.items()
                }
                for s, row in doc["volumes"].items()
            },
            stationary={int(lvl): np.asarray(h, dtype=float) for lvl, h in doc["stationary"].items()},
            timing=timing,
            latency=LatencyModel.from_dict(doc["latency"]),
            kernel=KernelSpec.from_dict(doc["kernel"]),
            impact=ImpactParams.from_dict(doc["impact"]),
            provenance=doc.get("provenance", {}),
            version=version,
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise Corrupt(f"bundle document malformed: {exc}") from None


def save_bundle(bundle: ParameterBundle, path: str) -> None:
    """Write the bundle as a canonical (diffable) UTF-8 JSON document."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(bundle_to_dict(bundle), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_bundle(path: str) -> ParameterBundle:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise Corrupt(str(exc)) from None
    if not isinstance(doc, dict):
        raise Corrupt("bundle document is not an object")
    return bundle_from_dict(doc)


# ---------------------------------------------------------------------------
# End-to-end calibration


@dataclass
class CalibrationReport:
    n_events: int
    n_transitions: int
    n_sessions: int
    populated_states: int
    fallback_states: int
    synthesized_wide: bool
    dropped: Dict[str, int]
    warnings: List[str]
    timing_fallbacks: Dict[str, int]


def calibrate_bundle(
    events: Sequence[RawDepthEvent],
    timing_mode: str = "exp",
    gmm_k: int = 5,
    seed: int = 0,
    threshold: int = SPARSE_STATE_THRESHOLD,
) -> Tuple[ParameterBundle, CalibrationReport]:
    """Full estimation pipeline on preprocessed events."""
    from .ingest import build_transitions

    if not events:
        raise EmptyDataset("no events in session window")
    warnings: List[str] = []
    mes = mes_table(events, warnings)
    dataset = build_transitions(events, mes)
    if not len(dataset):
        raise EmptyDataset("no transitions after preprocessing")
    stats = accumulate(dataset)
    tables = symmetrise(CalibrationTables.from_stats(stats))

    donors, n_fallbacks = resolve_donors(tables.counts, threshold)
    probs: EventProbTable = {}
    intensity: IntensityTable = {}
    volumes: VolumeDist = {}
    synthesized_wide = False
    global_mean_dt = sum(stats.dt_sum_ns.values()) * 1e-9 / max(1, sum(stats.state_count.values()))
    for s in ALL_STATES:
        donor = donors.get(s)
        if donor is None:
            if s.spread == SpreadClass.WIDE:
                synthesized_wide = True
                probs[s] = {e: 0.5 for e in enumerate_events(s)}
                intensity[s] = 1.0 / global_mean_dt
                point = np.zeros(VOLUME_CAP_UNITS)
                point[0] = 1.0
                volumes[s] = {e: point.copy() for e in enumerate_events(s)}
                continue
            raise EmptyDataset("no populated spread-1 states")
        row = dict(tables.probs[donor])
        missing = [e for e in enumerate_events(s) if e not in row]
        for e in missing:
            row[e] = 0.0
        total = sum(row.values())
        probs[s] = {e: p / total for e, p in row.items()}
        intensity[s] = 1.0 / tables.mean_dt_s[donor]
        vrow = {}
        fallback_hist = None
        for e in enumerate_events(s):
            h = tables.volumes[donor].get(e)
            if h is None:
                if fallback_hist is None:
                    pooled = sum(tables.volumes[donor].values())
                    fallback_hist = pooled / pooled.sum()
                h = fallback_hist
            vrow[e] = h / h.sum()
        volumes[s] = vrow

    stationary = estimate_stationary(events, mes)
    if timing_mode == "gmm":
        timing = fit_timing_model(stats, k=gmm_k, seed=seed)
    else:
        timing = TimingModel(mode="exp")
    try:
        latency = estimate_delta(stats.all_log_dt())
    except InsufficientData:
        warnings.append("too few waiting times for delta estimation; using the default mode")
        latency = LatencyModel(DEFAULT_DELTA_NS, 0)

    ts = [e.ts_ns for e in events]
    bundle = ParameterBundle(
        mes=mes,
        event_probs=probs,
        intensity=intensity,
        volumes=volumes,
        stationary=stationary,
        timing=timing,
        latency=latency,
        kernel=fit_exponential_weights(),
        impact=ImpactParams(),
        provenance={
            "event_count": len(events),
            "transition_count": len(dataset),
            "ts_range_ns": [min(ts), max(ts)],
            "sessions": dataset.diagnostics.n_sessions,
        },
    )
    report = CalibrationReport(
        n_events=len(events),
        n_transitions=len(dataset),
        n_sessions=dataset.diagnostics.n_sessions,
        populated_states=sum(1 for s, d in donors.items() if s == d),
        fallback_states=n_fallbacks,
        synthesized_wide=synthesized_wide,
        dropped={
            "deep_level": dataset.diagnostics.deep_level_drops,
            "off_model": dataset.diagnostics.off_model_drops,
            "zero_dt_clamped": dataset.diagnostics.zero_dt_clamped,
        },
        warnings=warnings,
        timing_fallbacks=dict(timing.fallback_counts),
    )
    return bundle, report
