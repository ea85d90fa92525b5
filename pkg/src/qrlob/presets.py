"""Programmatic parameter bundles for experiments, demos and ground-truth
round trips.

``paperlike_bundle`` mimics the stylised facts of a calibrated large-tick
name: adds and cancels dominate (~97%), trades fire mostly from lopsided
books (~2%), activity speeds up at extreme imbalance, and wide spreads close
quickly through Create events. All tables are mirror-symmetric by
construction, so the simulated mid is driftless.
"""

import numpy as np

from .calibrate import (
    DEFAULT_DELTA_NS,
    LatencyModel,
    ParameterBundle,
    StationaryDist,
    TimingModel,
)
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
from .gmm import Mixture1D
from .impact import ImpactParams, fit_exponential_weights
from .ingest import VOLUME_CAP_UNITS
from .state import ALL_STATES, SpreadClass, enumerate_events


def _hist(masses: dict) -> np.ndarray:
    h = np.zeros(VOLUME_CAP_UNITS)
    for units, p in masses.items():
        h[units - 1] = p
    return h / h.sum()


def _stationary(p_empty: float, decay: float, max_units: int = 12) -> np.ndarray:
    h = np.zeros(VOLUME_CAP_UNITS + 1)
    h[0] = p_empty
    h[1 : max_units + 1] = decay ** np.arange(max_units)
    h[1:] *= (1.0 - p_empty) / h[1:].sum()
    return h


DEFAULT_STATIONARY: StationaryDist = {
    2: _stationary(0.05, 0.78),
    3: _stationary(0.15, 0.75),
    4: _stationary(0.30, 0.72),
}

ADD_VOLUMES = _hist({1: 0.60, 2: 0.30, 3: 0.10})
TRADE_VOLUMES = _hist({1: 0.55, 2: 0.25, 3: 0.12, 4: 0.08})
CREATE_VOLUMES = _hist({1: 0.55, 2: 0.30, 3: 0.15})
UNIT_VOLUME = _hist({1: 1.0})

# Clustered waiting times: a sharp latency-race mode at the exchange
# round-trip (log10 ns = 4.47), a fast reaction cloud, and a slow bulk.
RACE_TIMING_MIXTURE = Mixture1D(
    weights=np.array([0.25, 0.45, 0.30]),
    means=np.array([4.47, 6.8, 8.2]),
    sigmas=np.array([0.08, 0.80, 0.60]),
)


def paperlike_bundle(
    timing: str = "exp",
    mes=(100, 150, 150, 150),
    trade_base: float = 0.004,
    trade_gain: float = 0.120,
    flow_tilt: float = 0.5,
    outflow: float = 0.006,
    base_rate: float = 8.0,
    rate_gain: float = 12.0,
    wide_rate: float = 20.0,
    delta_ns: int = DEFAULT_DELTA_NS,
    jitter_ns: int = 0,
    m: float = 0.0,
) -> ParameterBundle:
    """Hand-built bundle with a paper-like event mix and U-shaped trade law.

    Trade probabilities grow quadratically toward the depleted side; add and
    cancel flows mean-revert the imbalance with strength ``flow_tilt``;
    intensities rise with imbalance magnitude. ``outflow`` puts cancels
    slightly ahead of adds so queues drain, deplete and reset, which is what
    produces price moves, wide spreads and Create events.
    """
    probs = {}
    intensity = {}
    volumes = {}
    for s in ALL_STATES:
        x = s.imb_tenths / 10.0
        if s.spread == SpreadClass.WIDE:
            probs[s] = {CREATE_BID_EVENT: 0.5, CREATE_ASK_EVENT: 0.5}
            intensity[s] = wide_rate
            volumes[s] = {e: CREATE_VOLUMES for e in enumerate_events(s)}
            continue
        # x > 0 means a heavy bid queue: buys (ask-side trades) more likely,
        # bid adds back off and bid cancels pick up.
        raw = {
            EventKey(ADD, BID, 1): (0.210 - outflow) * (1.0 - flow_tilt * x),
            EventKey(ADD, ASK, 1): (0.210 - outflow) * (1.0 + flow_tilt * x),
            EventKey(CANCEL, BID, 1): (0.210 + outflow) * (1.0 + flow_tilt * x),
            EventKey(CANCEL, ASK, 1): (0.210 + outflow) * (1.0 - flow_tilt * x),
            EventKey(ADD, BID, 2): 0.038,
            EventKey(ADD, ASK, 2): 0.038,
            EventKey(CANCEL, BID, 2): 0.042,
            EventKey(CANCEL, ASK, 2): 0.042,
            TRADE_ASK: trade_base + trade_gain * max(x, 0.0) ** 2,
            TRADE_BID: trade_base + trade_gain * max(-x, 0.0) ** 2,
        }
        total = sum(raw.values())
        probs[s] = {e: p / total for e, p in raw.items()}
        intensity[s] = base_rate + rate_gain * x * x
        volumes[s] = {
            e: (TRADE_VOLUMES if e.is_trade() else ADD_VOLUMES) for e in enumerate_events(s)
        }

    if timing == "gmm":
        timing_model = TimingModel(mode="gmm", k=RACE_TIMING_MIXTURE.k)
        for s in ALL_STATES:
            for e in enumerate_events(s):
                timing_model.cells[(s, e)] = RACE_TIMING_MIXTURE
    else:
        timing_model = TimingModel(mode="exp")

    return ParameterBundle(
        mes=list(mes),
        event_probs=probs,
        intensity=intensity,
        volumes=volumes,
        stationary={lvl: h.copy() for lvl, h in DEFAULT_STATIONARY.items()},
        timing=timing_model,
        latency=LatencyModel(delta_ns, jitter_ns),
        kernel=fit_exponential_weights(),
        impact=ImpactParams.symmetric(m),
        provenance={"preset": "paperlike", "timing": timing},
    )


def uniform_bundle(rate: float = 10.0, mes=(100, 100, 100, 100)) -> ParameterBundle:
    """Flat tables: every legal event equally likely, unit volumes."""
    probs = {}
    intensity = {}
    volumes = {}
    for s in ALL_STATES:
        events = enumerate_events(s)
        probs[s] = {e: 1.0 / len(events) for e in events}
        intensity[s] = rate
        volumes[s] = {e: UNIT_VOLUME for e in events}
    return ParameterBundle(
        mes=list(mes),
        event_probs=probs,
        intensity=intensity,
        volumes=volumes,
        stationary={lvl: h.copy() for lvl, h in DEFAULT_STATIONARY.items()},
        timing=TimingModel(mode="exp"),
        latency=LatencyModel(DEFAULT_DELTA_NS, 0),
        kernel=fit_exponential_weights(),
        impact=ImpactParams(),
        provenance={"preset": "uniform"},
    )
