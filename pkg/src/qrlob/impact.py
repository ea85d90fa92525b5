"""Market-impact feedback: power-law kernel, O(K) impact state, trade biasing.

The impact state accumulates signed square-root trade flow through a decay
kernel ``G(t) = (1 + t/tau)^{-beta}``, approximated as a sum of K exponentials
with geometrically spaced half-lives so the state updates in O(K) per trade.
The accumulated state biases only the trade probabilities that oppose the
flow, and renormalises the event distribution.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NonBracketed, TimeRegression
from .events import TRADE, EventKey
from .nnls import nnls

LN2 = math.log(2.0)

DEFAULT_TAU_S = 50.0
DEFAULT_BETA = 1.5
DEFAULT_K = 12
DEFAULT_H_MIN_S = 0.01
DEFAULT_H_MAX_S = 1000.0
# Fitting grid: log-spaced, wider than the half-life span.
DEFAULT_GRID = (1e-3, 5e3, 200)


def kernel_value(tau_s: float, beta: float, t_s) -> float:
    """The target decay kernel ``(1 + t/tau)^{-beta}``."""
    return (1.0 + np.asarray(t_s, dtype=float) / tau_s) ** (-beta)


def default_half_lives(k: int = DEFAULT_K) -> np.ndarray:
    return np.geomspace(DEFAULT_H_MIN_S, DEFAULT_H_MAX_S, k)


@dataclass
class KernelSpec:
    """Sum-of-exponentials approximation of the power-law kernel."""

    tau_s: float
    beta: float
    half_lives_s: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.half_lives_s = np.asarray(self.half_lives_s, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)

    @property
    def K(self) -> int:
        return len(self.half_lives_s)

    @property
    def rates(self) -> np.ndarray:
        """Decay rates in 1/s, strictly decreasing as half-lives increase."""
        return LN2 / self.half_lives_s

    def g_hat(self, t_s) -> np.ndarray:
        """The approximated kernel ``sum_i w_i exp(-rate_i t)``."""
        t = np.atleast_1d(np.asarray(t_s, dtype=float))
        out = (self.weights[None, :] * np.exp(-np.outer(t, self.rates))).sum(axis=1)
        return out if np.ndim(t_s) else float(out[0])

    def to_dict(self) -> dict:
        return {
            "tau_s": self.tau_s,
            "beta": self.beta,
            "half_lives_s": self.half_lives_s.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["tau_s"], d["beta"], d["half_lives_s"], d["weights"])


def fit_exponential_weights(
    tau_s: float = DEFAULT_TAU_S,
    beta: float = DEFAULT_BETA,
    half_lives_s: Optional[Sequence[float]] = None,
    grid_s: Optional[Sequence[float]] = None,
) -> KernelSpec:
    """Fit nonnegative exponential weights to the power-law kernel by NNLS."""
    h = np.asarray(half_lives_s, dtype=float) if half_lives_s is not None else default_half_lives()
    if grid_s is None:
        lo, hi, n = DEFAULT_GRID
        grid = np.geomspace(lo, hi, n)
    else:
        grid = np.asarray(grid_s, dtype=float)
    rates = LN2 / h
    X = np.exp(-np.outer(grid, rates))
    y = kernel_value(tau_s, beta, grid)
    w = nnls(X, y)
    w[w < 1e-12] = 0.0  # clip numerically negative / negligible weights
    return KernelSpec(tau_s, beta, h, w)


@dataclass
class ImpactParams:
    """Bias multipliers; ``m_minus`` scales the reaction to net selling."""

    m_plus: float = 0.0
    m_minus: float = 0.0

    @classmethod
    def symmetric(cls, m: float) -> "ImpactParams":
        return cls(m, m)

    def bias(self, phi: float) -> float:
        if phi > 0.0:
            return self.m_plus * phi
        if phi < 0.0:
            return self.m_minus * phi
        return 0.0

    def to_dict(self) -> dict:
        return {"m_plus": self.m_plus, "m_minus": self.m_minus}

    @classmethod
    def from_dict(cls, d: dict) -> "ImpactParams":
        return cls(d["m_plus"], d["m_minus"])


class ImpactState:
    """Running impact state phi_t maintained as K exponential accumulators.

    ``register_trade`` decays every component to the trade time and adds
    ``w_i * epsilon * sqrt(V)``; ``phi`` reads the decayed sum without
    mutating. Components are plain floats: K is small and this sits on the
    simulator's hot path.
    """

    __slots__ = ("weights", "rates_ns", "components", "last_t_ns")

    def __init__(self, kernel: KernelSpec, t0_ns: int = 0):
        self.weights = [float(w) for w in kernel.weights]
        self.rates_ns = [float(r) * 1e-9 for r in kernel.rates]
        self.components = [0.0] * len(self.weights)
        self.last_t_ns = t0_ns

    def register_trade(self, t_ns: int, epsilon: int, volume_units: float) -> None:
        dt = t_ns - self.last_t_ns
        if dt < 0:
            raise TimeRegression(f"trade at {t_ns} before state time {self.last_t_ns}")
        impulse = epsilon * math.sqrt(volume_units)
        comps = self.components
        weights = self.weights
        exp = math.exp
        for i, r in enumerate(self.rates_ns):
            comps[i] = comps[i] * exp(-r * dt) + weights[i] * impulse
        self.last_t_ns = t_ns

    def phi(self, t_ns: int) -> float:
        dt = t_ns - self.last_t_ns
        if dt < 0:
            raise TimeRegression(f"query at {t_ns} before state time {self.last_t_ns}")
        exp = math.exp
        total = 0.0
        for c, r in zip(self.components, self.rates_ns):
            total += c * exp(-r * dt)
        return total

    def reset(self, t0_ns: int = 0) -> None:
        self.components = [0.0] * len(self.weights)
        self.last_t_ns = t0_ns


def phi_bruteforce(kernel: KernelSpec, trades, t_ns: int) -> float:
    """Direct evaluation of phi_t as a sum over past trades (test oracle)."""
    total = 0.0
    for tk, eps, vol in trades:
        if tk <= t_ns:
            total += kernel.g_hat((t_ns - tk) * 1e-9) * eps * math.sqrt(vol)
    return total


def bias_probabilities(base: Dict[EventKey, float], b: float) -> Dict[EventKey, float]:
    """Tilt trade probabilities by the bias b and renormalise the row.

    Bid trades are scaled by ``exp(max(b, 0))`` and ask trades by
    ``exp(max(-b, 0))``; other events keep their relative odds.
    """
    if b == 0.0:
        return dict(base)
    f_bid = math.exp(b) if b > 0.0 else 1.0
    f_ask = math.exp(-b) if b < 0.0 else 1.0
    scaled = {}
    z = 0.0
    for event, p in base.items():
        if event.kind == TRADE:
            p = p * (f_bid if event.side < 0 else f_ask)
        scaled[event] = p
        z += p
    return {e: p / z for e, p in scaled.items()}


def target_impact(t_s: float, horizon_s: float) -> float:
    """Square-root impact profile, normalised to 1 at the execution horizon."""
    if t_s <= horizon_s:
        return math.sqrt(t_s / horizon_s)
    return math.sqrt(t_s / horizon_s) - math.sqrt(t_s / horizon_s - 1.0)


@dataclass
class TargetProfile:
    """Impact shape to reproduce, sampled on the experiment's time grid."""

    horizon_s: float

    def __call__(self, t_s: float) -> float:
        return target_impact(t_s, self.horizon_s)


@dataclass
class MCalibrationResult:
    m: float
    mse_curve: List[Tuple[float, float]] = field(default_factory=list)


def calibrate_m(
    sim_config,
    metaorder,
    target: TargetProfile,
    n_paths: int,
    bounds: Tuple[float, float] = (0.0, 1.0),
    tol: float = 1e-4,
    threads: int = 1,
) -> MCalibrationResult:
    """Find the multiplier m reproducing the target profile.

    Binary search on the signed slope of the Monte Carlo MSE between the
    peak-normalised average impact path and the target, with common random
    numbers across m values.
    """
    from .engine import run_metaorder_experiment  # local import, engine depends on us

    lo, hi = bounds
    curve: List[Tuple[float, float]] = []
    cache: Dict[float, float] = {}

    def mse(m: float) -> float:
        if m not in cache:
            cfg = sim_config.with_impact_m(m)
            res = run_metaorder_experiment(cfg, metaorder, n_paths, threads=threads)
            ts = res.grid_s
            path = res.normalized_path
            tgt = np.array([target(t) for t in ts])
            cache[m] = float(np.mean((path - tgt) ** 2))
            curve.append((m, cache[m]))
        return cache[m]

    mse_lo_edge = mse(lo)
    mse_hi_edge = mse(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        h = max(tol, (hi - lo) / 8.0)
        slope = mse(min(mid + h, bounds[1])) - mse(max(mid - h, bounds[0]))
        if slope > 0.0:
            hi = mid
        else:
            lo = mid
    m_star = 0.5 * (lo + hi)
    final = mse(m_star)
    if final > mse_lo_edge + 1e-12 and final > mse_hi_edge + 1e-12:
        raise NonBracketed(
            f"MSE at m={m_star:.4f} exceeds both bracket endpoints", sorted(curve)
        )
    curve.sort()
    return MCalibrationResult(m_star, curve)


class BiasLikelihoodData:
    """Per-transition arrays for the reduced log-likelihood of (tau, beta, m).

    Precomputes everything that does not depend on the kernel so the
    profile-likelihood grid scan stays cheap: trade times/signs/volumes, each
    transition's arrival time, and the state's aggregate bid-trade, ask-trade
    and remaining probabilities.
    """

    def __init__(self, transitions, prob_table, t0_ns: int = 0):
        n = len(transitions)
        self.t_ns = np.empty(n, dtype=np.int64)
        self.is_bid_trade = np.zeros(n, dtype=bool)
        self.is_ask_trade = np.zeros(n, dtype=bool)
        self.p_bid = np.empty(n)
        self.p_ask = np.empty(n)
        prev_trade = np.empty(n, dtype=np.int64)  # index into trade arrays, -1 if none
        trade_t: List[int] = []
        trade_impulse: List[float] = []

        t = t0_ns
        row_cache: Dict[object, Tuple[float, float]] = {}
        for i, tr in enumerate(transitions):
            t = t + tr.dt_ns
            self.t_ns[i] = t
            state = tr.state
            pb_pa = row_cache.get(state)
            if pb_pa is None:
                row = prob_table[state]
                pb = sum(p for e, p in row.items() if e.kind == TRADE and e.side < 0)
                pa = sum(p for e, p in row.items() if e.kind == TRADE and e.side > 0)
                pb_pa = (pb, pa)
                row_cache[state] = pb_pa
            self.p_bid[i], self.p_ask[i] = pb_pa
            ev = tr.event
            prev_trade[i] = len(trade_t) - 1
            if ev.kind == TRADE:
                if ev.side < 0:
                    self.is_bid_trade[i] = True
                    eps = -1.0
                else:
                    self.is_ask_trade[i] = True
                    eps = 1.0
                trade_t.append(t)
                trade_impulse.append(eps * math.sqrt(tr.volume_units))
        self.p_rest = 1.0 - self.p_bid - self.p_ask
        self.prev_trade = prev_trade
        self.trade_t = np.asarray(trade_t, dtype=np.int64)
        self.trade_impulse = np.asarray(trade_impulse)

    def phi_series(self, kernel: KernelSpec) -> np.ndarray:
        """phi just before each transition, via the trade-only recursion."""
        K = kernel.K
        rates_ns = kernel.rates * 1e-9
        weights = kernel.weights
        n_trades = len(self.trade_t)
        comps = np.zeros((n_trades, K))
        c = np.zeros(K)
        last_t = 0
        for j in range(n_trades):
            c = c * np.exp(-rates_ns * (self.trade_t[j] - last_t)) + weights * self.trade_impulse[j]
            comps[j] = c
            last_t = self.trade_t[j]
        phi = np.zeros(len(self.t_ns))
        has_prev = self.prev_trade >= 0
        idx = self.prev_trade[has_prev]
        dt = self.t_ns[has_prev] - self.trade_t[idx]
        phi[has_prev] = (comps[idx] * np.exp(-np.outer(dt, rates_ns))).sum(axis=1)
        return phi

    def loglik(self, phi: np.ndarray, m: float) -> float:
        b = np.clip(m * phi, -700.0, 700.0)
        bpos = np.maximum(b, 0.0)
        bneg = np.maximum(-b, 0.0)
        logf = np.where(self.is_bid_trade, bpos, 0.0) + np.where(self.is_ask_trade, bneg, 0.0)
        z = self.p_bid * np.exp(bpos) + self.p_ask * np.exp(bneg) + self.p_rest
        return float(logf.sum() - np.log(z).sum())


def reduced_loglik(transitions, prob_table, tau_s: float, beta: float, m: float) -> float:
    """Reduced log-likelihood of the bias model on an observed stream.

    Vanishes identically at m = 0; any nonzero bias pays a log-normalisation
    penalty, so the optimum is finite.
    """
    data = BiasLikelihoodData(transitions, prob_table)
    kernel = fit_exponential_weights(tau_s, beta)
    return data.loglik(data.phi_series(kernel), m)


def _golden_max(f, lo: float, hi: float, tol: float) -> Tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


@dataclass
class MleResult:
    tau_s: float
    beta: float
    m: float
    nll: np.ndarray  # shape (len(tau_grid), len(beta_grid))
    m_opt: np.ndarray  # profiled m per grid point
    tau_grid: np.ndarray
    beta_grid: np.ndarray


def mle_calibrate(
    transitions,
    prob_table,
    tau_grid: Sequence[float],
    beta_grid: Sequence[float],
    m_bounds: Tuple[float, float] = (0.0, 1.0),
    m_tol: float = 1e-5,
) -> MleResult:
    """Profile-likelihood fit of (tau, beta, m) on a coarse grid.

    For each (tau, beta) the kernel weights are refit by NNLS and the
    likelihood is maximised over m by golden section; returns the argmin of
    the negative log-likelihood and the full surface.
    """
    taus = np.asarray(list(tau_grid), dtype=float)
    betas = np.asarray(list(beta_grid), dtype=float)
    data = BiasLikelihoodData(transitions, prob_table)
    nll = np.empty((len(taus), len(betas)))
    m_opt = np.empty_like(nll)
    for i, tau in enumerate(taus):
        for j, beta in enumerate(betas):
            kernel = fit_exponential_weights(tau, beta)
            phi = data.phi_series(kernel)
            m_star, ll = _golden_max(lambda m: data.loglik(phi, m), *m_bounds, m_tol)
            if data.loglik(phi, 0.0) >= ll:
                m_star, ll = 0.0, data.loglik(phi, 0.0)
            nll[i, j] = -ll
            m_opt[i, j] = m_star
    i, j = np.unravel_index(int(np.argmin(nll)), nll.shape)
    return MleResult(float(taus[i]), float(betas[j]), float(m_opt[i, j]), nll, m_opt, taus, betas)
