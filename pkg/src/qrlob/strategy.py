"""Trading case studies on top of the simulator.

Two strategies: a mid-frequency trader driven by an Ornstein-Uhlenbeck alpha
signal injected into the book dynamics, and a high-frequency imbalance
strategy whose marketable orders are subject to latency races. Both carry
inventory limits and mark-to-market accounting in half-ticks.
"""

import math
import random
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .book import imbalance
from .engine import ASK, BID, Engine, SimConfig, derive_seed
from .errors import QrlobError


@dataclass
class OUParams:
    """Mean-reverting signal: d(alpha) = -kappa*alpha dt + sigma dW."""

    kappa: float  # 1/s
    sigma: float  # 1/sqrt(s)

    @classmethod
    def with_unit_stationary_std(cls, kappa: float) -> "OUParams":
        return cls(kappa, math.sqrt(2.0 * kappa))


def ou_step(alpha: float, dt_s: float, params: OUParams, rng: random.Random) -> float:
    """Exact one-step OU transition over an arbitrary horizon."""
    if dt_s <= 0.0:
        return alpha
    k = params.kappa
    if k == 0.0:
        return alpha + params.sigma * math.sqrt(dt_s) * rng.gauss(0.0, 1.0)
    decay = math.exp(-k * dt_s)
    std = params.sigma * math.sqrt((1.0 - decay * decay) / (2.0 * k))
    return alpha * decay + std * rng.gauss(0.0, 1.0)


def combined_bias(m: float, phi: float, signal_scale: float, alpha: float) -> float:
    """Net bias: impact pressure minus the forecast tilt."""
    return m * phi - signal_scale * alpha


@dataclass
class Account:
    cash_half_ticks: int = 0
    inventory: int = 0
    trades: int = 0

    def on_fill(self, side: int, units: int, price_ticks: int) -> None:
        if side == ASK:  # buy at the ask
            self.cash_half_ticks -= units * 2 * price_ticks
            self.inventory += units
        else:  # sell at the bid
            self.cash_half_ticks += units * 2 * price_ticks
            self.inventory -= units
        self.trades += 1


def mark_to_market(account: Account, mid_half_ticks: int) -> int:
    """P&L in half-ticks: cash plus inventory at mid."""
    return account.cash_half_ticks + account.inventory * mid_half_ticks


@dataclass
class MidFreqConfig:
    theta: float
    max_inventory: int
    q_max: int
    signal_scale: float


@dataclass
class HftConfig:
    imbalance_threshold: float = 0.85
    max_inventory: int = 10
    q_max: int = 2
    self_impact: bool = True


@dataclass
class BacktestResult:
    pnl_half_ticks: int
    account: Account
    n_submits: int = 0
    n_fills: int = 0
    race_wins: int = 0
    race_losses: int = 0
    sample_t_s: np.ndarray = field(default_factory=lambda: np.empty(0))
    alpha_series: np.ndarray = field(default_factory=lambda: np.empty(0))
    mid_series: np.ndarray = field(default_factory=lambda: np.empty(0))
    final_mid_half_ticks: int = 0

    @property
    def race_win_rate(self) -> float:
        total = self.race_wins + self.race_losses
        return self.race_wins / total if total else float("nan")


def run_midfreq(
    sim_config: SimConfig,
    config: MidFreqConfig,
    ou: OUParams,
    horizon_ns: int,
    seed: int,
    sample_interval_ns: int = 10_000_000_000,
) -> BacktestResult:
    """Mid-frequency backtest: trade on the OU signal, pay your own impact.

    The signal tilts trade probabilities through the combined bias at every
    event; the strategy buys the ask when alpha exceeds +theta and sells the
    bid below -theta, capped by depth, q_max, inventory headroom and the
    one-market-event cooldown. Fills are marketable (no race: the signal is
    private, nobody else is racing it).
    """
    cfg = replace(sim_config, seed=seed, horizon_ns=horizon_ns)
    engine = Engine(cfg, collect_log=False)
    rng = random.Random(derive_seed(seed, "ou-signal"))

    sig = {"alpha": 0.0, "t": 0}

    def advance_alpha(t_ns: int) -> float:
        if t_ns > sig["t"]:
            sig["alpha"] = ou_step(sig["alpha"], (t_ns - sig["t"]) * 1e-9, ou, rng)
            sig["t"] = t_ns
        return sig["alpha"]

    if config.signal_scale != 0.0:
        engine.signal_bias = lambda t_ns: -config.signal_scale * advance_alpha(t_ns)

    account = Account()
    n_fills = 0
    sample_t: List[float] = []
    alphas: List[float] = []
    mids: List[int] = []
    next_sample = sample_interval_ns

    while engine.t_ns < horizon_ns:
        engine.step()
        t = engine.t_ns
        alpha = advance_alpha(t)
        if t >= next_sample:
            sample_t.append(t * 1e-9)
            alphas.append(alpha)
            mids.append(engine.book.best_bid + engine.book.best_ask)
            next_sample += sample_interval_ns * (1 + (t - next_sample) // sample_interval_ns)
        if not engine.can_submit():
            continue
        inv = account.inventory
        if alpha > config.theta and inv < config.max_inventory:
            size = min(config.q_max, config.max_inventory - inv)
            executed, price = engine.force_user_trade(ASK, size)
            if executed:
                account.on_fill(ASK, executed, price)
                n_fills += 1
        elif alpha < -config.theta and inv > -config.max_inventory:
            size = min(config.q_max, config.max_inventory + inv)
            executed, price = engine.force_user_trade(BID, size)
            if executed:
                account.on_fill(BID, executed, price)
                n_fills += 1

    mid = engine.book.best_bid + engine.book.best_ask
    return BacktestResult(
        pnl_half_ticks=mark_to_market(account, mid),
        account=account,
        n_submits=n_fills,
        n_fills=n_fills,
        sample_t_s=np.asarray(sample_t),
        alpha_series=np.asarray(alphas),
        mid_series=np.asarray(mids, dtype=float),
        final_mid_half_ticks=mid,
    )


def run_hft(
    sim_config: SimConfig,
    config: HftConfig,
    horizon_ns: int,
    seed: int,
) -> BacktestResult:
    """Imbalance-threshold strategy racing the rest of the market.

    Submission latency is drawn from the calibrated round-trip model; the
    order loses its race when the next market event arrives faster. The
    self-impact flag decides whether own fills feed the impact state.
    """
    cfg = replace(sim_config, seed=seed, horizon_ns=horizon_ns, self_impact=config.self_impact)
    engine = Engine(cfg, collect_log=False)
    latency = cfg.bundle.latency
    rng = random.Random(derive_seed(seed, "hft-latency"))
    account = Account()
    n_submits = n_fills = wins = losses = 0

    while engine.t_ns < horizon_ns:
        engine.step()
        if not engine.can_submit():
            continue
        imb = imbalance(engine.book)
        inv = account.inventory
        if imb >= config.imbalance_threshold and inv < config.max_inventory:
            side, size = ASK, min(config.q_max, config.max_inventory - inv)
        elif imb <= -config.imbalance_threshold and inv > -config.max_inventory:
            side, size = BID, min(config.q_max, config.max_inventory + inv)
        else:
            continue
        res = engine.submit_market_order(side, size, latency.sample(rng))
        n_submits += 1
        if res.won_race:
            wins += 1
        else:
            losses += 1
        if res.filled_units:
            account.on_fill(side, res.filled_units, res.price_ticks)
            n_fills += 1

    mid = engine.book.best_bid + engine.book.best_ask
    return BacktestResult(
        pnl_half_ticks=mark_to_market(account, mid),
        account=account,
        n_submits=n_submits,
        n_fills=n_fills,
        race_wins=wins,
        race_losses=losses,
        final_mid_half_ticks=mid,
    )


def predictiveness(
    alpha_samples: Sequence[float],
    mid_series: Sequence[float],
    horizons: Sequence[int],
    n_boot: int = 1000,
    seed: int = 0,
) -> List[Tuple[int, float, float, float]]:
    """E[alpha * (P_{t+h} - P_t)] per horizon with 95% bootstrap bands.

    Horizons are in sample steps; prices in whatever unit `mid_series` uses.
    """
    alpha = np.asarray(alpha_samples, dtype=float)
    mid = np.asarray(mid_series, dtype=float)
    if len(alpha) != len(mid):
        raise QrlobError("alpha and mid series must be aligned")
    rng = np.random.default_rng(seed)
    out = []
    for h in horizons:
        if h < 1 or h >= len(mid):
            raise QrlobError(f"horizon {h} outside series of length {len(mid)}")
        prod = alpha[:-h] * (mid[h:] - mid[:-h])
        means = np.empty(n_boot)
        n = len(prod)
        for b in range(n_boot):
            means[b] = prod[rng.integers(0, n, size=n)].mean()
        lo, hi = np.percentile(means, [2.5, 97.5])
        out.append((h, float(prod.mean()), float(lo), float(hi)))
    return out


# ---------------------------------------------------------------------------
# Parameter sweeps (CSV-ready rows)


def run_hft_sweep(
    sim_config: SimConfig,
    inventories: Sequence[int],
    q_maxes: Sequence[int],
    self_impact_options: Sequence[bool],
    seeds: Sequence[int],
    horizon_ns: int,
    threshold: float = 0.85,
) -> List[Dict]:
    rows = []
    for self_imp in self_impact_options:
        for inv in inventories:
            for qm in q_maxes:
                for seed in seeds:
                    cfg = HftConfig(threshold, inv, qm, self_imp)
                    res = run_hft(sim_config, cfg, horizon_ns, seed)
                    rows.append(
                        {
                            "threshold": threshold,
                            "max_inventory": inv,
                            "q_max": qm,
                            "self_impact": int(self_imp),
                            "seed": seed,
                            "pnl_ticks": res.pnl_half_ticks / 2.0,
                            "n_fills": res.n_fills,
                            "race_win_rate": res.race_win_rate,
                        }
                    )
    return rows


def run_midfreq_sweep(
    sim_config: SimConfig,
    thetas: Sequence[float],
    inventories: Sequence[int],
    q_maxes: Sequence[int],
    ou: OUParams,
    signal_scale: float,
    seeds: Sequence[int],
    horizon_ns: int,
) -> List[Dict]:
    rows = []
    for theta in thetas:
        for inv in inventories:
            for qm in q_maxes:
                for seed in seeds:
                    cfg = MidFreqConfig(theta, inv, qm, signal_scale)
                    res = run_midfreq(sim_config, cfg, ou, horizon_ns, seed)
                    rows.append(
                        {
                            "theta": theta,
                            "max_inventory": inv,
                            "q_max": qm,
                            "self_impact": 1,
                            "seed": seed,
                            "pnl_ticks": res.pnl_half_ticks / 2.0,
                            "n_fills": res.n_fills,
                            "race_win_rate": float("nan"),
                        }
                    )
    return rows
