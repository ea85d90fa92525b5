"""Impact kernel, state recursion, biasing, target profile, likelihood."""

import math
import random

import numpy as np
import pytest

from qrlob.errors import TimeRegression
from qrlob.events import EventKey, TRADE_ASK, TRADE_BID
from qrlob.impact import (
    ImpactParams,
    ImpactState,
    KernelSpec,
    bias_probabilities,
    default_half_lives,
    fit_exponential_weights,
    kernel_value,
    phi_bruteforce,
    reduced_loglik,
    target_impact,
)
from qrlob.ingest import Transition
from qrlob.state import SpreadClass, StateKey, enumerate_events

STATE = StateKey(0, SpreadClass.ONE)


def test_kernel_value():
    assert kernel_value(50.0, 1.5, 0.0) == 1.0
    assert kernel_value(50.0, 1.5, 150.0) == pytest.approx(0.125)
    ts = np.linspace(0, 5000, 200)
    vals = kernel_value(50.0, 1.5, ts)
    assert (np.diff(vals) < 0).all() and vals[-1] < 1e-2


def test_fit_exponential_weights_structure():
    """Default fit reproduces the documented weight layout: nothing at the
    shortest half-lives, the bulk at 15.2 s and 43.3 s."""
    spec = fit_exponential_weights(50.0, 1.5)
    assert spec.K == 12
    h = spec.half_lives_s
    w = spec.weights
    assert w[0] == 0.0  # shortest half-life unused
    top_two = set(np.argsort(w)[-2:])
    assert top_two == {7, 8}, f"mass at {h[list(top_two)]}"
    # max relative error within 5% on the kernel's own support
    grid = np.geomspace(0.01, 1000.0, 400)
    rel = np.abs(spec.g_hat(grid) - kernel_value(50.0, 1.5, grid)) / kernel_value(50.0, 1.5, grid)
    assert rel.max() <= 0.05


def test_fit_recovers_single_exponential():
    h = default_half_lives()
    lam5 = math.log(2) / h[5]
    grid = np.geomspace(1e-3, 5e3, 200)
    target = np.exp(-lam5 * grid)
    X = np.exp(-np.outer(grid, math.log(2) / h))
    from qrlob.nnls import nnls

    w = nnls(X, target)
    assert w[5] == pytest.approx(1.0, abs=1e-6)
    others = np.delete(w, 5)
    assert others.max() < 1e-6


def test_register_and_phi_single_trade():
    spec = fit_exponential_weights(50.0, 1.5)
    state = ImpactState(spec)
    state.register_trade(0, +1, 4)
    assert state.phi(0) == pytest.approx(2.0 * spec.g_hat(0.0))
    # three crossover times later the kernel is near (1+3)^{-1.5} = 0.125
    t = int(150e9)
    assert state.phi(t) == pytest.approx(2.0 * spec.g_hat(150.0), rel=1e-12)
    assert state.phi(t) == pytest.approx(2.0 * 0.125, rel=0.05)


def test_buy_then_sell_cancels():
    state = ImpactState(fit_exponential_weights())
    state.register_trade(1000, +1, 9)
    state.register_trade(1000, -1, 9)
    assert state.phi(1000) == pytest.approx(0.0, abs=1e-12)


def test_time_regression():
    state = ImpactState(fit_exponential_weights())
    state.register_trade(1000, +1, 1)
    with pytest.raises(TimeRegression):
        state.register_trade(999, +1, 1)
    with pytest.raises(TimeRegression):
        state.phi(999)


def test_phi_monotone_decay_between_trades():
    state = ImpactState(fit_exponential_weights())
    state.register_trade(0, +1, 4)
    values = [state.phi(int(t * 1e9)) for t in np.linspace(0, 600, 50)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_recursion_matches_bruteforce():
    """1000 random trades, 100 random query times, 1e-9 relative agreement."""
    spec = fit_exponential_weights(50.0, 1.5)
    rng = random.Random(99)
    state = ImpactState(spec)
    trades = []
    t = 0
    queries = []
    all_phis = []
    for _ in range(1000):
        t += rng.randint(1, 2_000_000_000)
        eps = rng.choice((-1, 1))
        vol = rng.randint(1, 50)
        state.register_trade(t, eps, vol)
        trades.append((t, eps, vol))
    for _ in range(100):
        tq = t + rng.randint(0, 500_000_000_000)
        queries.append((tq, state.phi(tq)))
    for tq, got in queries:
        want = phi_bruteforce(spec, trades, tq)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-12)
        all_phis.append(want)
    assert max(abs(p) for p in all_phis) > 0  # the scenario is nondegenerate


def base_row():
    events = enumerate_events(STATE)
    row = {}
    for e in events:
        if e == TRADE_BID or e == TRADE_ASK:
            row[e] = 0.01
        else:
            row[e] = 0.98 / (len(events) - 2)
    return row


def test_bias_identity_at_zero():
    row = base_row()
    assert bias_probabilities(row, 0.0) == row


def test_bias_documented_arithmetic():
    row = base_row()
    b = 0.36
    out = bias_probabilities(row, b)
    z = 0.01 * math.exp(0.36) + 0.01 + 0.98
    assert out[TRADE_BID] == pytest.approx(0.01 * math.exp(0.36) / z)
    assert out[TRADE_ASK] == pytest.approx(0.01 / z)
    assert sum(out.values()) == pytest.approx(1.0)


def test_bias_monotonicity_and_invariant_odds():
    row = base_row()
    out = bias_probabilities(row, 0.8)
    assert out[TRADE_BID] > row[TRADE_BID]
    assert out[TRADE_ASK] < row[TRADE_ASK]
    nontrade = [e for e in row if not e.is_trade()]
    for a in nontrade:
        for b in nontrade:
            assert out[a] / out[b] == pytest.approx(row[a] / row[b])


def test_bias_sign_antisymmetry():
    row = base_row()
    out_pos = bias_probabilities(row, 0.5)
    mirrored = {e.mirror(): p for e, p in row.items()}
    out_mirror = bias_probabilities(mirrored, -0.5)
    for e, p in out_pos.items():
        assert out_mirror[e.mirror()] == pytest.approx(p)


def test_target_impact():
    assert target_impact(10.0, 10.0) == pytest.approx(1.0)
    assert target_impact(40.0, 10.0) == pytest.approx(2.0 - math.sqrt(3.0))
    assert target_impact(2.5, 10.0) == pytest.approx(0.5)


def test_impact_params_bias_sides():
    p = ImpactParams(m_plus=0.1, m_minus=0.2)
    assert p.bias(3.0) == pytest.approx(0.3)
    assert p.bias(-3.0) == pytest.approx(-0.6)
    assert p.bias(0.0) == 0.0


def make_transitions(events, dt_ns=1_000_000_000):
    return [Transition(dt_ns, e, 4, STATE) for e in events]


def test_reduced_loglik_null_model():
    prob = {STATE: base_row()}
    trs = make_transitions([TRADE_ASK, TRADE_BID, next(iter(base_row()))] * 5)
    assert reduced_loglik(trs, prob, 50.0, 1.5, 0.0) == 0.0


def test_reduced_loglik_no_trades():
    prob = {STATE: base_row()}
    nontrade = [e for e in base_row() if not e.is_trade()]
    trs = make_transitions(nontrade * 3)
    for m in (0.0, 0.1, 0.7):
        assert reduced_loglik(trs, prob, 50.0, 1.5, m) == pytest.approx(0.0)


def test_reduced_loglik_penalty_sign():
    # A lone buy then a long gap: phi > 0 at the second event, which is a
    # non-trade, so the contribution is -log Z < 0.
    prob = {STATE: base_row()}
    nontrade = next(e for e in base_row() if not e.is_trade())
    trs = [
        Transition(1_000_000_000, TRADE_ASK, 4, STATE),
        Transition(1_000_000_000, nontrade, 1, STATE),
    ]
    val = reduced_loglik(trs, prob, 50.0, 1.5, 0.5)
    assert val < 0.0
