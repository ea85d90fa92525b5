"""Queue-reactive limit order book simulation toolkit.

Calibrate a state-projected book model from depth-event streams, simulate it
with realistic inter-event timing and market-impact feedback, and backtest
strategies that race other participants and pay their own impact.
"""

__version__ = "0.1.0"

from .book import OrderBook, apply_event, imbalance, normalize_size, re_express_units
from .calibrate import (
    LatencyModel,
    ParameterBundle,
    TimingModel,
    calibrate_bundle,
    compute_mes,
    estimate_delta,
    estimate_event_probs,
    estimate_intensity,
    estimate_volume_dists,
    load_bundle,
    save_bundle,
    symmetrise,
)
from .engine import (
    Engine,
    EventLog,
    FillResult,
    MetaorderSpec,
    SimConfig,
    run_metaorder_experiment,
    sample_dt,
)
from .events import EventKey, EventKind
from .gmm import Mixture1D, fit_gmm, select_k_bic
from .impact import (
    ImpactParams,
    ImpactState,
    KernelSpec,
    TargetProfile,
    bias_probabilities,
    calibrate_m,
    fit_exponential_weights,
    kernel_value,
    mle_calibrate,
    reduced_loglik,
    target_impact,
)
from .ingest import (
    RawDepthEvent,
    Transition,
    aggregate_creates,
    aggregate_trades,
    build_transitions,
    filter_session,
    generate_synthetic,
    parse_stream,
    write_stream,
)
from .nnls import nnls
from .presets import paperlike_bundle, uniform_bundle
from .state import StateKey, bin_imbalance, enumerate_events, project
from .strategy import (
    Account,
    BacktestResult,
    HftConfig,
    MidFreqConfig,
    OUParams,
    combined_bias,
    mark_to_market,
    ou_step,
    predictiveness,
    run_hft,
    run_midfreq,
)
