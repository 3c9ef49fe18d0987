"""Path simulation and Monte Carlo aggregation under FI / PI / CJP quoting.

One vectorized engine drives everything: a batch of paths is advanced step by
step with numpy state vectors, all strategies consuming the same Brownian
increments and the same per-side fill uniforms (common random numbers).
`simulate_path` is the same engine with a batch of one plus full series
recording, so single-path records and aggregate statistics cannot drift
apart.

Ground truth is always the full-information market: fills draw from the true
intensities evaluated at the true fad, whatever the strategy believes.

Randomness is counter-based: batch b uses SeedSequence(seed, spawn_key=(b, c))
with channel c = 0 for Gaussian increments and c = 1 for fill uniforms, and
each step draws its vectors in a fixed order.  Results therefore depend only
on (seed, n_paths, n_steps), never on thread scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .filters import VarianceCurve, kalman_gain, solve_variance_curve
from .params import ConfigError, ModelParams
from .solvers import (StrategyCoefficients, solve_cjp_coefficients,
                      solve_fi_coefficients, solve_pi_coefficients)

DEFAULT_BATCH = 16384


@dataclass(frozen=True)
class Strategy:
    """A quoting rule plus the parameters it believes in.

    kind is one of "FI", "PI", "CJP", "FIXED".  quote_params may differ from
    the simulation's true parameters (misspecification studies); the market
    itself always evolves under the true ones.
    """

    kind: str
    quote_params: ModelParams
    coeffs: StrategyCoefficients | None = None
    variance: VarianceCurve | None = None
    fixed_ask: float = 0.0
    fixed_bid: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("FI", "PI", "CJP", "FIXED"):
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if self.kind in ("FI", "PI", "CJP") and self.coeffs is None:
            raise ConfigError(f"{self.kind} strategy requires coefficients")
        if self.kind == "PI" and self.variance is None:
            raise ConfigError("PI strategy requires a variance curve")
        if not self.label:
            object.__setattr__(self, "label", self.kind)


def make_fi_strategy(p: ModelParams, n_grid: int = 2001, label: str = "FI") -> Strategy:
    return Strategy(kind="FI", quote_params=p,
                    coeffs=solve_fi_coefficients(p, n_grid), label=label)


def make_pi_strategy(p: ModelParams, n_grid: int = 2001, label: str = "PI") -> Strategy:
    variance = solve_variance_curve(p, 2 * n_grid - 1)
    return Strategy(kind="PI", quote_params=p,
                    coeffs=solve_pi_coefficients(p, variance, n_grid),
                    variance=variance, label=label)


def make_cjp_strategy(p: ModelParams, n_grid: int = 2001, label: str = "CJP") -> Strategy:
    return Strategy(kind="CJP", quote_params=p,
                    coeffs=solve_cjp_coefficients(p, n_grid), label=label)


def make_fixed_strategy(p: ModelParams, delta_a: float, delta_b: float,
                        label: str = "FIXED") -> Strategy:
    return Strategy(kind="FIXED", quote_params=p, fixed_ask=delta_a,
                    fixed_bid=delta_b, label=label)


def misspecified_quote_source(p_true: ModelParams, p_believed: ModelParams,
                              n_grid: int = 2001, label: str = "FI-miss") -> Strategy:
    """Full-information quoting computed from a wrong parameter set.

    The returned strategy observes the true fad but prices with coefficients
    (and k, floors) of the believed model; simulate under p_true to measure
    the robustness loss.
    """
    del p_true  # dynamics stay with the caller; only the beliefs matter here
    return Strategy(kind="FI", quote_params=p_believed,
                    coeffs=solve_fi_coefficients(p_believed, n_grid), label=label)


@dataclass(frozen=True)
class FillEvent:
    time: float
    side: str          # "ask" or "bid"
    displacement: float
    price: float
    informed: bool


@dataclass(frozen=True)
class PathRecord:
    """One simulated trajectory (series on the step grid, fills, filter)."""

    times: np.ndarray
    u: np.ndarray
    s: np.ndarray
    q: np.ndarray
    x: np.ndarray
    fills: tuple
    seed: int
    filter_t: np.ndarray | None = None
    filter_u_hat: np.ndarray | None = None
    filter_p_hat: np.ndarray | None = None


@dataclass(frozen=True)
class McStats:
    """Aggregate performance of one strategy over a Monte Carlo run."""

    label: str
    n_paths: int
    mean: float
    stdev: float
    se: float
    mean_ask_fills: float
    mean_bid_fills: float
    mean_informed_fills: float
    mean_uninformed_fills: float
    bound_hit_rate: float
    clamp_count: int
    # paired difference of strategy 0's performance minus this strategy's
    diff_vs_first_mean: float = math.nan
    diff_vs_first_se: float = math.nan


class _StrategyRuntime:
    """Per-batch quoting state and precomputed per-step coefficients."""

    def __init__(self, strategy: Strategy, p_true: ModelParams, n_steps: int,
                 n: int):
        self.strategy = strategy
        b = strategy.quote_params
        dt = p_true.horizon / n_steps
        t_steps = np.arange(n_steps) * dt
        self.inv_k = 1.0 / b.k_decay
        self.floor_a = b.delta_floor_ask
        self.floor_b = b.delta_floor_bid
        if strategy.kind == "FIXED":
            self.a = np.zeros(n_steps)
            self.b0 = np.full(n_steps, 0.0)
            self.b1 = np.zeros(n_steps)
        else:
            self.a, self.b0, self.b1 = strategy.coeffs.at(t_steps)
        if strategy.kind == "PI":
            p_hat = strategy.variance.at(t_steps)
            self.gain = kalman_gain(b, p_hat)
            self.p_hat_steps = p_hat
            self.u_hat = np.zeros(n)
            self.drift_mu = b.mu
            self.drift_eta_sq = b.eta * b.sigma * b.q_weight
            self.eta_b = b.eta
        self.q = np.full(n, float(p_true.q0))
        self.x = np.full(n, float(p_true.x0))
        self.run_int = np.zeros(n)
        self.ask_fills = np.zeros(n)
        self.bid_fills = np.zeros(n)
        self.informed_fills = np.zeros(n)
        self.uninformed_fills = np.zeros(n)
        self.bound_hits = 0
        self.clamp_count = 0

    def quotes(self, i: int, u_true: np.ndarray):
        st = self.strategy
        if st.kind == "FIXED":
            n = len(self.q)
            return np.full(n, st.fixed_ask), np.full(n, st.fixed_bid)
        if st.kind == "FI":
            u_quote = u_true
        elif st.kind == "PI":
            u_quote = self.u_hat
        else:  # CJP ignores the fad
            u_quote = 0.0
        b_lin = self.b0[i] + u_quote * self.b1[i]
        delta_a = self.inv_k + self.a[i] * (2.0 * self.q - 1.0) + b_lin
        delta_b = self.inv_k - self.a[i] * (2.0 * self.q + 1.0) - b_lin
        if self.floor_a != -math.inf:
            delta_a = np.maximum(delta_a, self.floor_a)
        if self.floor_b != -math.inf:
            delta_b = np.maximum(delta_b, self.floor_b)
        return delta_a, delta_b

    def filter_update(self, i: int, ds: np.ndarray, dt: float):
        if self.strategy.kind != "PI":
            return
        u_hat = self.u_hat
        di = ds - (self.drift_mu - self.drift_eta_sq * u_hat) * dt
        self.u_hat = u_hat - self.eta_b * u_hat * dt + self.gain[i] * di


def _batch_rngs(seed: int, batch_idx: int):
    gauss = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                         spawn_key=(batch_idx, 0)))
    fill = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(batch_idx, 1)))
    return gauss, fill


def _simulate_batch(p: ModelParams, strategies, n_steps: int, n: int,
                    seed: int, batch_idx: int, record: bool = False):
    """Advance one batch of n paths; returns per-strategy results.

    Without recording: dict with perf_mid, perf_fund, fill counts, etc.
    With recording: additionally full series and per-step fill data.
    """
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    dt = p.horizon / n_steps
    gauss, fill_rng = _batch_rngs(seed, batch_idx)
    runtimes = [_StrategyRuntime(st, p, n_steps, n) for st in strategies]

    decay = math.exp(-p.eta * dt)
    sd_xi = math.sqrt((1.0 - math.exp(-2.0 * p.eta * dt)) / (2.0 * p.eta))
    sq_dt = math.sqrt(dt)
    sig_qw = p.sigma * p.q_weight
    k_true = p.k_decay
    phi = p.phi_uninformed
    psi = p.psi_informed
    gam = p.gamma

    u = np.zeros(n)
    z = np.zeros(n)
    s = np.full(n, p.s0)

    rec = None
    if record:
        rec = {
            "u": np.empty((n_steps + 1, n)), "s": np.empty((n_steps + 1, n)),
            "q": [np.empty((n_steps + 1, n)) for _ in strategies],
            "x": [np.empty((n_steps + 1, n)) for _ in strategies],
            "u_hat": [np.empty((n_steps + 1, n)) if st.kind == "PI" else None
                       for st in strategies],
            "fill_a": [np.zeros((n_steps, n), dtype=bool) for _ in strategies],
            "fill_b": [np.zeros((n_steps, n), dtype=bool) for _ in strategies],
            "inf_a": [np.zeros((n_steps, n), dtype=bool) for _ in strategies],
            "inf_b": [np.zeros((n_steps, n), dtype=bool) for _ in strategies],
            "delta_a": [np.zeros((n_steps, n)) for _ in strategies],
            "delta_b": [np.zeros((n_steps, n)) for _ in strategies],
        }
        rec["u"][0] = u
        rec["s"][0] = s
        for j, rt in enumerate(runtimes):
            rec["q"][j][0] = rt.q
            rec["x"][j][0] = rt.x
            if rec["u_hat"][j] is not None:
                rec["u_hat"][j][0] = rt.u_hat

    for i in range(n_steps):
        xi = gauss.standard_normal(n)
        dz = gauss.standard_normal(n)
        ua = fill_rng.random(n)
        ub = fill_rng.random(n)

        # true informed intensity factors at the current fad
        inf_factor_a = psi * np.exp(-gam * np.maximum(sig_qw * u, p.cap_lo))
        inf_factor_b = psi * np.exp(gam * np.minimum(sig_qw * u, p.cap_hi))

        for j, rt in enumerate(runtimes):
            delta_a, delta_b = rt.quotes(i, u)
            ask_open = rt.q > p.q_min
            bid_open = rt.q < p.q_max
            decay_a = np.exp(-k_true * delta_a)
            decay_b = np.exp(-k_true * delta_b)
            lam_a_dt = (phi + inf_factor_a) * decay_a * dt
            lam_b_dt = (phi + inf_factor_b) * decay_b * dt
            lam_a_dt = np.where(ask_open, lam_a_dt, 0.0)
            lam_b_dt = np.where(bid_open, lam_b_dt, 0.0)
            rt.clamp_count += int(np.count_nonzero(lam_a_dt > 1.0)
                                  + np.count_nonzero(lam_b_dt > 1.0))
            pa = np.minimum(lam_a_dt, 1.0)
            pb = np.minimum(lam_b_dt, 1.0)
            fill_a = ua < pa
            fill_b = ub < pb
            # informed attribution by sub-interval thinning of the same uniform
            inf_a = ua < np.minimum(np.where(ask_open, inf_factor_a * decay_a * dt, 0.0), 1.0)
            inf_b = ub < np.minimum(np.where(bid_open, inf_factor_b * decay_b * dt, 0.0), 1.0)

            rt.run_int += rt.q**2 * dt
            rt.bound_hits += int(np.count_nonzero(~ask_open) + np.count_nonzero(~bid_open))
            rt.x += fill_a * (s + delta_a) - fill_b * (s - delta_b)
            rt.q += np.subtract(fill_b, fill_a, dtype=float)
            rt.ask_fills += fill_a
            rt.bid_fills += fill_b
            rt.informed_fills += np.add(inf_a, inf_b, dtype=float)
            rt.uninformed_fills += np.add(fill_a & ~inf_a, fill_b & ~inf_b, dtype=float)

            if record:
                rec["fill_a"][j][i] = fill_a
                rec["fill_b"][j][i] = fill_b
                rec["inf_a"][j][i] = inf_a
                rec["inf_b"][j][i] = inf_b
                rec["delta_a"][j][i] = delta_a
                rec["delta_b"][j][i] = delta_b

        u_next = u * decay + sd_xi * xi
        z = z + sq_dt * dz
        t_next = (i + 1) * dt
        s_next = p.s0 + p.mu * t_next + p.sigma * (p.p_weight * z + p.q_weight * u_next)
        ds = s_next - s
        for rt in runtimes:
            rt.filter_update(i, ds, dt)
        u, s = u_next, s_next

        if record:
            rec["u"][i + 1] = u
            rec["s"][i + 1] = s
            for j, rt in enumerate(runtimes):
                rec["q"][j][i + 1] = rt.q
                rec["x"][j][i + 1] = rt.x
                if rec["u_hat"][j] is not None:
                    rec["u_hat"][j][i + 1] = rt.u_hat

    results = []
    for rt in runtimes:
        perf_mid = (rt.x + rt.q * s - p.term_penalty * rt.q**2
                    - p.run_penalty * rt.run_int)
        perf_fund = perf_mid - rt.q * (sig_qw * u)
        results.append({
            "perf_mid": perf_mid, "perf_fund": perf_fund,
            "ask_fills": rt.ask_fills, "bid_fills": rt.bid_fills,
            "informed": rt.informed_fills, "uninformed": rt.uninformed_fills,
            "bound_hits": rt.bound_hits, "clamp_count": rt.clamp_count,
            "q_final": rt.q.copy(), "u_final": u.copy(),
        })
    return results, rec


def simulate_path(p: ModelParams, strategy: Strategy, n_steps: int,
                  seed: int) -> PathRecord:
    """One fully recorded trajectory; bit-identical for identical inputs.

    Uses the batch engine with a batch of one, so it reproduces the first
    path of a monte_carlo run with the same seed.
    """
    results, rec = _simulate_batch(p, [strategy], n_steps, 1, seed, 0,
                                   record=True)
    dt = p.horizon / n_steps
    times = np.arange(n_steps + 1) * dt
    fills = []
    for i in range(n_steps):
        if rec["fill_a"][0][i, 0]:
            fills.append(FillEvent(time=times[i + 1], side="ask",
                                   displacement=float(rec["delta_a"][0][i, 0]),
                                   price=float(rec["s"][i, 0] + rec["delta_a"][0][i, 0]),
                                   informed=bool(rec["inf_a"][0][i, 0])))
        if rec["fill_b"][0][i, 0]:
            fills.append(FillEvent(time=times[i + 1], side="bid",
                                   displacement=float(rec["delta_b"][0][i, 0]),
                                   price=float(rec["s"][i, 0] - rec["delta_b"][0][i, 0]),
                                   informed=bool(rec["inf_b"][0][i, 0])))
    filter_kwargs = {}
    if strategy.kind == "PI":
        p_hat_path = strategy.variance.at(times)
        filter_kwargs = dict(filter_t=times.copy(),
                             filter_u_hat=rec["u_hat"][0][:, 0].copy(),
                             filter_p_hat=np.asarray(p_hat_path, dtype=float))
    return PathRecord(times=times, u=rec["u"][:, 0].copy(),
                      s=rec["s"][:, 0].copy(), q=rec["q"][0][:, 0].copy(),
                      x=rec["x"][0][:, 0].copy(), fills=tuple(fills),
                      seed=seed, **filter_kwargs)


def simulate_series(p: ModelParams, strategy: Strategy, n_paths: int,
                    n_steps: int, seed: int) -> dict:
    """Recorded series for a modest batch (diagnostics and figure data).

    Returns arrays of shape (n_steps + 1, n_paths) for u, s, q, x and, for PI
    strategies, u_hat.
    """
    if n_paths > 10000:
        raise ConfigError("simulate_series: n_paths too large for recording")
    _, rec = _simulate_batch(p, [strategy], n_steps, n_paths, seed, 0,
                             record=True)
    out = {"u": rec["u"], "s": rec["s"], "q": rec["q"][0], "x": rec["x"][0]}
    if rec["u_hat"][0] is not None:
        out["u_hat"] = rec["u_hat"][0]
    return out


def _stats_from_arrays(label: str, perf: np.ndarray, extras: dict,
                       diff: np.ndarray | None) -> McStats:
    n = len(perf)
    mean = float(np.mean(perf))
    if n > 1:
        stdev = float(np.std(perf, ddof=1))
        se = stdev / math.sqrt(n)
    else:
        stdev = math.nan
        se = math.nan
    if diff is not None and n > 1:
        dmean = float(np.mean(diff))
        dse = float(np.std(diff, ddof=1)) / math.sqrt(n)
    else:
        dmean, dse = math.nan, math.nan
    return McStats(
        label=label, n_paths=n, mean=mean, stdev=stdev, se=se,
        mean_ask_fills=float(np.mean(extras["ask_fills"])),
        mean_bid_fills=float(np.mean(extras["bid_fills"])),
        mean_informed_fills=float(np.mean(extras["informed"])),
        mean_uninformed_fills=float(np.mean(extras["uninformed"])),
        bound_hit_rate=extras["bound_hits"] / extras["step_count"],
        clamp_count=extras["clamp_count"],
        diff_vs_first_mean=dmean, diff_vs_first_se=dse)


def monte_carlo(p: ModelParams, strategies, n_paths: int, n_steps: int,
                seed: int, mark: str = "mid", threads: int = 1,
                batch_size: int = DEFAULT_BATCH,
                return_performance: bool = False):
    """Run all strategies over n_paths common-random-number paths.

    Returns a list of McStats (one per strategy, in order).  Each strategy
    beyond the first also carries the paired difference statistics
    perf[0] - perf[j].  With return_performance=True, returns
    (stats, perf_matrix) where perf_matrix has shape (n_strategies, n_paths)
    for the selected mark.
    """
    if mark not in ("mid", "fundamental"):
        raise ConfigError(f"monte_carlo: unknown mark {mark!r}")
    if n_paths < 1:
        raise ConfigError("monte_carlo: n_paths must be >= 1")
    strategies = list(strategies)
    batches = []
    start = 0
    while start < n_paths:
        size = min(batch_size, n_paths - start)
        batches.append((len(batches), size))
        start += size

    def run_one(args):
        batch_idx, size = args
        results, _ = _simulate_batch(p, strategies, n_steps, size, seed,
                                     batch_idx, record=False)
        return results

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batch_results = list(pool.map(run_one, batches))
    else:
        batch_results = [run_one(b) for b in batches]

    key = "perf_mid" if mark == "mid" else "perf_fund"
    stats = []
    perf_rows = []
    for j, st in enumerate(strategies):
        perf = np.concatenate([br[j][key] for br in batch_results])
        extras = {
            "ask_fills": np.concatenate([br[j]["ask_fills"] for br in batch_results]),
            "bid_fills": np.concatenate([br[j]["bid_fills"] for br in batch_results]),
            "informed": np.concatenate([br[j]["informed"] for br in batch_results]),
            "uninformed": np.concatenate([br[j]["uninformed"] for br in batch_results]),
            "bound_hits": sum(br[j]["bound_hits"] for br in batch_results),
            "clamp_count": sum(br[j]["clamp_count"] for br in batch_results),
            "step_count": 2 * n_paths * n_steps,  # two sides per step
        }
        diff = None
        if j > 0:
            first = np.concatenate([br[0][key] for br in batch_results])
            diff = first - perf
        stats.append(_stats_from_arrays(st.label, perf, extras, diff))
        if return_performance:
            perf_rows.append(perf)
    if return_performance:
        return stats, np.vstack(perf_rows)
    return stats
