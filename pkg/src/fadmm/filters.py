"""Filters that estimate the fad from prices or from order arrivals.

The price-based filter is a scalar Kalman-Bucy filter whose conditional
variance P_hat solves a deterministic Riccati ODE (solved once per parameter
set and shared across paths).  A bootstrap particle filter provides an
independent oracle for the same linear-Gaussian posterior.  The arrival-based
filter tracks a posterior over a finite set of fad levels driven by a
continuous-time Markov chain, updated from raw arrival counts.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .params import ConfigError, ModelParams, NumericError


@dataclass(frozen=True)
class FilterState:
    """Posterior mean and conditional variance of the fad at time t."""

    t: float
    u_hat: float
    p_hat: float


@dataclass(frozen=True)
class VarianceCurve:
    """Deterministic conditional-variance curve P_hat on a uniform grid."""

    time_grid: np.ndarray
    p_hat: np.ndarray

    def __post_init__(self):
        for name in ("time_grid", "p_hat"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def at(self, t):
        return np.interp(t, self.time_grid, self.p_hat)


def _riccati_rhs(p_hat, q_w: float, eta: float):
    """dP/dt = -eta^2 q^2 P^2 - P (2 eta - 2 eta q^2) + p^2 with p^2 = 1 - q^2."""
    p_sq = 1.0 - q_w * q_w
    return (-(eta * q_w) ** 2 * p_hat * p_hat
            - p_hat * (2.0 * eta - 2.0 * eta * q_w * q_w) + p_sq)


def _riccati_rhs_expanded(p_hat, q_w: float, eta: float):
    """Expanded proof form: -2 eta P (1 + q(P eta q - q)) + (1 + (P eta q - q) q)^2
    + ((P eta q - q) p)^2; algebraically identical to _riccati_rhs."""
    p_sq = 1.0 - q_w * q_w
    g = p_hat * eta * q_w - q_w
    return (-2.0 * eta * p_hat * (1.0 + q_w * g)
            + (1.0 + g * q_w) ** 2 + g * g * p_sq)


def solve_variance_curve(p: ModelParams, n_grid: int = 2001) -> VarianceCurve:
    """Forward RK4 for the conditional-variance Riccati on [0, horizon].

    Both algebraic forms of the right-hand side are evaluated at every node
    and must agree to 1e-10; the curve must stay nonnegative and below the
    unconditional OU variance (1 - e^{-2 eta t}) / (2 eta).
    """
    if n_grid < 2:
        raise ConfigError("solve_variance_curve: n_grid must be >= 2")
    grid = np.linspace(0.0, p.horizon, n_grid)
    h = p.horizon / (n_grid - 1)
    q_w, eta = p.q_weight, p.eta
    out = np.zeros(n_grid)
    y = 0.0
    for j in range(n_grid - 1):
        k1 = _riccati_rhs(y, q_w, eta)
        k2 = _riccati_rhs(y + 0.5 * h * k1, q_w, eta)
        k3 = _riccati_rhs(y + 0.5 * h * k2, q_w, eta)
        k4 = _riccati_rhs(y + h * k3, q_w, eta)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j + 1] = y
    if not np.all(np.isfinite(out)):
        raise NumericError("variance curve: non-finite values")
    gap = np.abs(_riccati_rhs(out, q_w, eta) - _riccati_rhs_expanded(out, q_w, eta))
    if np.max(gap) > 1e-10:
        raise NumericError(
            f"variance curve: Riccati forms disagree by {np.max(gap):.3e}")
    # tiny negative round-off near the P = 0 fixed point is clipped
    if np.min(out) < -1e-12:
        raise NumericError("variance curve: negative conditional variance")
    out = np.maximum(out, 0.0)
    unconditional = (1.0 - np.exp(-2.0 * eta * grid)) / (2.0 * eta)
    if np.max(out - unconditional) > 1e-9:
        raise NumericError("variance curve exceeds the unconditional OU variance")
    return VarianceCurve(time_grid=grid, p_hat=out)


def kalman_gain(p: ModelParams, p_hat):
    """Innovation loading sigma^{-1} (q_weight - eta*q_weight*P_hat)."""
    return (p.q_weight - p.eta * p.q_weight * p_hat) / p.sigma


def kalman_step(state: FilterState, ds: float, dt: float, p: ModelParams,
                variance: VarianceCurve) -> FilterState:
    """One filter update from a price increment ds over (t, t + dt].

    Innovation dI = ds - (mu - eta*sigma*q_weight*u_hat) dt; the posterior
    mean moves by -eta*u_hat*dt + gain * dI.  The variance is read from the
    precomputed curve (it is deterministic and independent of observations).
    """
    if dt <= 0:
        raise ConfigError("kalman_step: dt must be positive")
    di = ds - (p.mu - p.eta * p.sigma * p.q_weight * state.u_hat) * dt
    gain = kalman_gain(p, variance.at(state.t))
    u_next = state.u_hat - p.eta * state.u_hat * dt + gain * di
    t_next = state.t + dt
    return FilterState(t=t_next, u_hat=float(u_next),
                       p_hat=float(variance.at(t_next)))


def particle_filter_oracle(price_path, p: ModelParams, n_particles: int,
                           seed: int, dt: float | None = None) -> np.ndarray:
    """Bootstrap particle filter posterior mean of the fad given prices.

    Transition: exact OU step.  Likelihood of the price increment given the
    fad increment: Gaussian with mean mu*dt + sigma*q_weight*(u' - u) and
    standard deviation sigma*p_weight*sqrt(dt) (the martingale component).
    Systematic resampling every step.  Deterministic given the seed.
    """
    prices = np.asarray(price_path, dtype=float)
    if n_particles < 100:
        raise ConfigError("particle_filter_oracle: n_particles must be >= 100")
    n_steps = len(prices) - 1
    if dt is None:
        dt = p.horizon / n_steps
    if p.p_weight <= 0:
        raise ConfigError("particle_filter_oracle: requires p_weight > 0 "
                          "(price likelihood degenerates at q_weight = 1)")
    rng = np.random.default_rng(seed)
    decay = np.exp(-p.eta * dt)
    trans_sd = np.sqrt((1.0 - np.exp(-2.0 * p.eta * dt)) / (2.0 * p.eta))
    obs_sd = p.sigma * p.p_weight * np.sqrt(dt)

    u = np.zeros(n_particles)  # U_0 = 0 known
    means = np.zeros(n_steps + 1)
    for i in range(n_steps):
        u_new = u * decay + trans_sd * rng.standard_normal(n_particles)
        ds = prices[i + 1] - prices[i]
        resid = ds - p.mu * dt - p.sigma * p.q_weight * (u_new - u)
        logw = -0.5 * (resid / obs_sd) ** 2
        logw -= np.max(logw)
        w = np.exp(logw)
        total = w.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise NumericError(f"particle filter: degenerate weights at step {i}")
        w /= total
        means[i + 1] = float(np.dot(w, u_new))
        # systematic resampling
        positions = (rng.random() + np.arange(n_particles)) / n_particles
        u = u_new[np.searchsorted(np.cumsum(w), positions)]
    return means


@dataclass(frozen=True)
class CtmcFilter:
    """Arrival-count filter over a finite set of fad levels.

    states   : fad levels theta^1..theta^J
    generator: JxJ rate matrix L (rows sum to zero, off-diagonals >= 0)
    delta    : positive unnormalized weights; the posterior is
               pi_j = delta_j / sum(delta)
    lambda_a, lambda_b : per-state arrival rates of market orders
    """

    states: np.ndarray
    generator: np.ndarray
    delta: np.ndarray
    lambda_a: np.ndarray
    lambda_b: np.ndarray

    def __post_init__(self):
        # frozen arrays pass through untouched, keeping per-step construction
        # cheap in long filtering loops; structural checks rerun only when a
        # structural field arrives unfrozen (i.e. outside the step path)
        structural_change = False
        for name in ("states", "generator", "delta", "lambda_a", "lambda_b"):
            arr = getattr(self, name)
            if not (isinstance(arr, np.ndarray) and arr.dtype == np.float64
                    and not arr.flags.writeable):
                arr = np.array(arr, dtype=float)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)
                structural_change = structural_change or name != "delta"
        if np.min(self.delta) <= 0:
            raise ConfigError("ctmc filter: weights must be positive")
        if not structural_change:
            return
        j = len(self.states)
        if self.generator.shape != (j, j):
            raise ConfigError("ctmc filter: generator must be JxJ")
        if np.max(np.abs(self.generator.sum(axis=1))) > 1e-10:
            raise ConfigError("ctmc filter: generator rows must sum to zero")
        off = self.generator - np.diag(np.diag(self.generator))
        if np.min(off) < 0:
            raise ConfigError("ctmc filter: off-diagonal rates must be >= 0")


def _normalize_exact(delta: np.ndarray) -> np.ndarray:
    """Scale weights to sum to exactly 1.0.

    The rounding residual is folded into one component; the target component
    cycles because repeatedly correcting the same one can ping-pong by one
    ulp under pairwise summation.
    """
    out = delta / delta.sum()
    order = np.argsort(out)[::-1]
    for i in range(8 * len(out)):
        residual = 1.0 - out.sum()
        if residual == 0.0:
            return out
        out[order[i % len(out)]] += residual
    raise NumericError("weight normalization failed to reach an exact unit sum")


def ctmc_arrival_rates(p: ModelParams, states) -> tuple[np.ndarray, np.ndarray]:
    """Per-state arrival rates: lambda_a^j = phi + psi e^{-gamma((q sigma theta_j) v cap_lo)}
    and the bid mirror."""
    theta = np.asarray(states, dtype=float)
    lam_a = p.phi_uninformed + p.psi_informed * np.exp(
        -p.gamma * np.maximum(p.q_weight * p.sigma * theta, p.cap_lo))
    lam_b = p.phi_uninformed + p.psi_informed * np.exp(
        p.gamma * np.minimum(p.q_weight * p.sigma * theta, p.cap_hi))
    return lam_a, lam_b


def make_ctmc_filter(p: ModelParams, states, generator,
                     delta=None) -> CtmcFilter:
    """Build a CtmcFilter with model-implied arrival rates and uniform prior."""
    theta = np.asarray(states, dtype=float)
    gen = np.asarray(generator, dtype=float)
    lam_a, lam_b = ctmc_arrival_rates(p, theta)
    if delta is None:
        delta = np.full(len(theta), 1.0 / len(theta))
    delta = _normalize_exact(np.asarray(delta, dtype=float).copy())
    return CtmcFilter(states=theta, generator=gen, delta=delta,
                      lambda_a=lam_a, lambda_b=lam_b)


def ctmc_filter_step(f: CtmcFilter, dt: float, dm_a: int, dm_b: int) -> CtmcFilter:
    """Euler step of the unnormalized-weight SDE.

    Between arrivals each weight is multiplied by
    (1 - (lambda_a - 1) dt - (lambda_b - 1) dt); an arrival multiplies by the
    corresponding per-state rate.  Generator mixing adds sum_i delta_i L_ij dt.
    Weights are renormalized to sum one after every step (the posterior is
    scale-invariant, and renormalization prevents under/overflow).
    """
    if dt <= 0:
        raise ConfigError("ctmc_filter_step: dt must be positive")
    if dm_a not in (0, 1) or dm_b not in (0, 1):
        raise ConfigError("ctmc_filter_step: at most one arrival per side per step")
    factor = 1.0 - (f.lambda_a - 1.0) * dt - (f.lambda_b - 1.0) * dt
    if dm_a:
        factor = factor * f.lambda_a
    if dm_b:
        factor = factor * f.lambda_b
    new_delta = f.delta * factor + (f.delta @ f.generator) * dt
    if np.min(new_delta) <= 0.0:
        raise NumericError(
            "ctmc_filter_step: nonpositive weight after step; use a smaller dt")
    return replace(f, delta=_normalize_exact(new_delta))


def ctmc_posteriors(f: CtmcFilter):
    """Posterior probabilities and projected estimates.

    Returns (pi, u_hat, lambda_hat_a, lambda_hat_b) with pi the normalized
    weights, u_hat = sum_j theta_j pi_j, and lambda_hat the pi-weighted
    arrival rates.
    """
    pi = _normalize_exact(f.delta.copy())
    u_hat = float(np.dot(f.states, pi))
    lam_a_hat = float(np.dot(f.lambda_a, pi))
    lam_b_hat = float(np.dot(f.lambda_b, pi))
    return pi, u_hat, lam_a_hat, lam_b_hat
