"""Arrival intensities, payoff functionals, and the informed-intensity calibration.

The mid-price carries a mean-reverting fad component U (an OU process with
speed eta and unit diffusion, U_0 = 0).  Liquidity takers arrive on each side
at a rate that decays exponentially in the posted displacement; informed
takers additionally scale their arrival rate by the distance between the
mid-price and the fundamental price s - sigma*q_weight*u.
"""

from __future__ import annotations

import math

import numpy as np

from .params import ConfigError, ModelParams, NumericError

E_INV = math.exp(-1.0)


def _check_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ConfigError(f"{name}: non-finite input {v!r}")


def informed_factor_ask(p: ModelParams, u: float):
    """psi * exp(-gamma * (sigma*q_weight*u  v  cap_lo)); bounded above by psi*e^{-gamma*cap_lo}."""
    return p.psi_informed * np.exp(-p.gamma * np.maximum(p.sigma * p.q_weight * u, p.cap_lo))


def informed_factor_bid(p: ModelParams, u: float):
    return p.psi_informed * np.exp(p.gamma * np.minimum(p.sigma * p.q_weight * u, p.cap_hi))


def intensity_ask(p: ModelParams, u: float, q: int, delta_a: float) -> float:
    """Arrival intensity of sell-side fills at displacement delta_a.

    Zero at the lower inventory bound (the maker does not quote a side whose
    fill would breach the bound).
    """
    _check_finite("intensity_ask", u, delta_a)
    if q <= p.q_min:
        return 0.0
    decay = math.exp(-p.k_decay * delta_a)
    return (p.phi_uninformed + float(informed_factor_ask(p, u))) * decay


def intensity_bid(p: ModelParams, u: float, q: int, delta_b: float) -> float:
    """Mirror of intensity_ask: fad term enters with opposite sign, bound at q_max."""
    _check_finite("intensity_bid", u, delta_b)
    if q >= p.q_max:
        return 0.0
    decay = math.exp(-p.k_decay * delta_b)
    return (p.phi_uninformed + float(informed_factor_bid(p, u))) * decay


def fundamental_price(s: float, u: float, p: ModelParams) -> float:
    """Mid-price purged of the fad component: s - sigma * q_weight * u."""
    return s - p.sigma * p.q_weight * u


def expected_exp_fad(a: float, t: float, eta: float) -> float:
    """E[exp(a * U_t)] for the centered OU fad started at zero.

    U_t ~ N(0, (1 - e^{-2 eta t}) / (2 eta)), so the expectation is the
    lognormal moment exp(a^2 * (1 - e^{-2 eta t}) / (4 eta)); symmetric in
    a <-> -a.
    """
    if t < 0:
        raise ConfigError("expected_exp_fad: t must be >= 0")
    if eta <= 0:
        raise ConfigError("expected_exp_fad: eta must be > 0")
    return math.exp(a * a * (1.0 - math.exp(-2.0 * eta * t)) / (4.0 * eta))


def _gauss_legendre_integral(f, a: float, b: float, rtol: float = 1e-10,
                             n0: int = 16, max_doublings: int = 12) -> float:
    """Gauss-Legendre quadrature, doubling the node count until the relative
    change falls below rtol."""
    prev = None
    n = n0
    for _ in range(max_doublings):
        x, w = np.polynomial.legendre.leggauss(n)
        xs = 0.5 * (b - a) * x + 0.5 * (b + a)
        val = 0.5 * (b - a) * float(np.dot(w, f(xs)))
        if prev is not None and abs(val - prev) <= rtol * max(1.0, abs(val)):
            return val
        prev = val
        n *= 2
    raise NumericError(f"quadrature did not converge to rtol={rtol} (last value {prev})")


def fad_moment_integral(a: float, horizon: float, eta: float, rtol: float = 1e-10) -> float:
    """Integral over [0, horizon] of E[exp(a * U_t)] dt."""
    a2 = a * a

    def integrand(t):
        return np.exp(a2 * (1.0 - np.exp(-2.0 * eta * t)) / (4.0 * eta))

    return _gauss_legendre_integral(integrand, 0.0, horizon, rtol=rtol)


def calibrate_psi(p: ModelParams, target_arrivals: float = 30.0) -> float:
    """Informed baseline intensity that fixes the expected per-side arrival
    count (at zero displacements) to target_arrivals.

    Solves target = phi*T + psi * Int_0^T E[exp(gamma*sigma*q_weight*U_t)] dt.
    Both sign branches of the exponent give the same integral because the fad
    law is symmetric around zero (asserted in tests).
    """
    if target_arrivals <= p.phi_uninformed * p.horizon:
        raise ConfigError(
            "calibrate_psi: target_arrivals must exceed phi_uninformed * horizon "
            f"({p.phi_uninformed * p.horizon}); no nonnegative psi exists"
        )
    a = p.gamma * p.sigma * p.q_weight
    integral = fad_moment_integral(a, p.horizon, p.eta)
    return (target_arrivals - p.phi_uninformed * p.horizon) / integral


def calibrated_params(p: ModelParams, target_arrivals: float = 30.0) -> ModelParams:
    """Copy of p with psi_informed set by calibrate_psi."""
    return p.with_(psi_informed=calibrate_psi(p, target_arrivals))


def inventory_penalty_integral(times: np.ndarray, inventory: np.ndarray) -> float:
    """Exact integral of Q_t^2 dt for a piecewise-constant inventory path.

    inventory[i] is the holding on [times[i], times[i+1]); the last entry is
    the terminal inventory and carries no interval.
    """
    times = np.asarray(times, dtype=float)
    inventory = np.asarray(inventory, dtype=float)
    return float(np.dot(inventory[:-1] ** 2, np.diff(times)))


def performance(path, p: ModelParams, mark: str = "mid") -> float:
    """Realized performance of a completed path.

    mark="mid":          X_T + Q_T*S_T - alpha*Q_T^2 - phi_run * Int Q_u^2 du
    mark="fundamental":  same with S_T replaced by S_T - sigma*q_weight*U_T

    The running integral is an exact sum over the constancy intervals of the
    integer-valued inventory, not a Riemann sample.
    """
    if mark not in ("mid", "fundamental"):
        raise ConfigError(f"performance: unknown mark {mark!r}")
    if abs(path.times[-1] - p.horizon) > 1e-12 * max(1.0, p.horizon):
        raise RuntimeError(
            f"performance: path ends at t={path.times[-1]}, not at the horizon {p.horizon}"
        )
    q_T = path.q[-1]
    running = inventory_penalty_integral(path.times, path.q)
    mid_value = float(path.x[-1] + q_T * path.s[-1] - p.term_penalty * q_T**2
                      - p.run_penalty * running)
    if mark == "mid":
        return mid_value
    # computed through the identity mid - fundamental = Q_T * sigma * q_w * U_T
    # so the pathwise relation holds exactly in floating point
    return mid_value - q_T * p.sigma * p.q_weight * path.u[-1]
