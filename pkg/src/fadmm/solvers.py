"""Closed-form and ODE solutions of the quadratic-ansatz quote coefficients.

The value function is approximated by V(t,q,u) = q^2 A(t) + q B(t,u) + C(t,u)
with B linear and C quadratic in u.  A solves a scalar Riccati equation with
a closed form; the remaining coefficients solve linear ODEs integrated
backward from zero terminal conditions with classical RK4.

Three strategy kinds share this machinery:

* FI  - full information; quotes react to the true fad.
* PI  - partial information; after normalizing the paper-side sign convention
        the coefficient system coincides with FI except that the c0 equation
        consumes the time-dependent squared filter volatility
        x2(t)^2 = (q_weight - P_hat(t)*q_weight*eta)^2 in place of 1.
* CJP - fad-blind baseline with a single intensity scale chosen to match the
        expected number of market arrivals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import E_INV, fad_moment_integral
from .params import ConfigError, ModelParams, NumericError, Quote


@dataclass(frozen=True)
class StrategyCoefficients:
    """Solved coefficient curves on a uniform time grid.

    B(t,u) = b0 + u*b1 and C(t,u) = c0 + u*c1 + u^2*c2.  Terminal values are
    a(T) = -term_penalty and zero for the rest.  Immutable after construction.
    """

    time_grid: np.ndarray
    a: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    kind: str

    def __post_init__(self):
        for name in ("time_grid", "a", "b0", "b1", "c0", "c1", "c2"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
            if not np.all(np.isfinite(arr)):
                bad = int(np.argmax(~np.isfinite(arr)))
                raise NumericError(
                    f"{self.kind} coefficients: non-finite {name} at node {bad} "
                    f"(t={self.time_grid[min(bad, len(self.time_grid) - 1)]:.6g})"
                )

    def at(self, t):
        """Linear interpolation of (a, b0, b1) at time t (scalar or array)."""
        a = np.interp(t, self.time_grid, self.a)
        b0 = np.interp(t, self.time_grid, self.b0)
        b1 = np.interp(t, self.time_grid, self.b1)
        return a, b0, b1

    def value(self, t: float, q: float, u: float) -> float:
        """Quadratic-ansatz value V(t,q,u)."""
        a, b0, b1 = self.at(t)
        c0 = np.interp(t, self.time_grid, self.c0)
        c1 = np.interp(t, self.time_grid, self.c1)
        c2 = np.interp(t, self.time_grid, self.c2)
        return float(q * q * a + q * (b0 + u * b1) + c0 + u * c1 + u * u * c2)

    def to_csv(self, path) -> None:
        """Write columns t, a, b0, b1, c0, c1, c2."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,a,b0,b1,c0,c1,c2\n")
            for i in range(len(self.time_grid)):
                fh.write(",".join(repr(float(col[i])) for col in (
                    self.time_grid, self.a, self.b0, self.b1,
                    self.c0, self.c1, self.c2)) + "\n")


def riccati_kappa(p: ModelParams) -> float:
    """Riccati coefficient 4*(phi_uninformed + psi_informed)*e^{-1}*k_decay."""
    return 4.0 * (p.phi_uninformed + p.psi_informed) * E_INV * p.k_decay


def _riccati_a(t, horizon: float, run_penalty: float, term_penalty: float,
               kappa: float):
    """A(t) for A' = run_penalty - kappa*A^2, A(T) = -term_penalty.

    Uses the tanh representation, algebraically identical to the ratio form
        (sqrt(phi)/sqrt(kappa)) * (1 - e^{2 sqrt(phi kappa)(T-t)} beta)
                                / (1 + e^{2 sqrt(phi kappa)(T-t)} beta),
        beta = (sqrt(phi) + sqrt(kappa) alpha) / (sqrt(phi) - sqrt(kappa) alpha),
    but immune to overflow for large sqrt(phi*kappa)*(T-t).
    """
    t = np.asarray(t, dtype=float)
    if run_penalty < 0:
        raise ConfigError("riccati_a_closed_form: run_penalty must be >= 0")
    if np.any(t < -1e-12) or np.any(t > horizon * (1.0 + 1e-12)):
        raise ConfigError("riccati_a_closed_form: t outside [0, horizon]")
    tau = horizon - t
    if kappa == 0.0:
        return -term_penalty - run_penalty * tau
    if run_penalty == 0.0:
        # analytic limit of the ratio form
        return -term_penalty / (1.0 + kappa * term_penalty * tau)
    s_phi = math.sqrt(run_penalty)
    s_kap = math.sqrt(kappa)
    if abs(s_phi - s_kap * term_penalty) <= 1e-12 * max(s_phi, s_kap * term_penalty):
        # beta singularity: A = -term_penalty solves the ODE
        return -term_penalty * np.ones_like(tau)
    th = np.tanh(s_phi * s_kap * tau)
    return (-(s_phi / s_kap) * (s_phi * th + s_kap * term_penalty)
            / (s_phi + s_kap * term_penalty * th))


def riccati_a_closed_form(p: ModelParams, t):
    """Closed-form A(t); accepts scalar or array t in [0, horizon]."""
    out = _riccati_a(t, p.horizon, p.run_penalty, p.term_penalty, riccati_kappa(p))
    return float(out) if np.ndim(t) == 0 else out


def _solve_coefficient_system(*, horizon: float, mu: float, eta: float,
                              scale: float, psi: float, k: float,
                              fad_drift: float, gsq: float,
                              run_penalty: float, term_penalty: float,
                              n_grid: int, diffusion_sq, kind: str
                              ) -> StrategyCoefficients:
    """Backward RK4 for the five linear coefficient ODEs (FI sign convention).

    Forward-time derivatives, integrated from zero data at the horizon:

        b0' = -mu - kappa*a*b0
        b1' = fad_drift + eta*b1 - kappa*a*b1 - 4*e^{-1}*psi*gsq*(a + k*a^2)
        c0' = -D(t)*c2 - (e^{-1}/k)*scale*(2 + 2*k*a + k^2*(a^2 + b0^2))
        c1' = eta*c1 - (e^{-1}/k)*(2*psi*k*gsq*b0 + 2*k^2*scale*b0*b1
                                    + 2*k^2*psi*gsq*a*b0)
        c2' = 2*eta*c2 - (e^{-1}/k)*(k^2*scale*b1^2 + 2*k^2*psi*gsq*a*b1
                                      + 2*psi*k*gsq*b1)

    with kappa = 4*scale*e^{-1}*k, fad_drift = eta*sigma*q_weight, and
    gsq = gamma*sigma*q_weight.  `scale` is the total baseline intensity:
    (phi + psi) for FI/PI, kappa_cjp for CJP (with psi = gsq = fad_drift = 0).
    D(t) = diffusion_sq(t) is the squared u-volatility entering the c0
    equation: identically 1 for FI, x2(t)^2 for PI.
    """
    if n_grid < 2:
        raise ConfigError("n_grid must be >= 2")
    kappa = 4.0 * scale * E_INV * k
    grid = np.linspace(0.0, horizon, n_grid)
    h = horizon / (n_grid - 1)
    a_vals = _riccati_a(grid, horizon, run_penalty, term_penalty, kappa)
    a_half = _riccati_a(np.clip(grid[1:] - 0.5 * h, 0.0, horizon),
                        horizon, run_penalty, term_penalty, kappa)

    if diffusion_sq is None:
        d_vals = np.ones(n_grid)
        d_half = np.ones(n_grid - 1)
    else:
        d_vals = np.asarray(diffusion_sq(grid), dtype=float)
        d_half = np.asarray(diffusion_sq(grid[1:] - 0.5 * h), dtype=float)

    src = E_INV / k

    def rhs(a, d, y):
        b0, b1, c0, c1, c2 = y
        ka = kappa * a
        db0 = -mu - ka * b0
        db1 = (fad_drift + eta * b1 - ka * b1
               - 4.0 * E_INV * psi * gsq * (a + k * a * a))
        dc0 = -d * c2 - src * scale * (2.0 + 2.0 * k * a + k * k * (a * a + b0 * b0))
        dc1 = eta * c1 - src * (2.0 * psi * k * gsq * b0
                                + 2.0 * k * k * scale * b0 * b1
                                + 2.0 * k * k * psi * gsq * a * b0)
        dc2 = 2.0 * eta * c2 - src * (k * k * scale * b1 * b1
                                      + 2.0 * k * k * psi * gsq * a * b1
                                      + 2.0 * psi * k * gsq * b1)
        return np.array([db0, db1, dc0, dc1, dc2])

    out = np.zeros((n_grid, 5))
    y = np.zeros(5)  # terminal condition
    for j in range(n_grid - 1, 0, -1):
        k1 = rhs(a_vals[j], d_vals[j], y)
        k2 = rhs(a_half[j - 1], d_half[j - 1], y - 0.5 * h * k1)
        k3 = rhs(a_half[j - 1], d_half[j - 1], y - 0.5 * h * k2)
        k4 = rhs(a_vals[j - 1], d_vals[j - 1], y - h * k3)
        y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[j - 1] = y

    return StrategyCoefficients(
        time_grid=grid, a=np.asarray(a_vals, dtype=float).copy(),
        b0=out[:, 0].copy(), b1=out[:, 1].copy(), c0=out[:, 2].copy(),
        c1=out[:, 3].copy(), c2=out[:, 4].copy(), kind=kind)


def solve_fi_coefficients(p: ModelParams, n_grid: int = 2001) -> StrategyCoefficients:
    """Full-information coefficients on a uniform n_grid-point grid."""
    return _solve_coefficient_system(
        horizon=p.horizon, mu=p.mu, eta=p.eta,
        scale=p.phi_uninformed + p.psi_informed, psi=p.psi_informed,
        k=p.k_decay, fad_drift=p.eta * p.sigma * p.q_weight,
        gsq=p.gamma * p.sigma * p.q_weight,
        run_penalty=p.run_penalty, term_penalty=p.term_penalty,
        n_grid=n_grid, diffusion_sq=None, kind="FI")


def solve_pi_coefficients(p: ModelParams, variance, n_grid: int = 2001
                          ) -> StrategyCoefficients:
    """Partial-information coefficients, sign-normalized to the FI convention.

    The paper-side system carries V = -q^2 A - q B - C with A(T) = +alpha;
    storing the negated solution makes the downstream quote code branch-free.
    After that normalization only the c0 equation differs from FI: its c2
    source is scaled by x2(t)^2 = (q_weight - P_hat(t)*q_weight*eta)^2 taken
    from the supplied variance curve.

    For clean 4th-order grid convergence the variance curve should resolve the
    RK4 stage midpoints, i.e. carry 2*n_grid - 1 nodes (linear interpolation
    is used in between); quotes are unaffected either way since they read only
    a, b0, b1.
    """
    if variance.time_grid[0] > 0.0 or variance.time_grid[-1] < p.horizon * (1 - 1e-12):
        raise ConfigError("variance curve must cover [0, horizon]")

    def x2_sq(t):
        p_hat = np.interp(t, variance.time_grid, variance.p_hat)
        x2 = p.q_weight - p_hat * p.q_weight * p.eta
        return x2 * x2

    coeffs = _solve_coefficient_system(
        horizon=p.horizon, mu=p.mu, eta=p.eta,
        scale=p.phi_uninformed + p.psi_informed, psi=p.psi_informed,
        k=p.k_decay, fad_drift=p.eta * p.sigma * p.q_weight,
        gsq=p.gamma * p.sigma * p.q_weight,
        run_penalty=p.run_penalty, term_penalty=p.term_penalty,
        n_grid=n_grid, diffusion_sq=x2_sq, kind="PI")
    return coeffs


def cjp_kappa(p: ModelParams) -> float:
    """Arrival scale phi + (psi/T) * Int_0^T E[e^{gamma sigma q_w U_t}] dt.

    Matches the expected number of market arrivals of the full model; equals
    phi + psi exactly when the fad channel is off (gamma = 0 or q_weight = 0).
    """
    a = p.gamma * p.sigma * p.q_weight
    if a == 0.0:
        return p.phi_uninformed + p.psi_informed
    integral = fad_moment_integral(a, p.horizon, p.eta)
    return p.phi_uninformed + p.psi_informed * integral / p.horizon


def solve_cjp_coefficients(p: ModelParams, n_grid: int = 2001) -> StrategyCoefficients:
    """Fad-blind baseline: FI system with the fad channel removed and the
    intensity scale kappa_cjp; quotes depend on (t, q) only."""
    return _solve_coefficient_system(
        horizon=p.horizon, mu=p.mu, eta=p.eta,
        scale=cjp_kappa(p), psi=0.0, k=p.k_decay,
        fad_drift=0.0, gsq=0.0,
        run_penalty=p.run_penalty, term_penalty=p.term_penalty,
        n_grid=n_grid, diffusion_sq=None, kind="CJP")


def quote(coeffs: StrategyCoefficients, p: ModelParams, t: float, q: int,
          u_or_uhat: float) -> Quote:
    """Optimal displacements from the quadratic ansatz.

    delta_a = (1/k + A(2q-1) + B(t,u)) v delta_floor_ask
    delta_b = (1/k - A(2q+1) - B(t,u)) v delta_floor_bid

    These are the difference identities V(t,q,u) - V(t,q-1,u) and
    V(t,q,u) - V(t,q+1,u) expanded from the ansatz; exactness against a
    double evaluation of V is asserted in tests.  For the CJP kind the fad
    argument is ignored (its B is constant in u by construction).
    """
    if not (0.0 <= t <= p.horizon * (1.0 + 1e-12)):
        raise ConfigError(f"quote: t={t} outside [0, {p.horizon}]")
    if not (p.q_min <= q <= p.q_max):
        raise ConfigError(f"quote: inventory {q} outside [{p.q_min}, {p.q_max}]")
    a, b0, b1 = coeffs.at(t)
    u_eff = 0.0 if coeffs.kind == "CJP" else u_or_uhat
    b = b0 + u_eff * b1
    inv_k = 1.0 / p.k_decay
    delta_a = max(inv_k + a * (2.0 * q - 1.0) + b, p.delta_floor_ask)
    delta_b = max(inv_k - a * (2.0 * q + 1.0) - b, p.delta_floor_bid)
    return Quote(delta_a=float(delta_a), delta_b=float(delta_b),
                 ask_active=q > p.q_min, bid_active=q < p.q_max)
