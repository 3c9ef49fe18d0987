"""Finite-difference solver for the full nonlinear quoting HJB.

Validates the quadratic closed-form approximation: the PDE in (t, q, u) is
solved backward with an IMEX scheme (implicit diffusion and upwinded drift,
explicit exponential Hamiltonian and coupling across inventory levels), and
its feedback displacements are compared against the closed-form quotes.

The partial-information variant differs only through the time-dependent
squared diffusion coefficient (q_weight - P_hat(t)*q_weight*eta)^2 supplied
by the variance curve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .filters import VarianceCurve, solve_variance_curve
from .model import E_INV
from .params import ConfigError, ModelParams, NumericError, Quote

BLOWUP_LIMIT = 1e9


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the (t, u) domain; inventory range comes from params."""

    u_max: float
    n_t: int = 4000
    n_u: int = 201
    store_stride: int | None = None  # None: auto, ~<= 400 stored levels


def default_grid_spec(p: ModelParams) -> GridSpec:
    """u-domain of +-4 stationary standard deviations of the fad."""
    return GridSpec(u_max=4.0 * math.sqrt(1.0 / (2.0 * p.eta)))


@dataclass(frozen=True)
class ValueGrid:
    """Stored value-function levels; values[it, iq, iu] with ascending axes."""

    t_nodes: np.ndarray
    u_nodes: np.ndarray
    q_levels: np.ndarray
    values: np.ndarray
    ask_floor_active: np.ndarray
    bid_floor_active: np.ndarray
    kind: str

    def __post_init__(self):
        for name in ("t_nodes", "u_nodes", "q_levels", "values",
                     "ask_floor_active", "bid_floor_active"):
            arr = getattr(self, name)
            arr.flags.writeable = False


def _lambda_profiles(p: ModelParams, u: np.ndarray):
    lam_a = p.phi_uninformed + p.psi_informed * np.exp(
        -p.gamma * np.maximum(p.sigma * p.q_weight * u, p.cap_lo))
    lam_b = p.phi_uninformed + p.psi_informed * np.exp(
        p.gamma * np.minimum(p.sigma * p.q_weight * u, p.cap_hi))
    return lam_a, lam_b


def _hamiltonian(d: np.ndarray, lam: np.ndarray, k: float, floor: float):
    """sup_delta lam e^{-k delta} (delta + d) with delta >= floor.

    Unconstrained maximizer 1/k - d; when it falls below the floor the
    supremum is attained at the floor itself.
    """
    with np.errstate(over="ignore"):  # divergence is caught by the blow-up check
        interior = lam * (E_INV / k) * np.exp(k * d)
    if floor == -math.inf:
        return interior, np.zeros(d.shape, dtype=bool)
    at_floor = (1.0 / k - d) < floor
    clamped = lam * np.exp(-k * floor) * (floor + d)
    return np.where(at_floor, clamped, interior), at_floor


def _banded_operator(u: np.ndarray, diff_coef: float, eta: float, dt: float):
    """ab-form of I - dt*L with L = -eta*u*d_u + diff_coef*d_uu (upwind drift,
    vanishing second derivative at the u-boundaries)."""
    nu = len(u)
    h = u[1] - u[0]
    drift = -eta * u
    ap = np.maximum(drift, 0.0)
    am = np.minimum(drift, 0.0)
    diag = np.full(nu, diff_coef * 2.0 / h**2) + (ap - am) / h
    upper = np.full(nu, -diff_coef / h**2) - ap / h
    lower = np.full(nu, -diff_coef / h**2) + am / h
    # boundary rows: drop diffusion, keep the (inward-pointing) drift
    diag[0] = ap[0] / h
    upper[0] = -ap[0] / h
    diag[-1] = -am[-1] / h
    lower[-1] = am[-1] / h
    ab = np.zeros((3, nu))
    ab[0, 1:] = dt * upper[:-1]
    ab[1, :] = 1.0 + dt * diag
    ab[2, :-1] = dt * lower[1:]
    return ab


def solve_hjb_fd(p: ModelParams, kind: str = "FI",
                 grid_spec: GridSpec | None = None,
                 variance: VarianceCurve | None = None) -> ValueGrid:
    """Backward IMEX sweep of the quoting HJB.

    Per step: diffusion and upwinded drift are treated implicitly (one
    tridiagonal solve in u shared across all inventory levels), and the
    exponential Hamiltonian terms use the previous time level's value
    differences V(q -+ 1) - V(q), with the corresponding term dropped at the
    inventory bounds.  Terminal data V(T,q,u) = -term_penalty * q^2 is exact.
    """
    if kind not in ("FI", "PI"):
        raise ConfigError(f"solve_hjb_fd: unknown kind {kind!r}")
    spec = grid_spec if grid_spec is not None else default_grid_spec(p)
    if spec.n_t < 1 or spec.n_u < 3:
        raise ConfigError("solve_hjb_fd: need n_t >= 1 and n_u >= 3")
    if kind == "PI" and variance is None:
        variance = solve_variance_curve(p)

    n_t, n_u = spec.n_t, spec.n_u
    dt = p.horizon / n_t
    u = np.linspace(-spec.u_max, spec.u_max, n_u)
    q_levels = np.arange(p.q_min, p.q_max + 1)
    q = q_levels.astype(float)[:, None]
    stride = spec.store_stride or max(1, n_t // 400)
    stored_js = sorted(set(range(0, n_t + 1, stride)) | {0, n_t})

    lam_a, lam_b = _lambda_profiles(p, u)
    k = p.k_decay
    run_source = -p.run_penalty * q**2 + (p.mu - p.eta * p.sigma * p.q_weight * u) * q

    if kind == "FI":
        ab_const = _banded_operator(u, 0.5, p.eta, dt)

        def operator(_t):
            return ab_const
    else:
        def operator(t):
            x2 = p.q_weight - float(variance.at(t)) * p.q_weight * p.eta
            return _banded_operator(u, 0.5 * x2 * x2, p.eta, dt)

    v = -p.term_penalty * q**2 * np.ones((1, n_u))  # (nq, nu) at t = T
    v = np.broadcast_to(v, (len(q_levels), n_u)).copy()

    n_stored = len(stored_js)
    values = np.empty((n_stored, len(q_levels), n_u))
    ask_floor = np.zeros((n_stored, len(q_levels), n_u), dtype=bool)
    bid_floor = np.zeros((n_stored, len(q_levels), n_u), dtype=bool)
    store_pos = {j: i for i, j in enumerate(stored_js)}
    values[-1] = v

    for j in range(n_t - 1, -1, -1):
        d_minus = np.zeros_like(v)
        d_plus = np.zeros_like(v)
        d_minus[1:] = v[:-1] - v[1:]    # V(q-1) - V(q), undefined at q_min
        d_plus[:-1] = v[1:] - v[:-1]    # V(q+1) - V(q), undefined at q_max
        ham_a, afloor = _hamiltonian(d_minus, lam_a, k, p.delta_floor_ask)
        ham_b, bfloor = _hamiltonian(d_plus, lam_b, k, p.delta_floor_bid)
        ham_a[0] = 0.0   # no ask quote at the lower inventory bound
        ham_b[-1] = 0.0
        rhs = v + dt * (run_source + ham_a + ham_b)
        rmax = float(np.max(np.abs(rhs)))
        if not math.isfinite(rmax) or rmax > BLOWUP_LIMIT:
            raise NumericError(
                f"solve_hjb_fd: blow-up at t={j * dt:.6g} (|V| ~ {rmax:.3g}); "
                "increase n_t")
        v = solve_banded((1, 1), operator(j * dt), rhs.T).T
        if j in store_pos:
            i = store_pos[j]
            values[i] = v
            afloor[0] = False
            bfloor[-1] = False
            ask_floor[i] = afloor
            bid_floor[i] = bfloor

    t_nodes = np.array([j * dt for j in stored_js])
    return ValueGrid(t_nodes=t_nodes, u_nodes=u, q_levels=q_levels,
                     values=values, ask_floor_active=ask_floor,
                     bid_floor_active=bid_floor, kind=kind)


def _interp_tu(grid: ValueGrid, iq: int, t: float, u: float) -> float:
    """Bilinear interpolation of the stored V[., iq, .] at (t, u)."""
    tn, un = grid.t_nodes, grid.u_nodes
    it = np.searchsorted(tn, t)
    it = min(max(it, 1), len(tn) - 1)
    wt = (t - tn[it - 1]) / (tn[it] - tn[it - 1])
    wt = min(max(wt, 0.0), 1.0)
    row = (1.0 - wt) * grid.values[it - 1, iq, :] + wt * grid.values[it, iq, :]
    return float(np.interp(u, un, row))


def fd_quotes(grid: ValueGrid, p: ModelParams, t: float, q: int, u: float) -> Quote:
    """Feedback displacements from finite differences of the stored grid."""
    if not (grid.t_nodes[0] - 1e-12 <= t <= grid.t_nodes[-1] + 1e-12):
        raise ConfigError(f"fd_quotes: t={t} outside the stored time range")
    if not (grid.u_nodes[0] - 1e-12 <= u <= grid.u_nodes[-1] + 1e-12):
        raise ConfigError(f"fd_quotes: u={u} outside the grid")
    if not (p.q_min <= q <= p.q_max):
        raise ConfigError(f"fd_quotes: inventory {q} outside bounds")
    iq = int(q - p.q_min)
    inv_k = 1.0 / p.k_decay
    v_here = _interp_tu(grid, iq, t, u)
    ask_active = q > p.q_min
    bid_active = q < p.q_max
    if ask_active:
        d_minus = _interp_tu(grid, iq - 1, t, u) - v_here
        delta_a = max(inv_k - d_minus, p.delta_floor_ask)
    else:
        delta_a = math.inf
    if bid_active:
        d_plus = _interp_tu(grid, iq + 1, t, u) - v_here
        delta_b = max(inv_k - d_plus, p.delta_floor_bid)
    else:
        delta_b = math.inf
    return Quote(delta_a=delta_a, delta_b=delta_b,
                 ask_active=ask_active, bid_active=bid_active)


def quote_comparison_rows(grid: ValueGrid, coeffs, p: ModelParams,
                          ts, qs, us):
    """Rows (t, q, u, v, delta_a_fd, delta_a_cf, delta_b_fd, delta_b_cf)
    comparing FD feedback displacements with the closed-form quotes.

    Inventory levels whose side is inactive contribute only the active side;
    inactive entries are nan.
    """
    from .solvers import quote as cf_quote

    rows = []
    for t in ts:
        for q in qs:
            for u in us:
                fd = fd_quotes(grid, p, t, int(q), u)
                cf = cf_quote(coeffs, p, t, int(q), u)
                iq = int(q - p.q_min)
                rows.append((
                    float(t), int(q), float(u), _interp_tu(grid, iq, t, u),
                    fd.delta_a if fd.ask_active else math.nan,
                    cf.delta_a if fd.ask_active else math.nan,
                    fd.delta_b if fd.bid_active else math.nan,
                    cf.delta_b if fd.bid_active else math.nan,
                ))
    return rows


def quote_gap(grid: ValueGrid, coeffs, p: ModelParams, ts, qs, us) -> float:
    """Sup-norm displacement gap between FD and closed form over the box."""
    gap = 0.0
    for row in quote_comparison_rows(grid, coeffs, p, ts, qs, us):
        _, _, _, _, a_fd, a_cf, b_fd, b_cf = row
        if not math.isnan(a_fd):
            gap = max(gap, abs(a_fd - a_cf))
        if not math.isnan(b_fd):
            gap = max(gap, abs(b_fd - b_cf))
    return gap
