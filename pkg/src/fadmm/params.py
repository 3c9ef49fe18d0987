"""Core parameter, state, and quote types plus flat-config serialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    """Invalid parameters, config files, or experiment specs (CLI exit code 2)."""


class NumericError(RuntimeError):
    """Numerical failure: blow-up, degeneracy, or lost precision (CLI exit code 3)."""


@dataclass(frozen=True)
class ModelParams:
    """All market and model constants.

    Attributes
    ----------
    mu : price drift per unit time.
    sigma : price volatility (> 0).
    q_weight, p_weight : fad and martingale loadings of the price noise;
        must satisfy p_weight**2 + q_weight**2 == 1.
    eta : mean-reversion speed of the fad (> 0).
    k_decay : exponential decay of fill intensity in the displacement (> 0).
    gamma : sensitivity of informed-trader arrivals to the fad (>= 0).
    phi_uninformed : baseline arrival intensity of uninformed traders (>= 0).
    psi_informed : baseline arrival intensity of informed traders (>= 0).
    run_penalty : running inventory penalty in the performance criterion (>= 0).
    term_penalty : terminal inventory penalty (>= 0).
    horizon : trading horizon T (> 0).
    cap_lo, cap_hi : caps on the fad term inside the informed intensity
        (cap_lo <= 0 <= cap_hi; default unbounded).
    q_min, q_max : inventory bounds (integers, q_min < 0 < q_max).
    delta_floor_ask, delta_floor_bid : lower bounds on the displacements
        (may be -inf).
    s0, q0, x0 : initial mid-price, inventory, cash.
    """

    mu: float = 0.0
    sigma: float = 1.0
    q_weight: float = 0.6
    p_weight: float = 0.8
    eta: float = 10.0
    k_decay: float = 1.0
    gamma: float = 1.0
    phi_uninformed: float = 15.0
    psi_informed: float = 15.0
    run_penalty: float = 0.1
    term_penalty: float = 0.001
    horizon: float = 1.0
    cap_lo: float = -math.inf
    cap_hi: float = math.inf
    q_min: int = -20
    q_max: int = 20
    delta_floor_ask: float = -math.inf
    delta_floor_bid: float = -math.inf
    s0: float = 100.0
    q0: int = 0
    x0: float = 0.0

    def __post_init__(self):
        if abs(self.p_weight**2 + self.q_weight**2 - 1.0) > 1e-12:
            raise ConfigError(
                f"p_weight^2 + q_weight^2 must equal 1, got "
                f"{self.p_weight**2 + self.q_weight**2!r}"
            )
        if not (0.0 <= self.q_weight <= 1.0 and 0.0 <= self.p_weight <= 1.0):
            raise ConfigError("q_weight and p_weight must lie in [0, 1]")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.k_decay <= 0:
            raise ConfigError("k_decay must be positive")
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.gamma < 0 or self.phi_uninformed < 0 or self.psi_informed < 0:
            raise ConfigError("gamma, phi_uninformed, psi_informed must be >= 0")
        if self.run_penalty < 0 or self.term_penalty < 0:
            raise ConfigError("run_penalty and term_penalty must be >= 0")
        if not (self.cap_lo <= 0.0 <= self.cap_hi):
            raise ConfigError("caps must satisfy cap_lo <= 0 <= cap_hi")
        if not (self.q_min < 0 < self.q_max):
            raise ConfigError("inventory bounds must satisfy q_min < 0 < q_max")
        if not (self.q_min <= self.q0 <= self.q_max):
            raise ConfigError("q0 must lie within [q_min, q_max]")

    def with_(self, **kwargs) -> "ModelParams":
        """Copy with replaced fields (re-validates)."""
        return replace(self, **kwargs)

    def with_q_weight(self, q_weight: float) -> "ModelParams":
        """Copy with a new fad loading, keeping p_weight consistent."""
        return self.with_(q_weight=q_weight, p_weight=math.sqrt(max(0.0, 1.0 - q_weight**2)))


@dataclass(frozen=True)
class MarketState:
    """Instantaneous system state (t, S_t, U_t, Q_t, X_t)."""

    t: float
    s: float
    u: float
    q: int
    x: float


@dataclass(frozen=True)
class Quote:
    """Posted displacements and side-activity flags."""

    delta_a: float
    delta_b: float
    ask_active: bool
    bid_active: bool

    @property
    def spread(self) -> float:
        return self.delta_a + self.delta_b


_INT_FIELDS = {"q_min", "q_max", "q0"}


def _format_value(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def params_to_config(p: ModelParams) -> str:
    """Serialize to the flat key = value config format."""
    lines = [f"{f.name} = {_format_value(getattr(p, f.name))}" for f in fields(ModelParams)]
    return "\n".join(lines) + "\n"


def parse_flat_config(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def params_from_dict(d: dict[str, str], base: ModelParams | None = None) -> ModelParams:
    """Build ModelParams from flat string values. Unknown keys are an error."""
    known = {f.name for f in fields(ModelParams)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown ModelParams keys: {', '.join(unknown)}")
    kwargs = {}
    for key, value in d.items():
        try:
            kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    if base is not None:
        return base.with_(**kwargs)
    return ModelParams(**kwargs)


def params_from_config(text: str) -> ModelParams:
    return params_from_dict(parse_flat_config(text))


def load_params(path) -> ModelParams:
    with open(path, "r", encoding="utf-8") as fh:
        return params_from_config(fh.read())


def save_params(p: ModelParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(params_to_config(p))
