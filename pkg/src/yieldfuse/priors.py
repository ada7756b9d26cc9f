"""Prior densities for the eleven unknowns and the constrained/unconstrained
parameter bijection.

The sampled vector holds the yield, seven modality hyperparameters and the
four trust weights on the open simplex (three free coordinates through a
stick-breaking map). Bounded scalars use a scaled logit, positive scalars a
log (optionally shifted), and every inverse carries the log-Jacobian needed
to evaluate densities in the unconstrained space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.special import gammaln, ndtr, ndtri

LN10 = math.log(10.0)
_HALF_LN_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# scalar distributions (log density + derivative + inverse-CDF sampling)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncatedNormal:
    mu: float
    sigma: float
    lower: float = -math.inf
    upper: float = math.inf

    def _mass(self) -> float:
        return float(ndtr((self.upper - self.mu) / self.sigma)
                     - ndtr((self.lower - self.mu) / self.sigma))

    def logpdf(self, x: float) -> float:
        if x < self.lower or x > self.upper:
            return -math.inf
        z = (x - self.mu) / self.sigma
        return (-0.5 * z * z - math.log(self.sigma) - _HALF_LN_2PI
                - math.log(self._mass()))

    def dlogpdf(self, x: float) -> float:
        return -(x - self.mu) / (self.sigma * self.sigma)

    def sample(self, rng: np.random.Generator, n: int | None = None):
        lo = float(ndtr((self.lower - self.mu) / self.sigma))
        hi = float(ndtr((self.upper - self.mu) / self.sigma))
        u = rng.random(n)
        return self.mu + self.sigma * ndtri(lo + (hi - lo) * u)

    def mean(self) -> float:
        a = (self.lower - self.mu) / self.sigma
        b = (self.upper - self.mu) / self.sigma
        return self.mu + self.sigma * (_phi(a) - _phi(b)) / self._mass()

    def sd(self) -> float:
        a = (self.lower - self.mu) / self.sigma
        b = (self.upper - self.mu) / self.sigma
        z = self._mass()
        ta = a * _phi(a) if math.isfinite(a) else 0.0
        tb = b * _phi(b) if math.isfinite(b) else 0.0
        var = 1.0 + (ta - tb) / z - ((_phi(a) - _phi(b)) / z) ** 2
        return self.sigma * math.sqrt(var)


def _phi(z: float) -> float:
    if not math.isfinite(z):
        return 0.0
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LogNormalDist:
    mu_log: float
    sigma_log: float

    def logpdf(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        z = (math.log(x) - self.mu_log) / self.sigma_log
        return -math.log(x) - math.log(self.sigma_log) - _HALF_LN_2PI - 0.5 * z * z

    def dlogpdf(self, x: float) -> float:
        return -1.0 / x - (math.log(x) - self.mu_log) / (self.sigma_log ** 2 * x)

    def sample(self, rng: np.random.Generator, n: int | None = None):
        return np.exp(self.mu_log + self.sigma_log * ndtri(rng.random(n)))

    def mean(self) -> float:
        return math.exp(self.mu_log + 0.5 * self.sigma_log ** 2)

    def sd(self) -> float:
        return self.mean() * math.sqrt(math.expm1(self.sigma_log ** 2))


@dataclass(frozen=True)
class HalfNormalDist:
    scale: float

    def logpdf(self, x: float) -> float:
        if x < 0:
            return -math.inf
        return (0.5 * math.log(2.0 / math.pi) - math.log(self.scale)
                - 0.5 * (x / self.scale) ** 2)

    def dlogpdf(self, x: float) -> float:
        return -x / (self.scale * self.scale)

    def sample(self, rng: np.random.Generator, n: int | None = None):
        return self.scale * ndtri(0.5 * (1.0 + rng.random(n)))

    def mean(self) -> float:
        return self.scale * math.sqrt(2.0 / math.pi)

    def sd(self) -> float:
        return self.scale * math.sqrt(1.0 - 2.0 / math.pi)


@dataclass(frozen=True)
class ShiftedExponential:
    """x = shift + Exponential(mean_excess); used for the t dof nu > 2."""

    shift: float
    mean_excess: float

    def logpdf(self, x: float) -> float:
        if x <= self.shift:
            return -math.inf
        return -math.log(self.mean_excess) - (x - self.shift) / self.mean_excess

    def dlogpdf(self, x: float) -> float:
        return -1.0 / self.mean_excess

    def sample(self, rng: np.random.Generator, n: int | None = None):
        return self.shift - self.mean_excess * np.log1p(-rng.random(n))

    def mean(self) -> float:
        return self.shift + self.mean_excess

    def sd(self) -> float:
        return self.mean_excess


# ---------------------------------------------------------------------------
# prior configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorConfig:
    """All prior constants, overridable from a JSON config keyed by the
    parameter names (see from_json)."""

    yield_log10_mu: float = 0.0
    yield_log10_sigma: float = 1.0
    yield_max_kt: float = 2.75
    sigma_m: TruncatedNormal = TruncatedNormal(0.13, 0.01, 0.05, 0.30)
    sigma_c: TruncatedNormal = TruncatedNormal(0.08, 0.02, 0.02, 0.15)
    p50_kpa: LogNormalDist = LogNormalDist(math.log(60.0), 0.8)
    k_slope: HalfNormalDist = HalfNormalDist(3.0)
    sigma_sar: TruncatedNormal = TruncatedNormal(20.0, 10.0, 5.0, 60.0)
    nu: ShiftedExponential = ShiftedExponential(2.0, 5.0)
    sigma_dex: TruncatedNormal = TruncatedNormal(0.15, 0.05, 0.05, 0.60)
    dirichlet_alpha: float = 1.0

    @property
    def yield_log10_upper(self) -> float:
        return math.log10(self.yield_max_kt)

    def yield_log10_dist(self) -> TruncatedNormal:
        return TruncatedNormal(self.yield_log10_mu, self.yield_log10_sigma,
                               upper=self.yield_log10_upper)

    def with_alpha(self, alpha: float) -> "PriorConfig":
        if alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        return replace(self, dirichlet_alpha=float(alpha))

    @classmethod
    def from_dict(cls, overrides: dict[str, Any]) -> "PriorConfig":
        base = cls()
        kw: dict[str, Any] = {}
        for key, val in overrides.items():
            if key == "yield_kt":
                kw["yield_log10_mu"] = float(val.get("mu", base.yield_log10_mu))
                kw["yield_log10_sigma"] = float(val.get("sigma", base.yield_log10_sigma))
                kw["yield_max_kt"] = float(val.get("max_kt", base.yield_max_kt))
            elif key in ("sigma_m", "sigma_c", "sigma_sar", "sigma_dex"):
                cur: TruncatedNormal = getattr(base, key)
                kw[key] = TruncatedNormal(
                    float(val.get("mu", cur.mu)), float(val.get("sigma", cur.sigma)),
                    float(val.get("lower", cur.lower)), float(val.get("upper", cur.upper)))
            elif key == "p50_kpa":
                kw[key] = LogNormalDist(float(val.get("mu_log", base.p50_kpa.mu_log)),
                                        float(val.get("sigma_log", base.p50_kpa.sigma_log)))
            elif key == "k_slope":
                kw[key] = HalfNormalDist(float(val.get("scale", base.k_slope.scale)))
            elif key == "nu":
                kw[key] = ShiftedExponential(float(val.get("shift", base.nu.shift)),
                                             float(val.get("mean_excess", base.nu.mean_excess)))
            elif key == "gamma":
                kw["dirichlet_alpha"] = float(val.get("alpha", base.dirichlet_alpha))
            else:
                raise ValueError(f"unknown prior config key: {key}")
        return replace(base, **kw)

    @classmethod
    def from_json(cls, path: str) -> "PriorConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


DEFAULT_PRIORS = PriorConfig()

HYPER_FIELDS = {
    "seismic": ("sigma_m",),
    "crater": ("sigma_c",),
    "sar": ("p50_kpa", "k_slope", "sigma_sar", "nu"),
    "vlm": ("sigma_dex",),
}


# ---------------------------------------------------------------------------
# parameter vector and joint prior density
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ParamVector:
    """The eleven unknowns of the full four-modality inverse problem."""

    yield_kt: float
    sigma_m: float
    sigma_c: float
    p50_kpa: float
    k_slope: float
    sigma_sar: float
    nu: float
    sigma_dex: float
    gamma: np.ndarray  # (seismic, crater, sar, vlm) on the open simplex

    def __post_init__(self) -> None:
        g = np.asarray(self.gamma, dtype=float)
        if g.shape != (4,):
            raise ValueError("gamma must have 4 components")
        object.__setattr__(self, "gamma", g)


def dirichlet_logpdf(gamma: np.ndarray, alpha: float) -> float:
    """Symmetric Dirichlet density on the (m-1)-simplex coordinates."""
    g = np.asarray(gamma, dtype=float)
    m = g.size
    if np.any(g <= 0) or abs(float(g.sum()) - 1.0) > 1e-9:
        return -math.inf
    const = float(gammaln(m * alpha) - m * gammaln(alpha))
    if alpha == 1.0:
        return const
    return const + (alpha - 1.0) * float(np.log(g).sum())


def yield_log_prior(yield_kt: float, config: PriorConfig) -> float:
    """Log density over the yield itself for a truncated normal prior on
    log10(yield); includes the change-of-variables term."""
    if yield_kt <= 0:
        return -math.inf
    t = math.log10(yield_kt)
    lp = config.yield_log10_dist().logpdf(t)
    if lp == -math.inf:
        return -math.inf
    return lp - math.log(yield_kt * LN10)


def log_prior(p: ParamVector, config: PriorConfig = DEFAULT_PRIORS) -> float:
    """Joint log prior over the full constrained vector, -inf off support."""
    total = yield_log_prior(p.yield_kt, config)
    total += config.sigma_m.logpdf(p.sigma_m)
    total += config.sigma_c.logpdf(p.sigma_c)
    total += config.p50_kpa.logpdf(p.p50_kpa)
    total += config.k_slope.logpdf(p.k_slope)
    total += config.sigma_sar.logpdf(p.sigma_sar)
    total += config.nu.logpdf(p.nu)
    total += config.sigma_dex.logpdf(p.sigma_dex)
    total += dirichlet_logpdf(p.gamma, config.dirichlet_alpha)
    return total


def sample_param_vector(rng: np.random.Generator,
                        config: PriorConfig = DEFAULT_PRIORS) -> ParamVector:
    t = float(config.yield_log10_dist().sample(rng))
    return ParamVector(
        yield_kt=10.0 ** t,
        sigma_m=float(config.sigma_m.sample(rng)),
        sigma_c=float(config.sigma_c.sample(rng)),
        p50_kpa=float(config.p50_kpa.sample(rng)),
        k_slope=float(config.k_slope.sample(rng)),
        sigma_sar=float(config.sigma_sar.sample(rng)),
        nu=float(config.nu.sample(rng)),
        sigma_dex=float(config.sigma_dex.sample(rng)),
        gamma=rng.dirichlet(np.full(4, config.dirichlet_alpha)),
    )


# ---------------------------------------------------------------------------
# scalar transforms
# ---------------------------------------------------------------------------

def _sigmoid(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


def interval_to_real(x: float, lo: float, hi: float) -> float:
    if not (lo < x < hi):
        raise ValueError(f"value {x} outside open interval ({lo}, {hi})")
    return math.log(x - lo) - math.log(hi - x)


def real_to_interval(u: float, lo: float, hi: float) -> tuple[float, float, float, float]:
    """Returns (x, dx/du, logJ, dlogJ/du) for the scaled-logit transform."""
    s = _sigmoid(u)
    x = lo + (hi - lo) * s
    dx = (hi - lo) * s * (1.0 - s)
    if dx <= 0.0:
        return x, 0.0, -math.inf, 0.0
    return x, dx, math.log(dx), 1.0 - 2.0 * s


def positive_to_real(x: float, shift: float = 0.0) -> float:
    if x <= shift:
        raise ValueError(f"value {x} not above lower bound {shift}")
    return math.log(x - shift)


def real_to_positive(u: float, shift: float = 0.0) -> tuple[float, float, float, float]:
    """Returns (x, dx/du, logJ, dlogJ/du) for the shifted-log transform."""
    e = math.exp(u)
    return shift + e, e, u, 1.0


# ---------------------------------------------------------------------------
# stick-breaking simplex transform
# ---------------------------------------------------------------------------

def simplex_to_stick(gamma: np.ndarray) -> np.ndarray:
    g = np.asarray(gamma, dtype=float)
    m = g.size
    v = np.empty(m - 1)
    stick = 1.0
    for k in range(m - 1):
        z = g[k] / stick
        if not (0.0 < z < 1.0):
            raise ValueError("gamma is not interior to the simplex")
        v[k] = math.log(z) - math.log1p(-z)
        stick -= g[k]
    return v


def stick_to_simplex(v: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse stick-breaking: returns (gamma, log|det J|)."""
    gamma, z, sticks, logj = stick_expand(np.asarray(v, dtype=float))
    return gamma, logj


def stick_expand(v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Inverse stick-breaking with intermediates needed for gradients.

    Returns (gamma, z, sticks, logJ) where z[k] = sigmoid(v[k]) and
    sticks[k] is the mass remaining before break k.
    """
    m = v.size + 1
    gamma = np.empty(m)
    z = np.empty(m - 1)
    sticks = np.empty(m - 1)
    stick = 1.0
    logj = 0.0
    for k in range(m - 1):
        zk = _sigmoid(float(v[k]))
        z[k] = zk
        sticks[k] = stick
        gamma[k] = zk * stick
        d = zk * (1.0 - zk) * stick
        logj += math.log(d) if d > 0 else -math.inf
        stick -= gamma[k]
    gamma[m - 1] = stick
    return gamma, z, sticks, logj


# ---------------------------------------------------------------------------
# full-vector bijection (four-modality layout)
# ---------------------------------------------------------------------------

PARAM_ORDER = ("yield_kt", "sigma_m", "sigma_c", "p50_kpa", "k_slope",
               "sigma_sar", "nu", "sigma_dex")


def to_unconstrained(p: ParamVector,
                     config: PriorConfig = DEFAULT_PRIORS) -> np.ndarray:
    """Map the full constrained vector to the 11 unconstrained coordinates."""
    for x in (p.yield_kt, p.sigma_m, p.sigma_c, p.p50_kpa, p.k_slope,
              p.sigma_sar, p.nu, p.sigma_dex):
        if not math.isfinite(x):
            raise ValueError("non-finite parameter value")
    u = np.empty(11)
    u[0] = interval_to_real(p.yield_kt, 0.0, config.yield_max_kt)
    u[1] = interval_to_real(p.sigma_m, config.sigma_m.lower, config.sigma_m.upper)
    u[2] = interval_to_real(p.sigma_c, config.sigma_c.lower, config.sigma_c.upper)
    u[3] = positive_to_real(p.p50_kpa)
    u[4] = positive_to_real(p.k_slope)
    u[5] = interval_to_real(p.sigma_sar, config.sigma_sar.lower, config.sigma_sar.upper)
    u[6] = positive_to_real(p.nu, shift=config.nu.shift)
    u[7] = interval_to_real(p.sigma_dex, config.sigma_dex.lower, config.sigma_dex.upper)
    u[8:11] = simplex_to_stick(p.gamma)
    return u


def from_unconstrained(u: np.ndarray,
                       config: PriorConfig = DEFAULT_PRIORS
                       ) -> tuple[ParamVector, float]:
    """Inverse of to_unconstrained; also returns log|det J| so that
    density(u) = density(p) + logJ."""
    u = np.asarray(u, dtype=float)
    if u.shape != (11,) or not np.all(np.isfinite(u)):
        raise ValueError("expected 11 finite unconstrained coordinates")
    logj = 0.0
    y, _, lj, _ = real_to_interval(u[0], 0.0, config.yield_max_kt)
    logj += lj
    sm, _, lj, _ = real_to_interval(u[1], config.sigma_m.lower, config.sigma_m.upper)
    logj += lj
    sc, _, lj, _ = real_to_interval(u[2], config.sigma_c.lower, config.sigma_c.upper)
    logj += lj
    p50, _, lj, _ = real_to_positive(u[3])
    logj += lj
    k, _, lj, _ = real_to_positive(u[4])
    logj += lj
    ssar, _, lj, _ = real_to_interval(u[5], config.sigma_sar.lower, config.sigma_sar.upper)
    logj += lj
    nu, _, lj, _ = real_to_positive(u[6], shift=config.nu.shift)
    logj += lj
    sdex, _, lj, _ = real_to_interval(u[7], config.sigma_dex.lower, config.sigma_dex.upper)
    logj += lj
    gamma, lj = stick_to_simplex(u[8:11])
    logj += lj
    p = ParamVector(yield_kt=y, sigma_m=sm, sigma_c=sc, p50_kpa=p50, k_slope=k,
                    sigma_sar=ssar, nu=nu, sigma_dex=sdex, gamma=gamma)
    return p, logj
