"""Joint log-density assembly for the sampleable fusion methods.

Each method tempers the modality log-likelihoods differently:

* dirichlet_gamma: simplex trust weights with a symmetric Dirichlet prior
  (the headline model; three stick-breaking coordinates for four modalities)
* single_temperature: one shared exponent with a Beta(4, 2) prior
* fixed_gamma: constant weights supplied by the caller
* plain_product: every exponent pinned to one (untempered baseline)

BMA and covariance intersection are post-hoc fusers over single-modality
fits and are rejected here; see yieldfuse.validation.

Absent modalities are dropped from the sampled vector entirely, so the
dimension is 8/9/11 for the full dataset depending on the method. All
gradients are exact (hand-derived chain rule through the transforms); the
finite-difference contract in gradient_check guards them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import likelihoods as lk
from .data import Dataset, MODALITIES
from .priors import (DEFAULT_PRIORS, LN10, PriorConfig, interval_to_real,
                     positive_to_real, real_to_interval, real_to_positive,
                     simplex_to_stick, stick_expand, stick_to_simplex,
                     dirichlet_logpdf)

_HALF_LN_2PI = 0.5 * math.log(2.0 * math.pi)
_LN_BETA_4_2 = -math.log(20.0)  # log B(4, 2)


class UnsupportedMethodError(ValueError):
    """Method cannot be expressed as a joint density."""


PLAIN_PRODUCT = "plain_product"
SINGLE_TEMPERATURE = "single_temperature"
FIXED_GAMMA = "fixed_gamma"
DIRICHLET_GAMMA = "dirichlet_gamma"
BMA = "bma"
COVARIANCE_INTERSECTION = "covariance_intersection"

_CLI_NAMES = {
    "plain": PLAIN_PRODUCT,
    "single": SINGLE_TEMPERATURE,
    "fixed": FIXED_GAMMA,
    "dirichlet": DIRICHLET_GAMMA,
    "bma": BMA,
    "ci": COVARIANCE_INTERSECTION,
}


@dataclass(frozen=True)
class FusionMethod:
    kind: str
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in (PLAIN_PRODUCT, SINGLE_TEMPERATURE, FIXED_GAMMA,
                             DIRICHLET_GAMMA, BMA, COVARIANCE_INTERSECTION):
            raise ValueError(f"unknown fusion method: {self.kind}")
        if self.kind == FIXED_GAMMA:
            if self.weights is None:
                raise ValueError("fixed_gamma requires weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
                raise ValueError("fixed_gamma weights must be nonnegative and sum to 1")

    @classmethod
    def plain_product(cls) -> "FusionMethod":
        return cls(PLAIN_PRODUCT)

    @classmethod
    def single_temperature(cls) -> "FusionMethod":
        return cls(SINGLE_TEMPERATURE)

    @classmethod
    def fixed_gamma(cls, weights) -> "FusionMethod":
        return cls(FIXED_GAMMA, tuple(float(w) for w in weights))

    @classmethod
    def dirichlet_gamma(cls) -> "FusionMethod":
        return cls(DIRICHLET_GAMMA)

    @classmethod
    def bma(cls) -> "FusionMethod":
        return cls(BMA)

    @classmethod
    def covariance_intersection(cls) -> "FusionMethod":
        return cls(COVARIANCE_INTERSECTION)

    @classmethod
    def from_name(cls, name: str, weights=None) -> "FusionMethod":
        kind = _CLI_NAMES.get(name, name)
        if kind == FIXED_GAMMA:
            return cls.fixed_gamma(weights) if weights is not None else cls(FIXED_GAMMA, None)
        return cls(kind)

    @property
    def short_name(self) -> str:
        for short, kind in _CLI_NAMES.items():
            if kind == self.kind:
                return short
        return self.kind


# scalar coordinate spec: (name, transform kind, arg0, arg1, prior kind, p0, p1, pconst)
# transform kinds: "i" interval(arg0, arg1), "l" shifted log(arg0)
# prior kinds:     "tn", "ln", "hn", "se"


class JointDensity:
    """Callable joint log-density over the unconstrained sampling space.

    Immutable after construction; evaluations are pure, so one instance can
    be shared across chain workers.
    """

    def __init__(self, dataset: Dataset, method: FusionMethod,
                 priors: PriorConfig = DEFAULT_PRIORS):
        if method.kind in (BMA, COVARIANCE_INTERSECTION):
            raise UnsupportedMethodError(
                f"{method.kind} is a post-hoc fuser over single-modality fits; "
                "use validation.bma_fuse / validation.ci_fuse")
        if method.kind == FIXED_GAMMA and method.weights is None:
            raise ValueError("fixed_gamma requires weights")
        self.dataset = dataset
        self.method = method
        self.priors = priors
        self.modalities = dataset.modalities
        m = len(self.modalities)

        specs: list[tuple] = []
        self._ix: dict[str, int] = {}

        def add(name, tkind, a0, a1, pkind, p0, p1, pconst):
            self._ix[name] = len(specs)
            specs.append((name, tkind, a0, a1, pkind, p0, p1, pconst))

        def add_tn(name, dist):
            const = (-math.log(dist.sigma) - _HALF_LN_2PI - math.log(dist._mass()))
            add(name, "i", dist.lower, dist.upper, "tn", dist.mu, dist.sigma, const)

        ydist = priors.yield_log10_dist()
        self._yield_mu = ydist.mu
        self._yield_sigma = ydist.sigma
        self._yield_const = (-math.log(ydist.sigma) - _HALF_LN_2PI
                             - math.log(ydist._mass()))
        add("yield_kt", "i", 0.0, priors.yield_max_kt, "yield", 0.0, 0.0, 0.0)

        if dataset.has("seismic"):
            add_tn("sigma_m", priors.sigma_m)
        if dataset.has("crater"):
            add_tn("sigma_c", priors.sigma_c)
        if dataset.has("sar"):
            d = priors.p50_kpa
            add("p50_kpa", "l", 0.0, 0.0, "ln", d.mu_log, d.sigma_log,
                -math.log(d.sigma_log) - _HALF_LN_2PI)
            h = priors.k_slope
            add("k_slope", "l", 0.0, 0.0, "hn", h.scale, 0.0,
                0.5 * math.log(2.0 / math.pi) - math.log(h.scale))
            add_tn("sigma_sar", priors.sigma_sar)
            e = priors.nu
            add("nu", "l", e.shift, 0.0, "se", e.shift, e.mean_excess,
                -math.log(e.mean_excess))
        if dataset.has("vlm"):
            add_tn("sigma_dex", priors.sigma_dex)

        self._specs = tuple(specs)
        self._n_scalar = len(specs)

        self._n_sticks = 0
        self._has_beta = False
        if method.kind == DIRICHLET_GAMMA:
            self._n_sticks = max(m - 1, 0)
        elif method.kind == SINGLE_TEMPERATURE:
            self._has_beta = True
        elif method.kind == FIXED_GAMMA:
            w = np.asarray(method.weights, dtype=float)
            if w.size != m:
                raise ValueError(
                    f"fixed_gamma weights must match the {m} present modalities")
            self._fixed_w = w
        self.dim = self._n_scalar + self._n_sticks + (1 if self._has_beta else 0)

        names = [s[0] for s in specs]
        if self._n_sticks:
            names += [f"gamma_{mod}" for mod in self.modalities]
        if self._has_beta:
            names.append("beta_temp")
        self.constrained_names = tuple(names)

        alpha = priors.dirichlet_alpha
        self._dir_alpha = alpha
        self._dir_const = dirichlet_logpdf(np.full(m, 1.0 / m), alpha) \
            - (alpha - 1.0) * m * math.log(1.0 / m) if m >= 2 else 0.0

        # data blocks
        if dataset.has("seismic"):
            self._mw_obs = dataset.seismic.mw_obs
        if dataset.has("crater"):
            self._z_crater = np.log10([dataset.crater.width_m,
                                       dataset.crater.length_m])
        if dataset.has("sar"):
            self._sar_ln_r = np.log([b.range_m for b in dataset.sar])
            self._sar_z = lk.sar_logits(np.array([b.damage_pct for b in dataset.sar]))
        if dataset.has("vlm"):
            self._vlm_ln_r = np.log([v.range_m for v in dataset.vlm])
            self._vlm_q = np.stack([v.pmf for v in dataset.vlm])
            self._vlm_w = lk.vlm_entropy_weights(self._vlm_q)

    # -- evaluation ---------------------------------------------------------

    def _decode_scalars(self, u: np.ndarray):
        n = self._n_scalar
        x = np.empty(n)
        dx = np.empty(n)
        dlj = np.empty(n)
        logj = 0.0
        for i, (_, tkind, a0, a1, _, _, _, _) in enumerate(self._specs):
            if tkind == "i":
                xi, dxi, lji, dlji = real_to_interval(float(u[i]), a0, a1)
            else:
                xi, dxi, lji, dlji = real_to_positive(float(u[i]), shift=a0)
            x[i] = xi
            dx[i] = dxi
            dlj[i] = dlji
            logj += lji
        return x, dx, dlj, logj

    def logp_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        u = np.asarray(u, dtype=float)
        grad = np.zeros(self.dim)
        x, dx_du, dlj_du, logj = self._decode_scalars(u)
        if not math.isfinite(logj):
            return -math.inf, grad

        gC = np.zeros(self._n_scalar)  # d(total)/d(constrained scalar)
        total = logj

        # prior terms
        for i, (_, _, _, _, pkind, p0, p1, pconst) in enumerate(self._specs):
            xi = x[i]
            if pkind == "yield":
                t = math.log10(xi)
                z = (t - self._yield_mu) / self._yield_sigma
                total += self._yield_const - 0.5 * z * z - math.log(xi * LN10)
                gC[i] += (-z / self._yield_sigma) / (xi * LN10) - 1.0 / xi
            elif pkind == "tn":
                z = (xi - p0) / p1
                total += pconst - 0.5 * z * z
                gC[i] += -z / p1
            elif pkind == "ln":
                lx = math.log(xi)
                z = (lx - p0) / p1
                total += pconst - lx - 0.5 * z * z
                gC[i] += -1.0 / xi - z / (p1 * xi)
            elif pkind == "hn":
                total += pconst - 0.5 * (xi / p0) ** 2
                gC[i] += -xi / (p0 * p0)
            else:  # shifted exponential
                total += pconst - (xi - p0) / p1
                gC[i] += -1.0 / p1

        # tempering weights
        m = len(self.modalities)
        kind = self.method.kind
        if kind == DIRICHLET_GAMMA and self._n_sticks:
            v = u[self._n_scalar:self._n_scalar + self._n_sticks]
            gamma, z_st, sticks, logj_sb = stick_expand(v)
            if not math.isfinite(logj_sb):
                return -math.inf, grad
            w = gamma
        elif kind == SINGLE_TEMPERATURE:
            beta, dbeta_du, lj_b, dlj_b = real_to_interval(float(u[-1]), 0.0, 1.0)
            if not math.isfinite(lj_b):
                return -math.inf, grad
            w = np.full(m, beta)
        elif kind == FIXED_GAMMA:
            w = self._fixed_w
        else:
            w = np.ones(m)

        # likelihood terms
        y = x[0]
        lvals = np.empty(m)
        for j, mod in enumerate(self.modalities):
            if mod == "seismic":
                ll, d_y, d_sm = lk.seismic_core(self._mw_obs, y, x[self._ix["sigma_m"]])
                lvals[j] = ll
                gC[0] += w[j] * d_y
                gC[self._ix["sigma_m"]] += w[j] * d_sm
            elif mod == "crater":
                ll, _, d_y, d_sc = lk.crater_core(self._z_crater, y,
                                                  x[self._ix["sigma_c"]])
                lvals[j] = ll
                gC[0] += w[j] * d_y
                gC[self._ix["sigma_c"]] += w[j] * d_sc
            elif mod == "sar":
                out = lk.sar_core(self._sar_ln_r, self._sar_z, y,
                                  x[self._ix["p50_kpa"]], x[self._ix["k_slope"]],
                                  x[self._ix["sigma_sar"]], x[self._ix["nu"]])
                if out is None:
                    return -math.inf, grad
                ll, _, d_y, d_p50, d_k, d_ss, d_nu = out
                lvals[j] = ll
                gC[0] += w[j] * d_y
                gC[self._ix["p50_kpa"]] += w[j] * d_p50
                gC[self._ix["k_slope"]] += w[j] * d_k
                gC[self._ix["sigma_sar"]] += w[j] * d_ss
                gC[self._ix["nu"]] += w[j] * d_nu
            else:
                out = lk.vlm_core(self._vlm_ln_r, self._vlm_q, self._vlm_w, y,
                                  x[self._ix["sigma_dex"]])
                if out is None:
                    return -math.inf, grad
                ll, _, d_y, d_sd = out
                lvals[j] = ll
                gC[0] += w[j] * d_y
                gC[self._ix["sigma_dex"]] += w[j] * d_sd

        total += float(w @ lvals)

        # weight-block priors, Jacobians and gradients
        ns = self._n_scalar
        if kind == DIRICHLET_GAMMA and self._n_sticks:
            alpha = self._dir_alpha
            total += self._dir_const + logj_sb
            g_gamma = lvals.copy()
            if alpha != 1.0:
                total += (alpha - 1.0) * float(np.log(gamma).sum())
                g_gamma += (alpha - 1.0) / gamma
            nst = self._n_sticks
            for k in range(nst):
                zk = z_st[k]
                tail = float(gamma[k + 1:] @ g_gamma[k + 1:])
                grad[ns + k] = (gamma[k] * (1.0 - zk) * g_gamma[k]
                                - zk * tail
                                + (1.0 - 2.0 * zk) - zk * (nst - 1 - k))
        elif kind == SINGLE_TEMPERATURE:
            total += 3.0 * math.log(beta) + math.log1p(-beta) - _LN_BETA_4_2 + lj_b
            dbeta = float(lvals.sum()) + 3.0 / beta - 1.0 / (1.0 - beta)
            grad[self.dim - 1] = dbeta * dbeta_du + dlj_b

        grad[:ns] = gC * dx_du + dlj_du
        if not math.isfinite(total):
            return -math.inf, np.zeros(self.dim)
        return total, grad

    def logp(self, u: np.ndarray) -> float:
        return self.logp_and_grad(u)[0]

    # -- encode / decode ----------------------------------------------------

    def to_constrained(self, u: np.ndarray) -> np.ndarray:
        """Constrained values in the order of constrained_names (the full
        simplex is stored, not the free stick coordinates)."""
        u = np.asarray(u, dtype=float)
        out = np.empty(len(self.constrained_names))
        x, _, _, _ = self._decode_scalars(u)
        out[:self._n_scalar] = x
        pos = self._n_scalar
        if self._n_sticks:
            gamma, _ = stick_to_simplex(u[pos:pos + self._n_sticks])
            out[pos:pos + gamma.size] = gamma
        if self._has_beta:
            out[-1] = real_to_interval(float(u[-1]), 0.0, 1.0)[0]
        return out

    def kb_regime_signature(self, u: np.ndarray) -> tuple[int, ...]:
        """Coefficient-row index of every SAR/VLM range at this point; used
        to detect when a finite-difference stencil straddles a junction of
        the piecewise overpressure fit (where the density is discontinuous
        and central differences are not a valid oracle)."""
        y = real_to_interval(float(np.asarray(u)[0]), 0.0,
                             self.priors.yield_max_kt)[0]
        shift = math.log(lk.EN_PER_SI) - (math.log(y) + math.log(1e6)) / 3.0
        sig = []
        for ln_r in (getattr(self, "_sar_ln_r", None),
                     getattr(self, "_vlm_ln_r", None)):
            if ln_r is not None:
                from .blast import _KB_LN_EDGES
                sig.extend(np.searchsorted(_KB_LN_EDGES, ln_r + shift,
                                           side="right").tolist())
        return tuple(sig)

    def sample_init(self, rng: np.random.Generator) -> np.ndarray:
        """One draw from the priors mapped to unconstrained space."""
        pr = self.priors
        u = np.empty(self.dim)
        for i, (name, tkind, a0, a1, _, _, _, _) in enumerate(self._specs):
            if name == "yield_kt":
                x = 10.0 ** float(pr.yield_log10_dist().sample(rng))
            else:
                x = float(getattr(pr, name).sample(rng))
            if tkind == "i":
                x = min(max(x, a0 + 1e-12), a1 - 1e-12)
                u[i] = interval_to_real(x, a0, a1)
            else:
                u[i] = positive_to_real(max(x, a0 + 1e-12), shift=a0)
        if self._n_sticks:
            m = len(self.modalities)
            gamma = rng.dirichlet(np.full(m, pr.dirichlet_alpha))
            gamma = np.clip(gamma, 1e-10, None)
            gamma /= gamma.sum()
            u[self._n_scalar:self._n_scalar + self._n_sticks] = simplex_to_stick(gamma)
        if self._has_beta:
            b = min(max(float(rng.beta(4.0, 2.0)), 1e-10), 1.0 - 1e-10)
            u[-1] = interval_to_real(b, 0.0, 1.0)
        return u


def joint_logdensity(density: JointDensity, u: np.ndarray) -> tuple[float, np.ndarray]:
    """Functional entry point: (log density, gradient) at u."""
    return density.logp_and_grad(u)


_STENCIL = np.array([-1.0, 9.0, -45.0, 45.0, -9.0, 1.0])
_OFFSETS = np.array([-3, -2, -1, 1, 2, 3], dtype=float)


def gradient_check(density: JointDensity, n_points: int = 50, seed: int = 0,
                   h: float = 1e-4) -> float:
    """Worst scaled error |analytic - 7-point central difference| over
    random prior draws.

    Points where the oracle is undefined are resampled rather than
    compared: off-support points (density -inf somewhere in the stencil)
    and points whose yield stencil straddles a junction of the piecewise
    overpressure fit, where the density itself is discontinuous.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    found = 0
    attempts = 0
    while found < n_points:
        attempts += 1
        if attempts > 200 * n_points:
            raise RuntimeError("could not find enough interior support points")
        u = density.sample_init(rng)
        lp, g = density.logp_and_grad(u)
        if not math.isfinite(lp):
            continue
        lo = u.copy()
        hi = u.copy()
        lo[0] -= 3 * h
        hi[0] += 3 * h
        if density.kb_regime_signature(lo) != density.kb_regime_signature(hi):
            continue
        ok = True
        point_worst = 0.0
        for i in range(density.dim):
            vals = np.empty(6)
            for k, off in enumerate(_OFFSETS):
                up = u.copy()
                up[i] += off * h
                vals[k] = density.logp(up)
            if not np.all(np.isfinite(vals)):
                ok = False
                break
            fd = float(_STENCIL @ vals) / (60.0 * h)
            point_worst = max(point_worst, abs(fd - g[i]) / max(1.0, abs(fd)))
        if ok:
            worst = max(worst, point_worst)
            found += 1
    return worst
