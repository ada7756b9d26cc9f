"""No-U-Turn sampler with dual-averaging step size and windowed diagonal
mass-matrix adaptation, plus the posterior summaries built on its draws.

The tree uses multinomial sampling of the trajectory (leaf weight
exp(-energy error)), biased progressive sampling at the top-level doublings
and the generalized U-turn criterion with the extra across-subtree checks.
A leaf that lands outside the posterior support (log density -inf, e.g.
a blast-model range guard) terminates the trajectory but is not counted as
a divergence; divergences are energy errors above 1000 at interior points.

Chains are reproducible: all randomness flows from one seed through a
counter-based Philox stream per chain, so equal seeds give bit-identical
draws regardless of worker scheduling.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import gaussian_kde, rankdata

MAX_ENERGY_ERROR = 1000.0
_DA_GAMMA = 0.05
_DA_T0 = 10.0
_DA_KAPPA = 0.75


class LogDensity(Protocol):
    dim: int

    def logp_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]: ...

    def sample_init(self, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class NutsConfig:
    n_chains: int = 4
    n_iter: int = 8000
    n_warmup: int = 2000
    target_accept: float = 0.95
    max_tree_depth: int = 12
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_warmup >= self.n_iter:
            raise ValueError("n_warmup must be smaller than n_iter")
        if not (0.0 < self.target_accept < 1.0):
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")


@dataclass
class ChainOutput:
    """Post-warmup draws (constrained space) with per-draw diagnostics and
    the full step-size history."""

    draws: np.ndarray          # (n_kept, n_params)
    divergent: np.ndarray      # (n_kept,) bool
    boundary_hits: np.ndarray  # (n_kept,) bool, support-guard terminations
    tree_depth: np.ndarray     # (n_kept,) int
    energy: np.ndarray         # (n_kept,)
    accept_stat: np.ndarray    # (n_kept,)
    step_size: np.ndarray      # (n_iter,) including warmup

    @property
    def n_kept(self) -> int:
        return self.draws.shape[0]

    @property
    def divergence_rate(self) -> float:
        return float(self.divergent.mean())


@dataclass
class FitResult:
    chains: list[ChainOutput]
    param_names: tuple[str, ...]
    config: NutsConfig

    def pooled(self, name: str) -> np.ndarray:
        j = self.param_names.index(name)
        return np.concatenate([c.draws[:, j] for c in self.chains])

    def pooled_matrix(self) -> np.ndarray:
        return np.concatenate([c.draws for c in self.chains], axis=0)

    @property
    def divergence_rate(self) -> float:
        total = sum(c.n_kept for c in self.chains)
        return sum(int(c.divergent.sum()) for c in self.chains) / total

    @property
    def divergence_count(self) -> int:
        return sum(int(c.divergent.sum()) for c in self.chains)

    @property
    def diagnostic_failure(self) -> bool:
        return self.divergence_rate > 0.25


# ---------------------------------------------------------------------------
# transition kernel
# ---------------------------------------------------------------------------

class _Subtree:
    __slots__ = ("end_m", "end_p", "prop", "logw", "r_sum", "stop",
                 "divergent", "boundary", "alpha", "n_leaves")

    def __init__(self, end_m, end_p, prop, logw, r_sum, stop, divergent,
                 boundary, alpha, n_leaves):
        self.end_m = end_m          # (u, r, lp, grad) backward end
        self.end_p = end_p          # (u, r, lp, grad) forward end
        self.prop = prop            # (u, lp, grad, delta_h)
        self.logw = logw
        self.r_sum = r_sum
        self.stop = stop
        self.divergent = divergent
        self.boundary = boundary
        self.alpha = alpha
        self.n_leaves = n_leaves


def _leaf(density, state, eps_signed, inv_mass, h0):
    u, r, lp, grad = state
    r_half = r + 0.5 * eps_signed * grad
    u_new = u + eps_signed * (inv_mass * r_half)
    lp_new, g_new = density.logp_and_grad(u_new)
    boundary = not math.isfinite(lp_new)
    if boundary:
        r_new = r_half
        delta_h = math.inf
        divergent = False
    else:
        r_new = r_half + 0.5 * eps_signed * g_new
        ke = 0.5 * float(r_new @ (inv_mass * r_new))
        delta_h = (-lp_new + ke) - h0
        if math.isnan(delta_h):
            delta_h = math.inf
        divergent = delta_h > MAX_ENERGY_ERROR
    alpha = math.exp(-delta_h) if delta_h > 0.0 else 1.0
    end = (u_new, r_new, lp_new, g_new)
    prop = (u_new, lp_new, g_new, delta_h)
    return _Subtree(end, end, prop, -delta_h, r_new.copy(),
                    boundary or divergent, divergent, boundary, alpha, 1)


def _no_uturn(left: _Subtree, right: _Subtree, r_sum, inv_mass) -> bool:
    """Generalized U-turn criterion over the merged span, including the
    across-subtree checks."""
    r_m = left.end_m[1]
    r_p = right.end_p[1]
    sharp_m = inv_mass * r_m
    sharp_p = inv_mass * r_p
    if float(r_sum @ sharp_m) <= 0 or float(r_sum @ sharp_p) <= 0:
        return False
    r_lp = left.end_p[1]    # forward end of the backward subtree
    r_rm = right.end_m[1]   # backward end of the forward subtree
    rho_l = left.r_sum + r_rm
    if float(rho_l @ sharp_m) <= 0 or float(rho_l @ (inv_mass * r_rm)) <= 0:
        return False
    rho_r = right.r_sum + r_lp
    if float(rho_r @ (inv_mass * r_lp)) <= 0 or float(rho_r @ sharp_p) <= 0:
        return False
    return True


def _build(density, depth, state, direction, eps, inv_mass, h0, rng):
    if depth == 0:
        return _leaf(density, state, direction * eps, inv_mass, h0)
    first = _build(density, depth - 1, state, direction, eps, inv_mass, h0, rng)
    if first.stop:
        return first
    far = first.end_p if direction == 1 else first.end_m
    second = _build(density, depth - 1, far, direction, eps, inv_mass, h0, rng)
    alpha = first.alpha + second.alpha
    n = first.n_leaves + second.n_leaves
    divergent = first.divergent or second.divergent
    boundary = first.boundary or second.boundary
    if second.stop:
        first.alpha = alpha
        first.n_leaves = n
        first.divergent = divergent
        first.boundary = boundary
        first.stop = True
        return first
    left, right = (first, second) if direction == 1 else (second, first)
    logw = np.logaddexp(first.logw, second.logw)
    prop = first.prop
    if math.log(rng.random()) < second.logw - logw:
        prop = second.prop
    r_sum = first.r_sum + second.r_sum
    ok = _no_uturn(left, right, r_sum, inv_mass)
    return _Subtree(left.end_m, right.end_p, prop, logw, r_sum,
                    not ok, divergent, boundary, alpha, n)


def _transition(density, u, lp, grad, eps, inv_mass, sqrt_mass, rng, max_depth):
    dim = u.size
    r0 = sqrt_mass * rng.standard_normal(dim)
    h0 = -lp + 0.5 * float(r0 @ (inv_mass * r0))
    start = (u, r0, lp, grad)
    root = _Subtree(start, start, (u, lp, grad, 0.0), 0.0, r0.copy(),
                    False, False, False, 0.0, 0)
    depth_used = 0
    alpha_sum = 0.0
    n_alpha = 0
    divergent = False
    boundary = False
    for depth in range(max_depth):
        direction = 1 if rng.random() < 0.5 else -1
        state = root.end_p if direction == 1 else root.end_m
        sub = _build(density, depth, state, direction, eps, inv_mass, h0, rng)
        alpha_sum += sub.alpha
        n_alpha += sub.n_leaves
        divergent = divergent or sub.divergent
        boundary = boundary or sub.boundary
        if sub.stop:
            break
        # biased progressive sampling favors the fresh half of the trajectory
        if math.log(rng.random()) < sub.logw - root.logw:
            root.prop = sub.prop
        root.logw = np.logaddexp(root.logw, sub.logw)
        left, right = (root, sub) if direction == 1 else (sub, root)
        r_sum = root.r_sum + sub.r_sum
        ok = _no_uturn(left, right, r_sum, inv_mass)
        root = _Subtree(left.end_m, right.end_p, root.prop, root.logw, r_sum,
                        False, divergent, boundary, alpha_sum, n_alpha)
        depth_used = depth + 1
        if not ok:
            break
    u_new, lp_new, grad_new, dh = root.prop
    accept = alpha_sum / max(n_alpha, 1)
    energy = h0 + min(dh, MAX_ENERGY_ERROR)
    return u_new, lp_new, grad_new, accept, depth_used, divergent, boundary, energy


def _find_reasonable_epsilon(density, u, lp, grad, inv_mass, sqrt_mass, rng):
    eps = 1.0
    r = sqrt_mass * rng.standard_normal(u.size)
    h0 = -lp + 0.5 * float(r @ (inv_mass * r))

    def log_ratio(eps_try: float) -> float:
        r_half = r + 0.5 * eps_try * grad
        u_new = u + eps_try * (inv_mass * r_half)
        lp_new, g_new = density.logp_and_grad(u_new)
        if not math.isfinite(lp_new):
            return -math.inf
        r_new = r_half + 0.5 * eps_try * g_new
        return h0 - (-lp_new + 0.5 * float(r_new @ (inv_mass * r_new)))

    lr = log_ratio(eps)
    direction = 1.0 if lr > math.log(0.5) else -1.0
    for _ in range(60):
        if direction * lr <= -direction * math.log(2.0):
            break
        eps *= 2.0 ** direction
        if eps < 1e-10 or eps > 1e7:
            break
        lr = log_ratio(eps)
    return min(max(eps, 1e-10), 1e7)


# ---------------------------------------------------------------------------
# warmup schedule
# ---------------------------------------------------------------------------

def _warmup_windows(n_warmup: int) -> tuple[list[tuple[int, int]], int]:
    """Slow-phase window boundaries (half-open) for metric updates."""
    if n_warmup >= 150:
        init_buf, term_buf, base = 75, 50, 25
    else:
        init_buf = max(1, int(0.15 * n_warmup))
        term_buf = max(1, int(0.10 * n_warmup))
        base = max(1, n_warmup - init_buf - term_buf)
    slow_end = n_warmup - term_buf
    windows = []
    pos, size = init_buf, base
    while pos < slow_end:
        end = pos + size
        if end + 2 * size > slow_end:
            end = slow_end
        windows.append((pos, end))
        pos = end
        size *= 2
    return windows, slow_end


class _DualAveraging:
    def __init__(self, eps0: float, target: float):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept: float) -> float:
        self.m += 1
        eta = 1.0 / (self.m + _DA_T0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept)
        self.log_eps = self.mu - math.sqrt(self.m) / _DA_GAMMA * self.h_bar
        self.log_eps = min(max(self.log_eps, -25.0), 15.0)
        x = self.m ** (-_DA_KAPPA)
        self.log_eps_bar = x * self.log_eps + (1.0 - x) * self.log_eps_bar
        return math.exp(self.log_eps)

    def adapted(self) -> float:
        return math.exp(self.log_eps_bar)


def _run_chain(density: LogDensity, cfg: NutsConfig,
               seed_seq: np.random.SeedSequence,
               to_constrained) -> ChainOutput:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    dim = density.dim

    u = lp = grad = None
    for _ in range(100):
        u = density.sample_init(rng)
        lp, grad = density.logp_and_grad(u)
        if math.isfinite(lp):
            break
    else:
        raise RuntimeError("could not find an initial point with finite density")

    inv_mass = np.ones(dim)
    sqrt_mass = np.ones(dim)
    eps = _find_reasonable_epsilon(density, u, lp, grad, inv_mass, sqrt_mass, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    windows, slow_end = _warmup_windows(cfg.n_warmup)
    window_ends = {end: start for start, end in windows}

    n_kept = cfg.n_iter - cfg.n_warmup
    first = to_constrained(u)
    draws = np.empty((n_kept, first.size))
    divergent = np.zeros(n_kept, dtype=bool)
    boundary = np.zeros(n_kept, dtype=bool)
    depth_arr = np.zeros(n_kept, dtype=np.int16)
    energy = np.empty(n_kept)
    accept_arr = np.empty(n_kept)
    step_hist = np.empty(cfg.n_iter)
    warm_u = np.empty((cfg.n_warmup, dim))

    for it in range(cfg.n_iter):
        step_hist[it] = eps
        u, lp, grad, accept, depth, div, bdry, erg = _transition(
            density, u, lp, grad, eps, inv_mass, sqrt_mass, rng,
            cfg.max_tree_depth)
        if it < cfg.n_warmup:
            warm_u[it] = u
            eps = da.update(accept)
            end = it + 1
            if end in window_ends:
                seg = warm_u[window_ends[end]:end]
                n = seg.shape[0]
                var = seg.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                inv_mass = np.maximum(inv_mass, 1e-10)
                sqrt_mass = 1.0 / np.sqrt(inv_mass)
                eps = _find_reasonable_epsilon(density, u, lp, grad,
                                               inv_mass, sqrt_mass, rng)
                da = _DualAveraging(eps, cfg.target_accept)
            if end == cfg.n_warmup:
                eps = da.adapted()
        else:
            k = it - cfg.n_warmup
            draws[k] = to_constrained(u)
            divergent[k] = div
            boundary[k] = bdry
            depth_arr[k] = depth
            energy[k] = erg
            accept_arr[k] = accept

    return ChainOutput(draws=draws, divergent=divergent, boundary_hits=boundary,
                       tree_depth=depth_arr, energy=energy,
                       accept_stat=accept_arr, step_size=step_hist)


def _chain_task(args):
    density, cfg, seed_seq = args
    to_c = getattr(density, "to_constrained", None) or (lambda v: np.asarray(v))
    return _run_chain(density, cfg, seed_seq, to_c)


def run_nuts(density: LogDensity, cfg: NutsConfig, workers: int = 1
             ) -> list[ChainOutput]:
    """Run cfg.n_chains independent chains; deterministic given cfg.seed."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)
    tasks = [(density, cfg, s) for s in seeds]
    if workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.n_chains)) as pool:
            return list(pool.map(_chain_task, tasks))
    return [_chain_task(t) for t in tasks]


def fit(density, cfg: NutsConfig, workers: int = 1) -> FitResult:
    chains = run_nuts(density, cfg, workers=workers)
    names = getattr(density, "constrained_names",
                    tuple(f"u{i}" for i in range(density.dim)))
    return FitResult(chains=chains, param_names=tuple(names), config=cfg)


# ---------------------------------------------------------------------------
# posterior summaries
# ---------------------------------------------------------------------------

def hdi(samples: np.ndarray, mass: float = 0.95) -> tuple[float, float]:
    """Shortest contiguous interval holding ceil(mass * n) sorted samples."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 100:
        raise ValueError("hdi requires at least 100 samples")
    if not (0.0 < mass < 1.0):
        raise ValueError("mass must lie in (0, 1)")
    k = int(math.ceil(mass * n))
    widths = x[k - 1:] - x[:n - k + 1]
    j = int(np.argmin(widths))
    return float(x[j]), float(x[j + k - 1])


def kde_mode(samples: np.ndarray, grid_size: int = 512) -> float:
    """Peak of a Gaussian KDE with Silverman bandwidth."""
    x = np.asarray(samples, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return lo
    kde = gaussian_kde(x, bw_method="silverman")
    grid = np.linspace(lo, hi, grid_size)
    return float(grid[int(np.argmax(kde(grid)))])


def _split_chains(draws_1d: Sequence[np.ndarray]) -> np.ndarray:
    rows = []
    for c in draws_1d:
        n = c.size // 2
        rows.append(c[:n])
        rows.append(c[n:2 * n])
    return np.asarray(rows)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    flat = rankdata(x, axis=None)
    z = ndtri((flat - 0.375) / (x.size + 0.25))
    return z.reshape(x.shape)


def _rhat(seqs: np.ndarray) -> float:
    m, n = seqs.shape
    w = float(seqs.var(axis=1, ddof=1).mean())
    if w == 0:
        return 1.0
    b_over_n = float(seqs.mean(axis=1).var(ddof=1))
    var_plus = (n - 1) / n * w + b_over_n
    return math.sqrt(var_plus / w)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=1)
    ac = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n].real
    return ac / n


def _ess(seqs: np.ndarray) -> float:
    m, n = seqs.shape
    acov = _autocov(seqs)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = float(chain_var.mean())
    if mean_var == 0:
        return float(m * n)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += float(seqs.mean(axis=1).var(ddof=1))
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    # Geyer initial monotone positive sequence
    max_t = 1
    pair_sums = []
    t = 1
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        pair_sums.append(p)
        t += 2
    running = math.inf
    total = rho[0]
    for p in pair_sums:
        running = min(running, p)
        total += running
    tau = max(-1.0 + 2.0 * total, 1.0 / math.log10(m * n + 10))
    return float(m * n / tau)


def diagnostics(chains: Sequence[ChainOutput]) -> tuple[np.ndarray, np.ndarray]:
    """Rank-normalized split R-hat and bulk ESS per parameter."""
    if len(chains) < 2:
        raise ValueError("diagnostics requires at least 2 chains")
    if min(c.n_kept for c in chains) < 100:
        raise ValueError("diagnostics requires at least 100 draws per chain")
    n_params = chains[0].draws.shape[1]
    rhat = np.empty(n_params)
    ess = np.empty(n_params)
    for j in range(n_params):
        seqs = _split_chains([c.draws[:, j] for c in chains])
        z = _rank_normalize(seqs)
        rhat[j] = _rhat(z)
        ess[j] = _ess(z)
    return rhat, ess


@dataclass
class ParamSummary:
    mean: float
    median: float
    mode: float
    hdi_lo: float
    hdi_hi: float
    rhat: float
    ess: float


@dataclass
class PosteriorSummary:
    parameters: dict[str, ParamSummary]
    divergences: int
    n_draws: int
    diagnostic_failure: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "parameters": {k: vars(v) for k, v in self.parameters.items()},
            "divergences": self.divergences,
            "n_draws": self.n_draws,
            "diagnostic_failure": self.diagnostic_failure,
        }


def summarize(result: FitResult, mass: float = 0.95) -> PosteriorSummary:
    rhat, ess = diagnostics(result.chains)
    params: dict[str, ParamSummary] = {}
    for j, name in enumerate(result.param_names):
        pooled = result.pooled(name)
        lo, hi = hdi(pooled, mass)
        params[name] = ParamSummary(
            mean=float(pooled.mean()), median=float(np.median(pooled)),
            mode=kde_mode(pooled), hdi_lo=lo, hdi_hi=hi,
            rhat=float(rhat[j]), ess=float(ess[j]))
    return PosteriorSummary(parameters=params,
                            divergences=result.divergence_count,
                            n_draws=sum(c.n_kept for c in result.chains),
                            diagnostic_failure=result.diagnostic_failure)


def write_draws_csv(result: FitResult, path: str) -> None:
    """One row per post-warmup draw, chain id first, then the parameters."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("chain",) + result.param_names)
        for ci, chain in enumerate(result.chains):
            for row in chain.draws:
                writer.writerow([ci] + [repr(float(v)) for v in row])


def read_draws_csv(path: str) -> tuple[tuple[str, ...], np.ndarray, np.ndarray]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.asarray(rows)
    return tuple(header[1:]), arr[:, 0].astype(int), arr[:, 1:]
