"""Monte-Carlo harness for headline and multilevel error-rate studies.

Replicate ``r`` draws from its own stream ``PCG64(SeedSequence(seed, spawn_key=(r,)))``,
so tables do not depend on chunking or thread count. Within a replicate the
same shared factor and idiosyncratic noise are reused for every rho on the
grid (common random numbers), which keeps curves over rho smooth.

Decisions are made by comparing each method's statistic with its critical
value, computed once per table; this is equivalent to ``p <= alpha``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import interpolate, optimize, special

from . import __version__
from .combiners import chi2_sf, parse_method
from .stable import (
    StableParams,
    cauchy_transform,
    landau,
    levy_transform,
    stable_isf,
    stable_quantile,
    _tails,
)

__all__ = [
    "Scenario",
    "SimulationConfig",
    "RatesTable",
    "HEADLINE_METHODS",
    "MULTILEVEL_SIM_METHODS",
    "DEFAULT_RHO_GRID",
    "sample_pvalues_wmg",
    "sample_pvalues_mvn_z",
    "replicate_rng",
    "headline_decisions",
    "group_decisions",
    "run_headline",
    "run_multilevel",
]

HEADLINE_METHODS = ("bonferroni", "lct", "simes", "sct:0.9", "hmp", "sct:0.99", "cct", "fisher")
MULTILEVEL_SIM_METHODS = ("bonferroni", "lct", "simes", "sct:0.9", "hmp")
DEFAULT_RHO_GRID = tuple(round(0.1 * i, 1) for i in range(11))
PRNG_NAME = f"PCG64 via SeedSequence spawn keys (numpy {np.__version__})"

# canonical scenarios at L = 1000
_SCENARIOS = {
    "null": (0, 0.0),
    "needle": (1, 3.0),
    "mixture": (100, 1.25),
    "pervasive": (1000, 0.7),
}
# multilevel study: 100 alternatives at mean -2 among 1000
ML_ALT_FRACTION = 0.1
ML_ALT_MEAN = -2.0


@dataclass(frozen=True)
class Scenario:
    """Alternative configuration: ``n_alt`` coordinates shifted by ``z_alt``."""

    name: str
    L: int = 1000
    n_alt: int = 0
    z_alt: float = 0.0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be positive")
        if not (0 <= self.n_alt <= self.L):
            raise ValueError("n_alt must lie in [0, L]")

    @classmethod
    def named(cls, name: str, L: int = 1000) -> "Scenario":
        """Canonical scenario scaled to ``L``.

        The needle keeps a single alternative; the other scenarios keep their
        alternative fraction.
        """
        if name not in _SCENARIOS:
            raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(_SCENARIOS)}")
        n, z = _SCENARIOS[name]
        if name != "needle":
            n = int(round(n * L / 1000))
        return cls(name, L, min(n, L), z)

    def means(self) -> np.ndarray:
        mu = np.zeros(self.L)
        mu[: self.n_alt] = self.z_alt
        return mu


@dataclass(frozen=True)
class SimulationConfig:
    scenario: Scenario
    model: str = "wmg"
    rho: float | Sequence[float] = DEFAULT_RHO_GRID
    reps: int = 1000
    seed: int = 1
    alpha: float = 0.05
    methods: Sequence[str] = HEADLINE_METHODS

    def __post_init__(self):
        if self.model not in ("wmg", "mvn_z"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        for r in self.rho_grid:
            if not (0.0 <= r <= 1.0):
                raise ValueError(f"rho must lie in [0, 1], got {r}")
        for m in self.methods:
            parse_method(m)

    @property
    def rho_grid(self) -> tuple[float, ...]:
        return tuple(float(r) for r in np.atleast_1d(self.rho))


@dataclass
class RatesTable:
    """Rejection rates with Monte-Carlo standard errors."""

    rows: list[tuple[str, str, float, float]]
    reps: int
    seed: int
    metadata: dict = field(default_factory=dict)

    def get(self, method: str, key: str) -> tuple[float, float]:
        for m, k, rate, se in self.rows:
            if m == method and k == key:
                return rate, se
        raise KeyError((method, key))

    def rate(self, method: str, key: str) -> float:
        return self.get(method, key)[0]

    def to_csv(self, precision: int = 6) -> str:
        buf = io.StringIO()
        for k, v in self.metadata.items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "key", "rate", "stderr", "reps", "seed"])
        for m, k, rate, se in self.rows:
            w.writerow([m, k, f"{rate:.{precision}g}", f"{se:.{precision}g}", self.reps, self.seed])
        return buf.getvalue()

    def to_json(self, precision: int = 6) -> str:
        rows = [
            {
                "method": m,
                "key": k,
                "rate": float(f"{rate:.{precision}g}"),
                "stderr": float(f"{se:.{precision}g}"),
                "reps": self.reps,
                "seed": self.seed,
            }
            for m, k, rate, se in self.rows
        ]
        return json.dumps({"metadata": self.metadata, "rows": rows}, indent=2)


def _rate_row(method, key, hits, reps):
    rate = hits / reps
    return (method, key, rate, math.sqrt(rate * (1.0 - rate) / reps))


# ---------------------------------------------------------------------------
# Samplers


def replicate_rng(seed: int, r: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,))))


def _factor_z(shared, noise, rho):
    # one-factor equicorrelation: corr(Z_i, Z_j) = rho
    return math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * noise


def sample_pvalues_wmg(scenario: Scenario, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Two-sided p-values of squared equicorrelated Gaussians.

    ``Z_i = sqrt(rho) Z_0 + sqrt(1 - rho) e_i + mu_i`` and ``p_i = P(chi2_1 >= Z_i**2)``;
    the ``Z_i**2`` are the diagonal of a one-factor Wishart matrix, a correlated
    gamma family.
    """
    if not (0.0 <= rho <= 1.0):
        raise ValueError("rho must lie in [0, 1]")
    shared = rng.standard_normal()
    noise = rng.standard_normal(scenario.L)
    z = _factor_z(shared, noise, rho) + scenario.means()
    return special.erfc(np.abs(z) / math.sqrt(2.0))


def sample_pvalues_mvn_z(L: int, rho: float, means, rng: np.random.Generator) -> np.ndarray:
    """Left-tailed Z-test p-values ``Phi(Z_i)`` of equicorrelated Gaussians with the given means."""
    if not (0.0 <= rho < 1.0):
        raise ValueError("rho must lie in [0, 1)")
    means = np.broadcast_to(np.asarray(means, dtype=float), (L,))
    shared = rng.standard_normal()
    noise = rng.standard_normal(L)
    return special.ndtr(_factor_z(shared, noise, rho) + means)


def _pvalues_from_z(z, model):
    if model == "wmg":
        return special.erfc(np.abs(z) / math.sqrt(2.0))
    return special.ndtr(z)


def _draw_block(seed, start, stop, L):
    """Shared factors and noise for replicates ``start..stop-1``."""
    shared = np.empty(stop - start)
    noise = np.empty((stop - start, L))
    for j, r in enumerate(range(start, stop)):
        rng = replicate_rng(seed, r)
        shared[j] = rng.standard_normal()
        noise[j] = rng.standard_normal(L)
    return shared, noise


# ---------------------------------------------------------------------------
# Fast extremal Stable transform


_SPLINE = interpolate.CubicSpline


class _StableTransform:
    """``p -> F^-1(1 - p)`` for ``S(lam, 1, 1, 0; 1)`` from a log-log table.

    Nodes in x are refined until neighbouring logits of the CDF differ by at
    most ``max_gap``, then inverted by cubic-spline interpolation.
    Beyond the top node the tail asymptote ``c x**-lam`` is used.
    """

    def __init__(self, lam: float, max_gap: float = 0.1):
        self.lam = lam
        self.params = StableParams(lam, 1.0, 1.0, 0.0, 1)
        c = 2.0 * math.gamma(lam) * math.sin(math.pi * lam / 2.0) / math.pi
        self.log_c = math.log(c)
        log_a = math.log(stable_quantile(1e-18, self.params))
        log_b = math.log(stable_isf(1e-12, self.params))
        log_top = min((self.log_c + 200.0 * math.log(10.0)) / lam, 690.0)

        nodes = {}

        def tails(lx):
            if lx not in nodes:
                nodes[lx] = _tails(math.exp(lx), self.params)
            return nodes[lx]

        def key(lx):
            cdf, sf = tails(lx)
            # logit of the CDF: tracks the log of whichever tail is smaller
            return math.log(max(cdf, 1e-300)) - math.log(max(sf, 1e-300))

        # refine the bulk; the power tail beyond log_b is smooth in log-log
        pts = list(np.linspace(log_a, log_b, 64))
        while True:
            keys = [key(v) for v in pts]
            extra = [
                0.5 * (pts[k] + pts[k + 1])
                for k in range(len(pts) - 1)
                if abs(keys[k + 1] - keys[k]) > max_gap and pts[k + 1] - pts[k] > 1e-9
            ]
            if not extra:
                break
            pts = sorted(set(pts) | set(extra))
        tail = np.linspace(log_b, log_top, 200)[1:]
        for v in tail:
            tails(v)
        pts = pts + list(tail)
        logx = np.array(pts)
        cdf, sf = np.array([nodes[v] for v in pts]).T
        up = (sf <= 0.9) & (sf > 0.0)
        self._upper = _SPLINE(np.log(sf[up])[::-1], logx[up][::-1])
        lo = (cdf <= 0.9) & (cdf >= 1e-30)
        self._lower = _SPLINE(np.log(cdf[lo]), logx[lo])
        self._sf_min = math.log(sf[up][-1])
        self._cdf_min = math.log(cdf[lo][0])
        self.n_nodes = len(pts)

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        out = np.empty_like(p)
        with np.errstate(divide="ignore", over="ignore"):
            upper = p <= 0.5
            lq = np.log(p[upper])
            far = lq < self._sf_min
            vals = np.exp(self._upper(np.where(far, self._sf_min, lq)))
            vals[far] = np.exp((self.log_c - lq[far]) / self.lam)
            out[upper] = vals
            lq = np.log1p(-p[~upper])
            thin = lq < self._cdf_min
            vals = np.exp(self._lower(np.where(thin, self._cdf_min, lq)))
            vals[thin] = 0.0
            out[~upper] = vals
        return out


@lru_cache(maxsize=8)
def _stable_transform(lam: float) -> _StableTransform:
    return _StableTransform(lam)


# ---------------------------------------------------------------------------
# Vectorized decisions


@lru_cache(maxsize=256)
def _critical(method: str, L: int, alpha: float) -> float:
    tag, lam = parse_method(method)
    if tag == "lct":
        return float(levy_transform(alpha))
    if tag == "sct":
        return float(stable_isf(alpha, StableParams(lam, 1.0, 1.0, 0.0, 1)))
    if tag == "hmp":
        return float(stable_isf(alpha, landau(L)))
    if tag == "cct":
        return float(cauchy_transform(alpha))
    if tag == "fisher":
        df = 2 * L
        lo, hi = 0.0, float(df)
        while chi2_sf(hi, df) > alpha:
            hi *= 2.0
        return optimize.brentq(lambda x: chi2_sf(x, df) - alpha, lo, hi, xtol=1e-12, rtol=1e-14)
    return alpha


def _sct_sum(P, lam, crit, L):
    """Row sums of ``F^-1(1 - p)`` normalized by ``L**(1/lam)``, exact near the threshold."""
    tr = _stable_transform(lam)
    stat = tr(P).sum(axis=1) / L ** (1.0 / lam)
    close = np.abs(stat / crit - 1.0) < 1e-6
    if np.any(close):
        params = StableParams(lam, 1.0, 1.0, 0.0, 1)
        for i in np.flatnonzero(close):
            stat[i] = float(np.sum(stable_isf(P[i], params))) / L ** (1.0 / lam)
    return stat


def _reject(method: str, P: np.ndarray, L: int, alpha: float) -> np.ndarray:
    """Row-wise decisions for groups ``P`` (rows) tested within a family of size L, equal weights."""
    tag, lam = parse_method(method)
    crit = _critical(method, L, alpha)
    with np.errstate(divide="ignore"):
        if tag == "lct":
            return levy_transform(P).sum(axis=1) / (L * L) >= crit
        if tag == "sct":
            return _sct_sum(P, lam, crit, L) >= crit
        if tag == "hmp":
            return (1.0 / P).sum(axis=1) / L >= crit
        if tag == "bonferroni":
            return P.min(axis=1) * L <= alpha
        if tag == "simes":
            ranks = np.arange(1, P.shape[1] + 1)
            return (np.sort(P, axis=1) * L / ranks).min(axis=1) <= alpha
        if tag == "cct":
            if P.shape[1] != L:
                raise ValueError("cct is a headline test only")
            has_zero = np.any(P == 0.0, axis=1)
            t = cauchy_transform(np.where(has_zero[:, None], 0.5, P)).mean(axis=1)
            return has_zero | (t >= crit)
        if P.shape[1] != L:
            raise ValueError("fisher is a headline test only")
        return -2.0 * np.log(P).sum(axis=1) >= crit


def headline_decisions(P: np.ndarray, methods: Sequence[str], alpha: float) -> dict[str, np.ndarray]:
    """Full-family decisions for each row of ``P`` (equal weights)."""
    P = np.atleast_2d(P)
    return {m: _reject(m, P, P.shape[1], alpha) for m in methods}


def group_decisions(P_group: np.ndarray, L: int, methods: Sequence[str], alpha: float) -> dict[str, np.ndarray]:
    """Subset decisions for groups ``P_group`` (rows) within families of size ``L``."""
    P_group = np.atleast_2d(P_group)
    return {m: _reject(m, P_group, L, alpha) for m in methods}


# ---------------------------------------------------------------------------
# Drivers


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("STABLEMELD_THREADS", "1")))
    except ValueError:
        return 1


def _chunks(reps: int, size: int):
    return [(s, min(s + size, reps)) for s in range(0, reps, size)]


def _metadata(config: SimulationConfig, study: str) -> dict:
    return {
        "study": study,
        "version": __version__,
        "prng": PRNG_NAME,
        "scenario": config.scenario.name,
        "L": config.scenario.L,
        "n_alt": config.scenario.n_alt,
        "z_alt": config.scenario.z_alt,
        "model": config.model,
        "alpha": config.alpha,
        "seed": config.seed,
    }


def run_headline(config: SimulationConfig) -> RatesTable:
    """Fraction of replicates whose full-family combined p is at most alpha, per rho and method."""
    sc = config.scenario
    mu = sc.means()
    if config.model == "mvn_z" and max(config.rho_grid) >= 1.0:
        raise ValueError("the mvn_z model needs rho < 1")
    methods = list(config.methods)
    # warm caches before threads start
    for m in methods:
        _critical(m, sc.L, config.alpha)
        tag, lam = parse_method(m)
        if tag == "sct":
            _stable_transform(lam)

    def work(bounds):
        shared, noise = _draw_block(config.seed, *bounds, sc.L)
        counts = {}
        for rho in config.rho_grid:
            z = _factor_z(shared[:, None], noise, rho) + mu
            dec = headline_decisions(_pvalues_from_z(z, config.model), methods, config.alpha)
            for m in methods:
                counts[(m, rho)] = int(np.sum(dec[m]))
        return counts

    totals: dict = {}
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        for counts in pool.map(work, _chunks(config.reps, 500)):
            for k, v in counts.items():
                totals[k] = totals.get(k, 0) + v
    rows = [
        _rate_row(m, f"rho={rho:g}", totals[(m, rho)], config.reps) for rho in config.rho_grid for m in methods
    ]
    return RatesTable(rows, config.reps, config.seed, _metadata(config, "headline"))


def run_multilevel(
    config: SimulationConfig, group_sizes: Sequence[int], mixtures: Sequence[float] = (0.0, 0.5)
) -> RatesTable:
    """Type I error (all-null groups) and power (groups with alternatives) per method.

    Each replicate draws a family with ``L/10`` alternatives at mean -2 (left-tailed
    Z-tests under ``mvn_z``; two-sided under ``wmg``) and, for every group size and
    alternative fraction, one random group of that composition. Rows are keyed
    ``rho=..|size=..|ha=..|h0=..``.
    """
    sc = config.scenario
    L = sc.L
    n_alt = int(round(ML_ALT_FRACTION * L))
    mu = np.zeros(L)
    mu[:n_alt] = ML_ALT_MEAN
    if config.model == "mvn_z" and max(config.rho_grid) >= 1.0:
        raise ValueError("the mvn_z model needs rho < 1")
    designs = []
    for size in group_sizes:
        for frac in mixtures:
            n_ha = int(round(frac * size))
            n_h0 = size - n_ha
            if size < 1 or n_ha > n_alt or n_h0 > L - n_alt or not (0.0 <= frac <= 1.0):
                raise ValueError(
                    f"infeasible group: size {size} with {n_ha} alternatives "
                    f"({n_alt} alternatives and {L - n_alt} nulls available)"
                )
            designs.append((size, n_ha, n_h0))
    designs = list(dict.fromkeys(designs))
    methods = list(config.methods)
    for m in methods:
        tag, lam = parse_method(m)
        if tag in ("cct", "fisher"):
            raise ValueError(f"{tag} has no multilevel version")
        _critical(m, L, config.alpha)
        if tag == "sct":
            _stable_transform(lam)

    def work(bounds):
        start, stop = bounds
        n = stop - start
        shared = np.empty(n)
        noise = np.empty((n, L))
        picks = {d: np.empty((n, d[0]), dtype=np.intp) for d in designs}
        for j, r in enumerate(range(start, stop)):
            rng = replicate_rng(config.seed, r)
            shared[j] = rng.standard_normal()
            noise[j] = rng.standard_normal(L)
            for d in designs:
                size, n_ha, n_h0 = d
                ha = rng.choice(n_alt, size=n_ha, replace=False)
                h0 = n_alt + rng.choice(L - n_alt, size=n_h0, replace=False)
                picks[d][j] = np.concatenate([ha, h0])
        counts = {}
        rows_idx = np.arange(n)[:, None]
        for rho in config.rho_grid:
            P = _pvalues_from_z(_factor_z(shared[:, None], noise, rho) + mu, config.model)
            for d in designs:
                dec = group_decisions(P[rows_idx, picks[d]], L, methods, config.alpha)
                for m in methods:
                    counts[(m, rho, d)] = int(np.sum(dec[m]))
        return counts

    totals: dict = {}
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        for counts in pool.map(work, _chunks(config.reps, 200)):
            for k, v in counts.items():
                totals[k] = totals.get(k, 0) + v
    rows = [
        _rate_row(m, f"rho={rho:g}|size={d[0]}|ha={d[1]}|h0={d[2]}", totals[(m, rho, d)], config.reps)
        for rho in config.rho_grid
        for d in designs
        for m in methods
    ]
    meta = _metadata(config, "multilevel")
    meta.update(n_alt=n_alt, z_alt=ML_ALT_MEAN)
    return RatesTable(rows, config.reps, config.seed, meta)
