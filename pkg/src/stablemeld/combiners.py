"""p-value combination tests.

Every test takes a :class:`PValueFamily` (the full universe of L p-values and
their weights) and, where the method supports it, a subset of indices. Subset
tests that are multiplicity-adjusted normalize by the whole family, so the
adjusted p-value of a group can be compared directly with the familywise
level alpha.

Subsets are 0-based index sequences; ``None`` means the full family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import special

from .stable import (
    StableParams,
    cauchy_sf,
    cauchy_transform,
    check_probability,
    levy_sf,
    levy_transform,
    landau,
    self_similarity_params,
    stable_isf,
    stable_sf,
)

__all__ = [
    "PValueFamily",
    "CombinedResult",
    "UnsupportedMethodError",
    "METHODS",
    "MULTILEVEL_METHODS",
    "parse_method",
    "lct",
    "cct",
    "hmp_raw",
    "hmp_adjusted",
    "hmp",
    "sct_extremal",
    "bonferroni",
    "simes_multilevel",
    "fisher",
    "chi2_sf",
    "regularized_gamma_q",
    "combine",
]

# p-values at or above this trip the Cauchy sensitivity warning
CCT_NEAR_ONE = 1.0 - 1e-8

METHODS = ("lct", "cct", "hmp", "sct", "bonferroni", "simes", "fisher")
MULTILEVEL_METHODS = ("lct", "hmp", "sct", "bonferroni", "simes")


class UnsupportedMethodError(ValueError):
    """The method cannot give a multiplicity-adjusted subset test."""


@dataclass(frozen=True, eq=False)
class PValueFamily:
    """The full family of L p-values with positive raw weights.

    Weights default to 1. ``ids`` are optional labels used by the CLI.
    """

    p: np.ndarray
    w: np.ndarray = None
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        p = check_probability(np.array(self.p, dtype=float, ndmin=1))
        if p.ndim != 1 or p.size == 0:
            raise ValueError("a family needs at least one p-value")
        if self.w is None:
            w = np.ones_like(p)
        else:
            w = np.array(self.w, dtype=float, ndmin=1)
            if w.shape != p.shape:
                raise ValueError("weights and p-values differ in length")
            if not np.all(np.isfinite(w) & (w > 0.0)):
                raise ValueError("weights must be positive and finite")
        ids = self.ids
        if ids is not None:
            ids = tuple(str(i) for i in ids)
            if len(ids) != p.size:
                raise ValueError("ids and p-values differ in length")
            if len(set(ids)) != len(ids):
                raise ValueError("duplicate ids")
        p.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "ids", ids)

    @property
    def size(self) -> int:
        return int(self.p.size)

    @property
    def equal_weights(self) -> bool:
        return bool(np.all(self.w == self.w[0]))

    def bonferroni_weights(self, lam: float = 0.5) -> np.ndarray:
        """``u_i = w_i**lam / sum_j w_j**lam``; ``lam = 1/2`` pairs with the LCT."""
        v = self.w**lam
        return v / v.sum()

    def indices(self, subset: Iterable[int] | None = None) -> np.ndarray:
        """Validate a subset and return it as a sorted index array."""
        if subset is None:
            return np.arange(self.size)
        idx = np.array(sorted(int(i) for i in subset), dtype=np.intp)
        if idx.size == 0:
            raise ValueError("subset is empty")
        if idx[0] < 0 or idx[-1] >= self.size:
            raise ValueError(f"subset index out of range for a family of {self.size}")
        if np.any(np.diff(idx) == 0):
            raise ValueError("subset has repeated indices")
        return idx

    def indices_of(self, labels: Iterable[str]) -> np.ndarray:
        """Map id labels to a subset index array."""
        if self.ids is None:
            raise ValueError("family has no ids")
        pos = {k: i for i, k in enumerate(self.ids)}
        missing = [k for k in labels if k not in pos]
        if missing:
            raise KeyError(f"unknown id(s): {', '.join(missing)}")
        return self.indices(pos[k] for k in labels)

    def extended(self, p_extra: Sequence[float], w_extra: Sequence[float] | None = None) -> "PValueFamily":
        """A new family with extra p-values appended (ids are dropped)."""
        p_extra = np.atleast_1d(np.asarray(p_extra, dtype=float))
        if w_extra is None:
            w_extra = np.ones_like(p_extra)
        return PValueFamily(np.concatenate([self.p, p_extra]), np.concatenate([self.w, w_extra]))


@dataclass(frozen=True)
class CombinedResult:
    """Outcome of one combined test.

    ``p_raw`` is the unadjusted combined p-value where one exists and
    ``p_adjusted`` the multiplicity-adjusted one. Headline-only methods
    (CCT, Fisher) report the same value in both. For the HMP ``statistic``
    holds the harmonic mean p-value itself.
    """

    method: str
    statistic: float
    p_raw: float | None
    p_adjusted: float | None
    alpha: float
    reject: bool
    warnings: tuple[str, ...] = field(default=())
    subset: tuple[int, ...] | None = None

    @property
    def p_value(self) -> float:
        """The p-value the decision is based on."""
        return self.p_adjusted if self.p_adjusted is not None else self.p_raw

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "statistic": self.statistic,
            "p_raw": self.p_raw,
            "p_adjusted": self.p_adjusted,
            "alpha": self.alpha,
            "reject": self.reject,
            "warnings": list(self.warnings),
            "subset": None if self.subset is None else list(self.subset),
        }


def _alpha(alpha) -> float:
    return float(check_probability(alpha, "alpha"))


def _result(method, statistic, p_raw, p_adj, alpha, idx=None, family=None, warnings=()):
    p = p_adj if p_adj is not None else p_raw
    subset = None
    if idx is not None and family is not None and idx.size != family.size:
        subset = tuple(int(i) for i in idx)
    return CombinedResult(
        method=method,
        statistic=float(statistic),
        p_raw=None if p_raw is None else float(p_raw),
        p_adjusted=None if p_adj is None else float(p_adj),
        alpha=alpha,
        reject=bool(p <= alpha),
        warnings=tuple(warnings),
        subset=subset,
    )


# ---------------------------------------------------------------------------
# Stable combination tests with exact subset adjustment


def lct(family: PValueFamily, subset=None, alpha: float = 0.05) -> CombinedResult:
    """Levy combination test.

    ``V = sum_{i in R} w_i T(p_i) / (sum_{all i} sqrt(w_i))**2`` where ``T`` is
    :func:`levy_transform`; the adjusted p-value is the Levy upper tail at V.
    ``p_raw`` uses the subset's own weights in the denominator.

    When the transform of a p-value far below 1e-154 overflows a double, the
    sum is rescaled so the combined p-value stays accurate.
    """
    alpha = _alpha(alpha)
    idx = family.indices(subset)
    w = family.w[idx]
    s_full = float(np.sum(np.sqrt(family.w)))
    s_sub = float(np.sum(np.sqrt(w)))
    with np.errstate(divide="ignore", over="ignore"):
        num = math.fsum(w * levy_transform(family.p[idx]))
    if num < math.inf or np.any(family.p[idx] == 0.0):
        v_full, v_sub = num / s_full**2, num / s_sub**2
        return _result("lct", v_full, levy_sf(v_sub), levy_sf(v_full), alpha, idx, family)
    # the transform overflowed: rescale by the smallest erfinv(p), which makes
    # every term at most w_i and leaves 1 / sqrt(2 V) = S e_min / sqrt(sum)
    e = special.erfinv(family.p[idx])
    e_min = float(e.min())
    scaled = math.fsum(w * (e_min / e) ** 2)
    root = math.sqrt(scaled)
    with np.errstate(over="ignore", divide="ignore", under="ignore"):
        v_full = float(np.float64(scaled) / (2.0 * np.float64(e_min * s_full) ** 2))
    p_sub = float(special.erf(s_sub * e_min / root))
    p_full = float(special.erf(s_full * e_min / root))
    return _result("lct", v_full, p_sub, p_full, alpha, idx, family)


def sct_extremal(family: PValueFamily, subset=None, lam: float = 0.9, alpha: float = 0.05) -> CombinedResult:
    """Extremal Stable combination test with ``S(lam, 1, 1, 0; 1)``, ``0 < lam < 1``.

    Each p-value maps to the upper-tail quantile of the law; the weighted sum
    is normalized by the self-similarity scale of the full family. At
    ``lam = 1/2`` this is the LCT.
    """
    if not (0.0 < lam < 1.0):
        raise ValueError(f"extremal Stable combination needs 0 < lam < 1, got {lam}")
    alpha = _alpha(alpha)
    params = StableParams(lam, 1.0, 1.0, 0.0, 1)
    idx = family.indices(subset)
    w = family.w[idx]
    # F^-1(0) = 0 and Delta = 0 for this law, so p = 1 entries add nothing
    num = math.fsum(w * stable_isf(family.p[idx], params))
    W_full, _ = self_similarity_params(family.w, params)
    W_sub, _ = self_similarity_params(w, params)
    stat = num / W_full
    return _result(
        f"sct:{lam:g}", stat, stable_sf(num / W_sub, params), stable_sf(stat, params), alpha, idx, family
    )


def bonferroni(family: PValueFamily, subset=None, alpha: float = 0.05, lam: float = 0.5) -> CombinedResult:
    """Weighted Bonferroni, ``min(1, min_{i in R} p_i / u_i)``.

    ``u`` are the Bonferroni weights implied by tail index ``lam``; the default
    matches the weights the LCT dominates.
    """
    alpha = _alpha(alpha)
    idx = family.indices(subset)
    v = family.w**lam
    # p / u with u = v / sum(v); exactly L p for equal weights
    ratio = float(np.min(family.p[idx] * (v.sum() / v[idx])))
    return _result("bonferroni", ratio, float(np.min(family.p[idx])), min(1.0, ratio), alpha, idx, family)


def simes_multilevel(family: PValueFamily, subset=None, alpha: float = 0.05) -> CombinedResult:
    """Multilevel Simes: ``min(1, min_j L p_(j) / j)`` over the sorted subset.

    ``L`` is the full family size, so singletons reduce to Bonferroni and the
    full set to the classical Simes test. ``p_raw`` is the within-subset
    Simes p-value. Equal weights only.
    """
    if not family.equal_weights:
        raise ValueError("multilevel Simes requires equal weights")
    alpha = _alpha(alpha)
    idx = family.indices(subset)
    ps = np.sort(family.p[idx])
    ranks = np.arange(1, ps.size + 1)
    best = float(np.min(ps / ranks))
    return _result(
        "simes", family.size * best, min(1.0, ps.size * best), min(1.0, family.size * best), alpha, idx, family
    )


# ---------------------------------------------------------------------------
# Harmonic mean p-value


def hmp_raw(family: PValueFamily, subset=None) -> float:
    """Weighted harmonic mean p-value ``sum w_i / sum (w_i / p_i)`` over the subset."""
    idx = family.indices(subset)
    w, p = family.w[idx], family.p[idx]
    with np.errstate(divide="ignore"):
        return float(np.sum(w) / np.sum(w / p))


def hmp_adjusted(raw: float, L: float, alpha: float = 0.05, weight_share: float = 1.0) -> CombinedResult:
    """Landau-adjusted harmonic mean p-value (asymptotic in L, not exact).

    ``p = 1 - F_Landau(weight_share / raw)`` with the Landau law located at
    ``log L + 0.874``. ``weight_share`` is the subset's fraction of the total
    weight; 1 gives the headline test.
    """
    alpha = _alpha(alpha)
    if not (0.0 < raw <= 1.0):
        raise ValueError(f"harmonic mean p-value must lie in (0, 1], got {raw}")
    if L < 1:
        raise ValueError("L must be at least 1")
    if not (0.0 < weight_share <= 1.0):
        raise ValueError("weight share must lie in (0, 1]")
    p_adj = stable_sf(weight_share / raw, landau(L))
    return _result("hmp", raw, None, p_adj, alpha)


def hmp(family: PValueFamily, subset=None, alpha: float = 0.05) -> CombinedResult:
    """Harmonic mean p-value of a subset, Landau-adjusted against the full family."""
    alpha = _alpha(alpha)
    idx = family.indices(subset)
    raw = hmp_raw(family, idx)
    share = float(np.sum(family.w[idx]) / np.sum(family.w))
    if raw == 0.0:
        return _result("hmp", 0.0, None, 0.0, alpha, idx, family)
    res = hmp_adjusted(raw, family.size, alpha, share)
    return _result("hmp", raw, None, res.p_adjusted, alpha, idx, family)


# ---------------------------------------------------------------------------
# Headline-only tests


def cct(family: PValueFamily, alpha: float = 0.05) -> CombinedResult:
    """Cauchy combination test of the full family.

    ``T = sum w_i cot(pi p_i) / sum w_i`` and ``p = arccot(T) / pi``. Sets a
    warning when any p-value is at or near 1, where the statistic is
    unboundedly sensitive.
    """
    alpha = _alpha(alpha)
    p, w = family.p, family.w
    warnings = []
    if np.any(p >= CCT_NEAR_ONE):
        warnings.append("p-value at or near 1: Cauchy statistic is highly sensitive")
    if np.any(p == 0.0):
        t, pv = math.inf, 0.0
    else:
        t = float(np.sum(w * cauchy_transform(p)) / np.sum(w))
        pv = cauchy_sf(t)
    return _result("cct", t, pv, pv, alpha, warnings=warnings)


def regularized_gamma_q(a: float, x: float, rtol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Upper regularized incomplete gamma ``Q(a, x)``.

    Series for ``P`` when ``x < a + 1``, Lentz continued fraction for ``Q``
    otherwise.
    """
    if a <= 0.0:
        raise ValueError("shape must be positive")
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    log_pref = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = total = 1.0 / a
        ap = a
        for _ in range(max_iter):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * rtol * 1e-2:
                break
        else:
            raise ArithmeticError("incomplete gamma series did not converge")
        return max(0.0, 1.0 - total * math.exp(log_pref))
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < rtol * 1e-2:
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction did not converge")
    return math.exp(log_pref) * h


def chi2_sf(x: float, df: float) -> float:
    """Chi-square upper tail via :func:`regularized_gamma_q`."""
    return regularized_gamma_q(0.5 * df, 0.5 * x)


def fisher(family: PValueFamily, alpha: float = 0.05) -> CombinedResult:
    """Fisher's method, ``-2 sum log p_i`` against chi-square with 2L df. Equal weights only."""
    if not family.equal_weights:
        raise ValueError("Fisher's method is implemented for equal weights only")
    alpha = _alpha(alpha)
    with np.errstate(divide="ignore"):
        stat = float(-2.0 * np.sum(np.log(family.p)))
    pv = chi2_sf(stat, 2 * family.size)
    return _result("fisher", stat, pv, pv, alpha)


# ---------------------------------------------------------------------------
# Dispatch


def parse_method(name: str) -> tuple[str, float | None]:
    """Split a method tag like ``"sct:0.9"`` into ``("sct", 0.9)``.

    ``"sct(0.9)"`` is accepted too; ``"simes_multilevel"`` is an alias of ``"simes"``.
    """
    tag = name.strip().lower()
    lam = None
    if tag.startswith("sct"):
        rest = tag[3:].strip("():= ")
        if not rest:
            raise ValueError("sct needs a tail index, e.g. sct:0.9")
        try:
            lam = float(rest)
        except ValueError:
            raise ValueError(f"bad tail index in method {name!r}") from None
        if not (0.0 < lam < 1.0):
            raise ValueError(f"sct tail index must lie in (0, 1), got {lam}")
        tag = "sct"
    if tag == "simes_multilevel":
        tag = "simes"
    if tag not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return tag, lam


def combine(family: PValueFamily, method: str, alpha: float = 0.05, subset=None) -> CombinedResult:
    """Run ``method`` on ``subset`` (the full family when None)."""
    tag, lam = parse_method(method)
    if tag in ("cct", "fisher"):
        if subset is not None:
            raise UnsupportedMethodError(
                f"{tag} has no subset adjustment: it cannot control the strong-sense FWER"
            )
        return cct(family, alpha) if tag == "cct" else fisher(family, alpha)
    if tag == "lct":
        return lct(family, subset, alpha)
    if tag == "sct":
        return sct_extremal(family, subset, lam, alpha)
    if tag == "hmp":
        return hmp(family, subset, alpha)
    if tag == "bonferroni":
        return bonferroni(family, subset, alpha)
    return simes_multilevel(family, subset, alpha)
