"""Distribution primitives for Stable combination tests.

Analytic Normal, Levy and Cauchy functions, plus numerical Stable laws in
Nolan's ``S(lam, beta, gamma, delta; pm)`` notation. The numerical CDF uses
Nolan's single-integral representation with adaptive quadrature; both tails
are integrated directly so that small upper-tail probabilities keep their
relative precision.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "StableParams",
    "NumericalError",
    "LEVY",
    "CAUCHY",
    "landau",
    "check_probability",
    "normal_cdf",
    "normal_sf",
    "normal_quantile",
    "levy_cdf",
    "levy_sf",
    "levy_transform",
    "levy_transform_approx",
    "cauchy_transform",
    "cauchy_cdf",
    "cauchy_sf",
    "stable_cdf",
    "stable_sf",
    "stable_quantile",
    "stable_isf",
    "stable_sample",
    "self_similarity_params",
]

PI = math.pi
HALF_PI = 0.5 * math.pi

# quadrature and root-finding targets
CDF_ABS_TOL = 1e-10
QUANTILE_REL_TOL = 1e-12
_QUAD_OPTS = dict(epsabs=0.0, epsrel=1e-13, limit=400)

# location offset of the Landau limit of summed inverse p-values
LANDAU_OFFSET = 0.874


class NumericalError(ArithmeticError):
    """Quadrature or root-finding failed to reach its tolerance.

    ``estimate`` carries the achieved error estimate (or bracket) when one
    is available.
    """

    def __init__(self, message: str, estimate: object = None):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class StableParams:
    """Stable law ``S(lam, beta, gamma, delta; pm)`` (Nolan's notation).

    ``lam`` is the tail index; ``pm`` selects parameterization 0 or 1.
    """

    lam: float
    beta: float = 0.0
    gamma: float = 1.0
    delta: float = 0.0
    pm: int = 1

    def __post_init__(self):
        if not (0.0 < self.lam <= 2.0):
            raise ValueError(f"tail index must lie in (0, 2], got {self.lam}")
        if not (-1.0 <= self.beta <= 1.0):
            raise ValueError(f"skewness must lie in [-1, 1], got {self.beta}")
        if not (self.gamma > 0.0 and math.isfinite(self.gamma)):
            raise ValueError(f"scale must be positive, got {self.gamma}")
        if not math.isfinite(self.delta):
            raise ValueError(f"location must be finite, got {self.delta}")
        if self.pm not in (0, 1):
            raise ValueError(f"parameterization flag must be 0 or 1, got {self.pm}")

    @property
    def is_extremal_heavy(self) -> bool:
        """True for very heavy-tailed extremal laws (``0 < lam < 1``, ``beta = 1``)."""
        return 0.0 < self.lam < 1.0 and self.beta == 1.0

    def support_lower(self) -> float:
        """Lower end of the support (``-inf`` unless totally skewed right with lam < 1)."""
        if self.lam < 1.0 and self.beta == 1.0:
            return self._delta1
        return -math.inf

    @property
    def _delta1(self) -> float:
        # location in the pm=1 parameterization
        if self.pm == 1:
            return self.delta
        if self.lam == 1.0:
            return self.delta - 2.0 / PI * self.beta * self.gamma * math.log(self.gamma)
        return self.delta - self.beta * self.gamma * math.tan(HALF_PI * self.lam)

    @property
    def _delta0(self) -> float:
        if self.pm == 0:
            return self.delta
        if self.lam == 1.0:
            return self.delta + 2.0 / PI * self.beta * self.gamma * math.log(self.gamma)
        return self.delta + self.beta * self.gamma * math.tan(HALF_PI * self.lam)


LEVY = StableParams(0.5, 1.0, 1.0, 0.0, 1)
CAUCHY = StableParams(1.0, 0.0, 1.0, 0.0, 1)


def landau(L: float) -> StableParams:
    """Landau law ``S(1, 1, pi/2, log L + 0.874; 0)`` for the adjusted HMP."""
    return StableParams(1.0, 1.0, HALF_PI, math.log(L) + LANDAU_OFFSET, 0)


def check_probability(p, name: str = "p") -> np.ndarray:
    """Return ``p`` as a float array, raising ValueError outside [0, 1]."""
    arr = np.asarray(p, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def _out(arr):
    arr = np.asarray(arr, dtype=float)
    return float(arr) if arr.ndim == 0 else arr


# ---------------------------------------------------------------------------
# Analytic distributions


def normal_cdf(x):
    """Standard Normal CDF."""
    return _out(special.ndtr(np.asarray(x, dtype=float)))


def normal_sf(x):
    """Standard Normal upper tail ``1 - Phi(x)`` without cancellation."""
    return _out(special.ndtr(-np.asarray(x, dtype=float)))


def normal_quantile(p):
    """Inverse of :func:`normal_cdf`; ``p = 0`` and ``p = 1`` map to -inf and +inf."""
    return _out(special.ndtri(check_probability(p)))


def levy_cdf(x):
    """CDF of the standard Levy law, ``2 * (1 - Phi(1 / sqrt(x)))``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.erfc(1.0 / np.sqrt(2.0 * x))
    return _out(np.where(x > 0.0, out, 0.0))


def levy_sf(x):
    """Upper tail ``2 * Phi(1 / sqrt(x)) - 1`` of the standard Levy law."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = special.erf(1.0 / np.sqrt(2.0 * x))
    return _out(np.where(x > 0.0, out, 1.0))


def levy_transform(p):
    """Upper-tail Levy quantile ``[Phi^-1((1 + p) / 2)]^-2``.

    Evaluated as ``1 / (2 * erfinv(p)**2)``, which stays exact for p far
    below machine epsilon. ``p = 1`` gives exactly 0 and ``p = 0`` gives inf.
    """
    p = check_probability(p)
    e = special.erfinv(p)
    with np.errstate(divide="ignore", over="ignore"):
        out = 0.5 / (e * e)
    return _out(out)


def levy_transform_approx(p):
    """Small-p approximation ``(2/pi) p^-2`` of :func:`levy_transform`.

    Only an approximation; the combiners never use it.
    """
    p = check_probability(p)
    if np.any(p == 0.0):
        raise ValueError("levy_transform_approx is undefined at p = 0")
    return _out(2.0 / PI / (p * p))


def cauchy_transform(p):
    """``cot(pi * p)`` with full precision near both endpoints.

    ``p = 0`` gives +inf and ``p = 1`` gives -inf.
    """
    p = check_probability(p)
    q = np.minimum(p, 1.0 - p)  # exact for p >= 0.5
    with np.errstate(divide="ignore"):
        mag = np.where(q <= 0.25, 1.0 / np.tan(PI * q), np.tan(PI * (0.5 - q)))
    return _out(np.where(p <= 0.5, mag, -mag))


def cauchy_cdf(x):
    """Standard Cauchy CDF, ``1/2 + arctan(x)/pi``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        lower = np.where(x < 0.0, np.arctan(-1.0 / x) / PI, 0.5 + np.arctan(x) / PI)
    return _out(np.where(np.isneginf(x), 0.0, lower))


def cauchy_sf(x):
    """Standard Cauchy upper tail ``arccot(x)/pi`` on the (0, pi) branch."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        upper = np.where(x > 0.0, np.arctan(1.0 / x) / PI, 0.5 - np.arctan(x) / PI)
    return _out(np.where(np.isposinf(x), 0.0, upper))


# ---------------------------------------------------------------------------
# Numerical Stable CDF
#
# Both tails are integrals of exp(-h) and 1 - exp(-h) over an angular range
# of length R. The integrand switches between 0 and 1 where h = 1, and far in
# the tails that switch happens in a thin layer next to one endpoint. Each
# half of the range is therefore integrated in s = log(distance to its own
# endpoint); logh takes both distances (d from the lower end, e from the
# upper end) so the trigonometric terms keep full precision at both ends.

_LOG_FLOOR = 745.0
# log h levels bracketing the switch from 1 to 0 (exp(-h) ~ 1 - 1e-13 down to ~1e-13);
# cutting there pins the layer however steep it is
_LOGH_LEVELS = (-30.0, -10.0, -3.0, -1.0, 0.0, 1.0, 2.0, 3.4)
_FLOAT_MAX = sys.float_info.max
_LOG_MAX = math.log(_FLOAT_MAX)


def _quad(f, lo, hi, points):
    with np.errstate(all="ignore"):
        val, err, *rest = integrate.quad(f, lo, hi, points=points, full_output=1, **_QUAD_OPTS)
    if len(rest) >= 2 and err > CDF_ABS_TOL and err > 1e-8 * abs(val):
        raise NumericalError(f"stable CDF quadrature did not converge: {rest[1]}", err)
    return val


def _angular_integrals(logh, R: float) -> tuple[float, float]:
    """Return ``(int exp(-h), int -expm1(-h))`` over the angular range.

    ``logh(d, e)`` is monotone along the range, with ``d + e = R``.
    """
    half = 0.5 * R
    s_hi = math.log(half)
    s_lo = s_hi - _LOG_FLOOR
    pieces = (
        lambda s: logh(math.exp(s), R - math.exp(s)),
        lambda s: logh(R - math.exp(s), math.exp(s)),
    )
    i_neg = i_m1 = 0.0
    for g in pieces:
        # explicit sub-intervals: Gauss-Kronrod sees only zeros on a long flat
        # stretch and can misjudge a steep layer around h = 1
        cuts = {s_lo, s_hi, max(s_lo, s_hi - 40.0)}
        g_lo, g_hi = g(s_lo), g(s_hi)
        roots = [
            optimize.brentq(lambda s, g=g, v=v: g(s) - v, s_lo, s_hi, xtol=1e-12)
            for v in _LOGH_LEVELS
            if min(g_lo, g_hi) < v < max(g_lo, g_hi)
        ]
        if roots:
            cuts.update(roots)
            cuts.update((max(s_lo, min(roots) - 40.0), max(s_lo, max(roots) - 40.0)))
        cuts = sorted(cuts)

        def e_neg(s, g=g):
            lh = g(s)
            return 0.0 if lh > 700.0 else math.exp(-math.exp(lh) + s)

        def e_m1(s, g=g):
            lh = g(s)
            d = math.exp(s)
            return d if lh > 700.0 else -math.expm1(-math.exp(lh)) * d

        for lo, hi in zip(cuts[:-1], cuts[1:]):
            i_neg += _quad(e_neg, lo, hi, None)
            i_m1 += _quad(e_m1, lo, hi, None)
    return i_neg, i_m1


def _tails_ne1(u: float, a: float, b: float) -> tuple[float, float]:
    """(cdf, sf) of the standard law at ``u = z0 - zeta``, lam != 1."""
    if u < 0.0:
        c, s = _tails_ne1(-u, a, -b)
        return s, c
    if abs(b) == 1.0:
        # exact values; the generic formula is off by an ulp
        th0 = b * HALF_PI if a < 1.0 else b * (HALF_PI - PI / a)
    else:
        th0 = math.atan(b * math.tan(HALF_PI * a)) / a
    c1 = (HALF_PI - th0) / PI  # mass below zeta
    if u == 0.0:
        return c1, 1.0 - c1
    if math.isinf(u):
        return 1.0, 0.0
    R = HALF_PI + th0
    if R <= 0.0:
        # totally skewed left with lam < 1: nothing above zeta
        return 1.0, 0.0
    ex = a / (a - 1.0)
    base = ex * math.log(u) + math.log(math.cos(a * th0)) / (a - 1.0)

    c_top = a * th0 + (a - 1.0) * HALF_PI

    def cos_r(d, e):
        # cos(a th0 + (a - 1) theta), using exact forms where it vanishes at an endpoint
        if d <= e:
            if th0 == HALF_PI:
                return math.sin((1.0 - a) * d)
            return math.cos(th0 + (a - 1.0) * d)
        if a > 1.0 and b == -1.0:
            return math.sin((a - 1.0) * e)
        return math.cos(c_top - (a - 1.0) * e)

    # theta = -theta0 + d = pi/2 - e
    def logh(d, e):
        # cos(theta) also vanishes at the lower end when th0 = pi/2
        ct = math.sin(d) if (d <= e and th0 == HALF_PI) else math.sin(e) if e <= d else math.cos(d - th0)
        st = math.sin(a * d)
        cr = cos_r(d, e)
        if ct <= 0.0 or st <= 0.0 or cr <= 0.0:
            # endpoint limits: h -> inf where sin(a d) or cos(theta) vanish with the
            # dominant sign of ex, h -> 0 otherwise
            if a < 1.0:
                return math.inf if e < d else -math.inf
            return -math.inf if e < d else math.inf
        return base + ex * (math.log(ct) - math.log(st)) + math.log(cr) - math.log(ct)

    i_neg, i_m1 = _angular_integrals(logh, R)
    if a < 1.0:
        # F = c1 + (1/pi) int exp(-h),  1 - F = (1/pi) int (1 - exp(-h))
        return c1 + i_neg / PI, i_m1 / PI
    # lam > 1: 1 - F = (1/pi) int exp(-h),  F = c1 + (1/pi) int (1 - exp(-h))
    return c1 + i_m1 / PI, i_neg / PI


def _tails_eq1(z: float, b: float) -> tuple[float, float]:
    """(cdf, sf) of the standard ``S(1, b; 0)`` law."""
    if b == 0.0:
        return float(cauchy_cdf(z)), float(cauchy_sf(z))
    if b < 0.0:
        c, s = _tails_eq1(-z, -b)
        return s, c
    if math.isinf(z):
        return (1.0, 0.0) if z > 0 else (0.0, 1.0)
    shift = -HALF_PI * z / b

    # theta = -pi/2 + d = pi/2 - e
    def logh(d, e):
        if e < d:
            ct = math.sin(e)
            tan_t = 1.0 / math.tan(e)
        else:
            ct = math.sin(d)
            tan_t = -1.0 / math.tan(d)
        r = HALF_PI * (1.0 - b) + b * d
        if ct <= 0.0 or r <= 0.0:
            return math.inf if e < d else -math.inf
        return shift + math.log(2.0 / PI * r) - math.log(ct) + r * tan_t / b

    # F = (1/pi) int exp(-h),  1 - F = (1/pi) int (1 - exp(-h))
    i_neg, i_m1 = _angular_integrals(logh, PI)
    return i_neg / PI, i_m1 / PI


def _tails(x: float, params: StableParams) -> tuple[float, float]:
    a, b, g = params.lam, params.beta, params.gamma
    if math.isnan(x):
        raise ValueError("x is NaN")
    if a == 2.0:
        # S(2, b, g, d) is Normal with variance 2 g^2
        z = (x - params.delta) / (g * math.sqrt(2.0))
        return float(special.ndtr(z)), float(special.ndtr(-z))
    if a == 1.0:
        return _tails_eq1((x - params._delta0) / g, b)
    # distance from zeta in standardized units equals the pm=1 standardization
    return _tails_ne1((x - params._delta1) / g, a, b)


def _vectorize(scalar_fn, x, params):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return scalar_fn(float(x), params)
    return np.array([scalar_fn(float(v), params) for v in x.ravel()]).reshape(x.shape)


def stable_cdf(x, params: StableParams):
    """Numerical CDF of ``S(lam, beta, gamma, delta; pm)``.

    Raises:
        NumericalError: if the quadrature misses its tolerance.
    """
    return _vectorize(lambda v, prm: _tails(v, prm)[0], x, params)


def stable_sf(x, params: StableParams):
    """Upper tail ``1 - F(x)``, integrated directly for relative accuracy in the tail."""
    return _vectorize(lambda v, prm: _tails(v, prm)[1], x, params)


def _tail_scale(params: StableParams) -> float:
    # F-bar(x) ~ C (1 + beta) gamma^lam x^-lam for large x
    a = params.lam
    if a == 2.0:
        return 0.0
    return math.gamma(a) * math.sin(HALF_PI * a) / PI * (1.0 + params.beta) * params.gamma**a


def _bracket(f, start: float, step: float, max_step: float) -> tuple[float, float]:
    """Expand ``[lo, hi]`` geometrically around ``start`` until ``f(lo) <= 0 <= f(hi)``.

    ``f`` must be non-decreasing.
    """
    lo = hi = start
    flo = fhi = f(start)
    while not (flo <= 0.0 <= fhi):
        if step > max_step:
            raise NumericalError("stable quantile bracket expansion failed", (lo, hi))
        if flo > 0.0:
            lo -= step
            flo = f(lo)
        if fhi < 0.0:
            hi += step
            fhi = f(hi)
        step *= 2.0
    return lo, hi


def _solve_tail(q: float, params: StableParams, upper: bool) -> float:
    """Solve ``sf(x) = q`` (upper) or ``cdf(x) = q`` (lower) for ``q <= 0.5``."""
    idx = 1 if upper else 0
    logq = math.log(q)
    # orient the residual so it is non-decreasing in the search variable
    sign = -1.0 if upper else 1.0
    edge = params.support_lower()

    if math.isfinite(edge):
        # positive support: search in log(x - edge) so tiny and huge quantiles stay relative
        def f(y):
            val = _tails(edge + math.exp(y), params)[idx]
            return sign * ((math.log(val) if val > 0.0 else -800.0) - logq)

        if f(_LOG_MAX) < 0.0:
            return math.inf
        start = math.log(params.gamma)
        c = _tail_scale(params)
        if upper and c > 0.0:
            start = min(math.log(c / q) / params.lam, _LOG_MAX)
        lo, hi = _bracket(f, start, 1.0, 1e4)
        if lo == hi:
            return edge + math.exp(lo)
        y = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=QUANTILE_REL_TOL, maxiter=500)
        return edge + math.exp(y)

    def f(x):
        val = _tails(x, params)[idx]
        return sign * ((math.log(val) if val > 0.0 else -800.0) - logq)

    if f(_FLOAT_MAX) < 0.0:
        return math.inf
    if f(-_FLOAT_MAX) > 0.0:
        return -math.inf
    lo, hi = _bracket(f, params._delta0, params.gamma, 1e300)
    if lo == hi:
        return lo
    return optimize.brentq(f, lo, hi, xtol=1e-300, rtol=QUANTILE_REL_TOL, maxiter=500)


def _isf_scalar(q: float, params: StableParams) -> float:
    if q == 0.0:
        return math.inf
    if q == 1.0:
        return params.support_lower()
    if q > 0.5:
        return _quantile_scalar(1.0 - q, params)
    return _solve_tail(q, params, upper=True)


def _quantile_scalar(p: float, params: StableParams) -> float:
    if p == 0.0:
        return params.support_lower()
    if p == 1.0:
        return math.inf
    if p > 0.5:
        return _isf_scalar(1.0 - p, params)
    return _solve_tail(p, params, upper=False)


def stable_quantile(p, params: StableParams):
    """Inverse CDF by geometric bracket expansion and Brent refinement."""
    p = check_probability(p)
    return _vectorize(_quantile_scalar, p, params)


def stable_isf(q, params: StableParams):
    """Upper-tail quantile ``F^-1(1 - q)``, accurate for tiny ``q``.

    For very heavy-tailed extremal laws ``q = 1`` maps exactly to the lower
    support edge (0 for the standard law).
    """
    q = check_probability(q, "q")
    return _vectorize(_isf_scalar, q, params)


# ---------------------------------------------------------------------------
# Sampling and self-similarity


def stable_sample(params: StableParams, rng: np.random.Generator, size=None):
    """Draw from ``params`` by the Chambers-Mallows-Stuck construction.

    The standard ``pm=1`` draw is shifted into the requested
    parameterization. Returns a float when ``size`` is None.
    """
    a, b, g = params.lam, params.beta, params.gamma
    v = rng.uniform(-HALF_PI, HALF_PI, size=size)
    w = rng.standard_exponential(size=size)
    if a == 1.0:
        r = HALF_PI + b * v
        x = (r * np.tan(v) - b * np.log(HALF_PI * w * np.cos(v) / r)) * (2.0 / PI)
        out = g * x + (2.0 / PI) * b * g * math.log(g) + params._delta1
    else:
        t = b * math.tan(HALF_PI * a)
        shift = math.atan(t) / a
        scale = (1.0 + t * t) ** (0.5 / a)
        x = (
            scale
            * np.sin(a * (v + shift))
            / np.cos(v) ** (1.0 / a)
            * (np.cos(v - a * (v + shift)) / w) ** ((1.0 - a) / a)
        )
        out = g * x + params._delta1
    return float(out) if size is None else out


def self_similarity_params(weights: Sequence[float], params: StableParams) -> tuple[float, float]:
    """Normalizer ``W`` and location correction ``Delta`` for a weighted Stable sum.

    For iid ``X_i`` from ``params``, ``sum(w_i X_i) / W + Delta`` has the law of
    a single ``X_i``.
    """
    w = np.asarray(weights, dtype=float)
    if w.size == 0 or np.any(~(w > 0.0)):
        raise ValueError("weights must be positive")
    a = params.lam
    W = float(np.sum(w**a) ** (1.0 / a))
    W1 = float(np.sum(w))
    delta = 0.0 if params.delta == 0.0 else params.delta * (1.0 - W1 / W)
    if a == 1.0 and params.beta != 0.0:
        delta += 2.0 / PI * params.beta * params.gamma * (float(np.sum(w * np.log(w))) / W - math.log(W))
    return W, delta
