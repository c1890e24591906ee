"""Worst-case dependence bound for the LCT and the Bonferroni-dominance classifier."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .stable import (
    NumericalError,
    StableParams,
    check_probability,
    levy_sf,
    levy_transform,
    stable_sf,
)

__all__ = [
    "InflationResult",
    "ClassifierResult",
    "levy_tail_integral",
    "worst_case_inflation",
    "concavity_profile",
    "dominance_classifier",
]


@dataclass(frozen=True)
class InflationResult:
    """Upper bound on the LCT's rejection probability under arbitrary dependence."""

    alpha: float
    L: float
    bound: float
    factor: float
    t_opt: float = math.nan

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "L": self.L, "bound": self.bound, "factor": self.factor}


def levy_tail_integral(a: float, b: float) -> float:
    """``int_a^b (1 - F_Levy(x)) dx`` for ``0 <= a <= b`` by quadrature in log x."""
    if b <= a:
        return 0.0
    if a <= 0.0:
        # the tail is ~1 near 0; integrate the first unit on the linear scale
        head = min(b, 1.0)
        val = integrate.quad(lambda x: levy_sf(x), 0.0, head, epsabs=0.0, epsrel=1e-12, limit=200)[0]
        return val + levy_tail_integral(head, b) if b > head else val
    val, err = integrate.quad(
        lambda y: levy_sf(math.exp(y)) * math.exp(y),
        math.log(a),
        math.log(b),
        epsabs=0.0,
        epsrel=1e-12,
        limit=200,
    )
    return val


def worst_case_inflation(alpha: float, L: float, grid_n: int = 400) -> InflationResult:
    """Dual bound on ``P(sum_i Y_i >= s)`` for L dependent standard Levy summands.

    ``s = L**2 * levy_transform(alpha)`` is the LCT rejection threshold with
    equal weights. The bound is

        min(1, inf_{0 < t < s/L} L * int_t^{s-(L-1)t} Fbar(x) dx / (s - L t)),

    minimized over ``log t`` by a grid scan and a bounded Brent refinement.
    """
    alpha = float(check_probability(alpha, "alpha"))
    if not (0.0 < alpha < 0.5):
        raise ValueError("alpha must lie in (0, 0.5)")
    L = float(L)
    if not L >= 2.0:
        raise ValueError("L must be at least 2")
    s = L * L * levy_transform(alpha)
    top = math.log(s / L)

    def objective(log_t: float) -> float:
        t = math.exp(log_t)
        gap = s - L * t
        if gap <= 0.0:
            return math.inf
        return L * levy_tail_integral(t, t + gap) / gap

    # the minimizer sits near t ~ s / L**2; scan well either side of it
    grid = np.linspace(top - math.log(L) - 40.0, top - 1e-9, grid_n)
    vals = np.array([objective(g) for g in grid])
    if not np.any(np.isfinite(vals)):
        raise NumericalError("dual bound objective is not finite on the search grid", (grid[0], grid[-1]))
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_n - 1)]
    res = optimize.minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    if not res.success:
        raise NumericalError(f"dual bound minimization failed: {res.message}", (lo, hi))
    best, log_t = (res.fun, res.x) if res.fun <= vals[i] else (vals[i], grid[i])
    bound = min(1.0, float(best))
    return InflationResult(alpha, L, bound, bound / alpha, math.exp(log_t))


# ---------------------------------------------------------------------------
# Bonferroni dominance


@dataclass(frozen=True)
class ClassifierResult:
    lam: float
    dominant: bool
    max_second_derivative: float
    argmax: float

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "dominant": self.dominant,
            "max_second_derivative": self.max_second_derivative,
            "argmax": self.argmax,
        }


def concavity_profile(lam: float, xs, rel_step: float = 1e-2) -> np.ndarray:
    """Second derivative of ``h(x) = Fbar(x**(-1/lam))`` for ``S(lam, 1, 1, 0; 1)``.

    Central differences at steps ``x * rel_step`` and half that, combined by
    Richardson extrapolation.
    """
    params = StableParams(lam, 1.0, 1.0, 0.0, 1)

    def h(x):
        return stable_sf(x ** (-1.0 / lam), params)

    out = np.empty(len(xs))
    for k, x in enumerate(xs):
        d = rel_step * x
        h0 = h(x)
        coarse = (h(x + d) - 2.0 * h0 + h(x - d)) / (d * d)
        fine = (h(x + 0.5 * d) - 2.0 * h0 + h(x - 0.5 * d)) / (0.25 * d * d)
        out[k] = (4.0 * fine - coarse) / 3.0
    return out


def dominance_classifier(
    lam: float, x_max: float = 8.0, grid_n: int = 120, tol: float = 1e-6, full: bool = False
):
    """Whether the extremal Stable test with tail index ``lam`` dominates Bonferroni.

    True iff ``h'' <= tol`` on a geometric grid over ``[x_max / 800, x_max]``,
    i.e. ``h`` is concave there. Pass ``full=True`` for a :class:`ClassifierResult`.
    """
    if not (0.0 < lam < 1.0):
        raise ValueError("lam must lie in (0, 1)")
    xs = np.geomspace(x_max / 800.0, x_max, grid_n)
    d2 = concavity_profile(lam, xs)
    i = int(np.argmax(d2))
    res = ClassifierResult(lam, bool(d2[i] <= tol), float(d2[i]), float(xs[i]))
    return res if full else res.dominant
