"""Closed testing shortcut for group hypotheses.

For LCT, extremal SCT, Bonferroni, multilevel Simes and the HMP, the adjusted
p-value of a group already assumes the worst case for hypotheses outside it,
so each group is tested on its own at the familywise level without
enumerating supersets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .combiners import (
    MULTILEVEL_METHODS,
    PValueFamily,
    UnsupportedMethodError,
    combine,
    parse_method,
)

__all__ = [
    "Decision",
    "MultilevelReport",
    "MAX_EXHAUSTIVE_L",
    "default_subsets",
    "all_subsets",
    "closed_test",
    "smallest_rejected_groups",
]

MAX_EXHAUSTIVE_L = 20


@dataclass(frozen=True)
class Decision:
    subset: tuple[int, ...]
    method: str
    p_adjusted: float
    reject: bool


@dataclass(frozen=True)
class MultilevelReport:
    """Decisions in the order the subsets were given."""

    alpha: float
    method: str
    decisions: tuple[Decision, ...]
    rejected_singletons: tuple[int, ...]
    full_set_reject: bool
    notes: tuple[str, ...] = field(default=())

    @property
    def rejected(self) -> list[tuple[int, ...]]:
        return [d.subset for d in self.decisions if d.reject]

    def as_dict(self, ids: Sequence[str] | None = None) -> dict:
        def name(s):
            return [ids[i] for i in s] if ids is not None else list(s)

        return {
            "alpha": self.alpha,
            "method": self.method,
            "decisions": [
                {"subset": name(d.subset), "p_adjusted": d.p_adjusted, "reject": d.reject}
                for d in self.decisions
            ],
            "rejected_singletons": name(self.rejected_singletons),
            "full_set_reject": self.full_set_reject,
            "notes": list(self.notes),
        }


def _check_method(method: str) -> str:
    tag, lam = parse_method(method)
    if tag not in MULTILEVEL_METHODS:
        raise UnsupportedMethodError(
            f"{tag} cannot be used for multilevel testing: the worst-case complement "
            "p-value of 1 does not contribute a finite, fixed amount to its statistic"
        )
    return tag if lam is None else f"sct:{lam:g}"


def default_subsets(L: int) -> list[tuple[int, ...]]:
    """All singletons followed by the full set."""
    out = [(i,) for i in range(L)]
    if L > 1:
        out.append(tuple(range(L)))
    return out


def all_subsets(L: int) -> list[tuple[int, ...]]:
    """Every non-empty subset, by size then lexicographically; refused above 20 tests."""
    if L > MAX_EXHAUSTIVE_L:
        raise ValueError(f"refusing to enumerate 2^{L} - 1 subsets (limit L = {MAX_EXHAUSTIVE_L})")
    return [c for k in range(1, L + 1) for c in itertools.combinations(range(L), k)]


def closed_test(
    family: PValueFamily,
    subsets: Iterable[Iterable[int]] | str | None = None,
    method: str = "lct",
    alpha: float = 0.05,
) -> MultilevelReport:
    """Test every subset at level ``alpha`` with the shortcut.

    ``subsets`` may be an iterable of index collections, ``None`` for the
    singletons plus the full set, or ``"all"`` for exhaustive enumeration.
    """
    tag = _check_method(method)
    if subsets is None:
        subsets = default_subsets(family.size)
    elif isinstance(subsets, str):
        if subsets != "all":
            raise ValueError(f"unknown subset family {subsets!r}")
        subsets = all_subsets(family.size)
    # validate everything before computing anything
    resolved = [tuple(int(i) for i in family.indices(s)) for s in subsets]

    decisions = []
    full = tuple(range(family.size))
    full_reject = None
    for s in resolved:
        r = combine(family, tag, alpha, None if s == full else s)
        decisions.append(Decision(s, tag, r.p_value, r.reject))
        if s == full:
            full_reject = r.reject
    if full_reject is None:
        full_reject = combine(family, tag, alpha).reject
    singles = tuple(sorted({d.subset[0] for d in decisions if d.reject and len(d.subset) == 1}))
    notes = ("hmp adjustment is asymptotic in L",) if tag == "hmp" else ()
    return MultilevelReport(float(alpha), tag, tuple(decisions), singles, bool(full_reject), notes)


def smallest_rejected_groups(family: PValueFamily, method: str = "lct", alpha: float = 0.05) -> list[tuple[int, ...]]:
    """Small rejected groups by sorted-prefix growth (a heuristic, not an exact search).

    Returns every rejected singleton; if there are none, the shortest prefix
    of the p-values in ascending order (ties by original index) whose group
    is rejected, or an empty list.
    """
    tag = _check_method(method)
    singles = [(i,) for i in range(family.size) if combine(family, tag, alpha, (i,)).reject]
    if singles:
        return singles
    order = np.argsort(family.p, kind="stable")
    for k in range(2, family.size + 1):
        prefix = tuple(sorted(int(i) for i in order[:k]))
        subset = None if k == family.size else prefix
        if combine(family, tag, alpha, subset).reject:
            return [prefix]
    return []
