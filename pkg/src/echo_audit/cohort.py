"""Page-view ratio computation and Following/Ignoring cohort assignment.

A page view counts as clicked when the user clicked at least one item
displayed in it. A user's PVR is clicked page views over total page
views. Users at or below the low threshold form the Ignoring group,
users at or above the high threshold form the Following group, and the
middle is kept as unassigned so reports can state coverage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError
from .logmodel import PageView


@dataclass(frozen=True, slots=True)
class PvrEntry:
    pvr: float
    total_pvs: int
    clicked_pvs: int


@dataclass(frozen=True, slots=True)
class PvrTable:
    """Per-user page-view ratios plus the count of users dropped for
    having no page views."""

    entries: dict[str, PvrEntry]
    dropped_users: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, user_id: str) -> PvrEntry:
        return self.entries[user_id]


@dataclass(frozen=True, slots=True)
class CohortAssignment:
    following: frozenset[str]
    ignoring: frozenset[str]
    unassigned: frozenset[str]
    thresholds: tuple[float, float]

    def group_of(self, user_id: str) -> str:
        if user_id in self.following:
            return "following"
        if user_id in self.ignoring:
            return "ignoring"
        return "unassigned"


def compute_pvr(page_views: Mapping[str, Iterable[PageView]]) -> PvrTable:
    """Compute each user's clicked-PV ratio from grouped page views.

    Users present with zero page views are excluded and counted in
    ``dropped_users`` rather than raising.
    """
    entries: dict[str, PvrEntry] = {}
    dropped = 0
    for user_id, pvs in page_views.items():
        total = 0
        clicked = 0
        for pv in pvs:
            total += 1
            if pv.clicked:
                clicked += 1
        if total == 0:
            dropped += 1
            continue
        entries[user_id] = PvrEntry(clicked / total, total, clicked)
    return PvrTable(entries, dropped)


def split_cohorts(
    pvr_table: PvrTable,
    lo: float = 0.2,
    hi: float = 0.8,
    percentile: bool = False,
) -> CohortAssignment:
    """Split users into Ignoring (pvr <= lo), Following (pvr >= hi), and
    unassigned (strictly between).

    With ``percentile=True`` the thresholds are population quantiles of
    the PVR distribution instead of absolute values; the derived value
    thresholds are recorded in the result.
    """
    if not 0.0 <= lo < hi <= 1.0:
        raise ConfigError(f"thresholds must satisfy 0 <= lo < hi <= 1, got lo={lo} hi={hi}")
    lo_val, hi_val = lo, hi
    if percentile:
        if not pvr_table.entries:
            raise ConfigError("percentile split needs at least one user")
        pvrs = np.fromiter((e.pvr for e in pvr_table.entries.values()), dtype=float)
        lo_val = float(np.quantile(pvrs, lo))
        hi_val = float(np.quantile(pvrs, hi))
    following = set()
    ignoring = set()
    unassigned = set()
    for user_id, entry in pvr_table.entries.items():
        if entry.pvr <= lo_val:
            ignoring.add(user_id)
        elif entry.pvr >= hi_val:
            following.add(user_id)
        else:
            unassigned.add(user_id)
    return CohortAssignment(
        following=frozenset(following),
        ignoring=frozenset(ignoring),
        unassigned=frozenset(unassigned),
        thresholds=(lo_val, hi_val),
    )
