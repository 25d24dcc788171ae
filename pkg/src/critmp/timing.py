"""Planner clocks.

Planners charge every collision-checked configuration and every
nearest-neighbour distance evaluation to a clock and compare ``elapsed()``
against their budget. ``WallClock`` measures real time. ``WorkClock`` converts
the counted work into nominal seconds, which makes budgets and reported solve
times reproducible bit for bit across machines and runs.
"""

from __future__ import annotations

import time

# Nominal cost of one configuration check, roughly a desk-scale measurement.
SECONDS_PER_CHECK = 2e-5
# One configuration-to-vertex distance in a brute-force neighbour scan. Large
# trees make these scans dominate, so they are charged too.
SECONDS_PER_DISTANCE = 5e-8


class WallClock:
    name = "wall"

    def __init__(self):
        self._t0 = time.perf_counter()

    def charge(self, checks: int) -> None:
        pass

    def charge_distances(self, count: int) -> None:
        pass

    def elapsed(self) -> float:
        return time.perf_counter() - self._t0


class WorkClock:
    name = "work"

    def __init__(self, seconds_per_check: float = SECONDS_PER_CHECK,
                 seconds_per_distance: float = SECONDS_PER_DISTANCE):
        self.seconds_per_check = seconds_per_check
        self.seconds_per_distance = seconds_per_distance
        self.checks = 0
        self.distance_evals = 0

    def charge(self, checks: int) -> None:
        self.checks += int(checks)

    def charge_distances(self, count: int) -> None:
        self.distance_evals += int(count)

    def elapsed(self) -> float:
        return self.checks * self.seconds_per_check + self.distance_evals * self.seconds_per_distance


def make_clock(kind: str = "wall"):
    if kind == "wall":
        return WallClock()
    if kind == "work":
        return WorkClock()
    raise ValueError(f"unknown clock {kind!r}")
