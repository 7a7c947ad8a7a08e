"""Cost and scaling metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import InvalidArgument, MissingBaseline

# Reference cluster figures: minutes to target accuracy, and system price in
# thousands of dollars.
REFERENCE_TIME_MIN = 888
REFERENCE_PRICE_KUSD = 900

# Published (N, minutes) scaling rows and the speedups printed next to them.
REPORTED_TIMES = ((1, 4841), (2, 3039), (4, 1644), (8, 850), (16, 430), (32, 333))
REPORTED_SPEEDUPS = {1: 1.0, 2: 1.59, 4: 2.84, 8: 5.70, 16: 11.26, 32: 14.56}


def compute_pcr(time_minutes: float, price_kilodollars: float) -> float:
    """Price-and-convergence ratio: 1 / (time x price)."""
    if not (time_minutes > 0 and price_kilodollars > 0):
        raise InvalidArgument("time and price must both be positive")
    return 1.0 / (time_minutes * price_kilodollars)


def compute_scaling(times) -> list[tuple[int, float]]:
    """``[(N, T)] -> [(N, T(1)/T(N))]`` in input order."""
    times = [(int(n), float(t)) for n, t in times]
    if any(t <= 0 for _, t in times):
        raise InvalidArgument("times must be positive")
    base = [t for n, t in times if n == 1]
    if not base:
        raise MissingBaseline("scaling needs an N=1 entry")
    return [(n, base[0] / t) for n, t in times]


@dataclass(frozen=True)
class SpeedupCheck:
    n_workers: int
    computed: float
    printed: float

    @property
    def consistent(self) -> bool:
        return round(self.computed, 2) == round(self.printed, 2)


def check_printed_speedups(times=REPORTED_TIMES, printed=None) -> list[SpeedupCheck]:
    """Compare speedups recomputed from ``times`` against printed ones at 2 d.p."""
    printed = REPORTED_SPEEDUPS if printed is None else printed
    return [SpeedupCheck(n, s, printed[n]) for n, s in compute_scaling(times) if n in printed]


def inconsistent_rows(times=REPORTED_TIMES, printed=None) -> list[int]:
    return [c.n_workers for c in check_printed_speedups(times, printed) if not c.consistent]


def significant(x: float, digits: int = 3) -> float:
    """Round ``x`` to ``digits`` significant figures."""
    if x == 0:
        return 0.0
    return round(x, digits - 1 - math.floor(math.log10(abs(x))))
