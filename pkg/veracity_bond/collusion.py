"""Probability that a colluding bloc captures a jury majority.

The seated colluder count is hypergeometric for a finite pool and binomial
in the limit of an infinite one. Finite-pool tails count captured panels
exactly in integers. Binomial tails are summed in log space from the
smallest term up so tiny probabilities keep their significant digits.
"""
import logging
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.special import gammaln

from veracity_bond.utils import VeracityBondError, parse_rational

logger = logging.getLogger(__name__)

INFINITE_POOL = math.inf

# values below this are reported as this floor and flagged
COMPUTATION_FLOOR = 1e-15
# values below this print as "<1e-10"
DISPLAY_FLOOR = 1e-10


class CollusionQueryError(VeracityBondError):
    pass


class RiskMode(Enum):
    EXACT = "exact"
    HOEFFDING = "hoeffding"

    @classmethod
    def from_string(cls, string: str):
        try:
            return cls(string.strip().lower())
        except ValueError:
            raise CollusionQueryError(f"Unknown risk mode: {string}")


def parse_pool_size(value: Union[int, float, str, None]) -> Union[int, float]:
    if value is None:
        return INFINITE_POOL
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinite", "infinity"):
            return INFINITE_POOL
        value = int(value)
    if isinstance(value, float):
        if math.isinf(value):
            return INFINITE_POOL
        if not value.is_integer():
            raise CollusionQueryError(f"pool size must be an integer, got {value}")
        value = int(value)
    if value <= 0:
        raise CollusionQueryError(f"pool size must be positive, got {value}")
    return value


@dataclass(frozen=True)
class CollusionQuery:
    """A panel of ``panel_size`` drawn from ``pool_size`` holding ``colluders``.

    For an infinite pool only ``ratio`` is meaningful. For a finite pool a
    ratio is turned into ``floor(ratio * pool_size)`` colluders.
    """

    panel_size: int
    pool_size: Union[int, float] = INFINITE_POOL
    colluders: Optional[int] = None
    ratio: Optional[Fraction] = None

    def __post_init__(self):
        n = self.panel_size
        if isinstance(n, bool) or not isinstance(n, int) or n <= 0 or n % 2 == 0:
            raise CollusionQueryError(
                f"panel size must be a positive odd integer, got {n}"
            )
        object.__setattr__(self, "pool_size", parse_pool_size(self.pool_size))
        if self.ratio is not None:
            object.__setattr__(self, "ratio", parse_rational(self.ratio))
            if not 0 <= self.ratio <= 1:
                raise CollusionQueryError(f"ratio must be in [0, 1], got {self.ratio}")

        if self.is_infinite:
            if self.ratio is None:
                raise CollusionQueryError("An infinite pool needs a colluder ratio")
            return

        N = self.pool_size
        if n > N:
            raise CollusionQueryError(f"panel size {n} exceeds pool size {N}")
        if self.colluders is None:
            if self.ratio is None:
                raise CollusionQueryError("Give either colluders or ratio")
            object.__setattr__(self, "colluders", math.floor(self.ratio * N))
        k = self.colluders
        if not 0 <= k <= N:
            raise CollusionQueryError(f"colluders must be in [0, {N}], got {k}")

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.pool_size)

    @property
    def threshold(self) -> int:
        return (self.panel_size + 1) // 2

    @property
    def p(self) -> float:
        if self.is_infinite:
            return float(self.ratio)
        return self.colluders / self.pool_size


@dataclass(frozen=True)
class CollusionResult:
    query: CollusionQuery
    exact_tail: float
    hoeffding: Optional[float]
    omega: Optional[float]
    clamped: bool

    @property
    def reported_tail(self) -> float:
        """The tail with the computation floor applied."""
        return COMPUTATION_FLOOR if self.clamped else self.exact_tail

    def to_dict(self) -> dict:
        q = self.query
        return {
            "pool_size": "inf" if q.is_infinite else q.pool_size,
            "panel_size": q.panel_size,
            "ratio": float(q.ratio) if q.ratio is not None else q.p,
            "colluders": q.colluders,
            "exact_tail": self.exact_tail,
            "hoeffding": self.hoeffding,
            "omega": self.omega,
            "clamped": self.clamped,
            "display": format_probability(self.exact_tail),
        }


def _log_choose(a, b):
    return gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)


def _sum_small_first(log_terms: np.ndarray) -> float:
    return math.fsum(np.sort(np.exp(log_terms)))


def hypergeometric_tail(N: int, k: int, n: int, t: int) -> float:
    """P(X >= t) for X ~ Hypergeometric(N, k, n).

    Counts captured panels exactly in integers, so the only rounding is the
    final (correctly rounded) division.
    """
    lo = max(0, n - (N - k))
    hi = min(n, k)
    if t > hi:
        return 0.0
    if t <= lo:
        return 1.0
    captured = sum(math.comb(k, x) * math.comb(N - k, n - x) for x in range(t, hi + 1))
    return min(1.0, captured / math.comb(N, n))


def binomial_tail(n: int, p: float, t: int) -> float:
    """P(X >= t) for X ~ Binomial(n, p)."""
    if t > n or p <= 0:
        return 0.0
    if t <= 0 or p >= 1:
        return 1.0
    x = np.arange(t, n + 1, dtype=float)
    log_pmf = _log_choose(n, x) + x * math.log(p) + (n - x) * math.log1p(-p)
    return min(1.0, _sum_small_first(log_pmf))


def hoeffding_bound(n: int, p: float) -> float:
    p = float(p)
    if not 0 <= p < 0.5:
        raise CollusionQueryError(f"Hoeffding bound needs 0 <= p < 1/2, got {p}")
    return math.exp(-2 * n * (0.5 - p) ** 2)


def hoeffding_exponent(p: float) -> float:
    """The decay rate Omega = 2(1/2 - p)^2 in exp(-Omega n)."""
    return 2 * (0.5 - float(p)) ** 2


def exact_collusion_probability(q: CollusionQuery) -> CollusionResult:
    t = q.threshold
    if q.is_infinite:
        tail = binomial_tail(q.panel_size, float(q.ratio), t)
    else:
        tail = hypergeometric_tail(q.pool_size, q.colluders, q.panel_size, t)

    p = q.p
    if p < 0.5:
        bound = hoeffding_bound(q.panel_size, p)
        omega = hoeffding_exponent(p)
    else:
        bound = omega = None
    clamped = 0 < tail < COMPUTATION_FLOOR
    if clamped:
        logger.debug("Clamped collusion tail %.3e for %s", tail, q)
    return CollusionResult(
        query=q, exact_tail=tail, hoeffding=bound, omega=omega, clamped=clamped
    )


def format_probability(value: float, floor: float = DISPLAY_FLOOR) -> str:
    if value < floor:
        return f"<{floor:.0e}"
    return f"{value:.2e}"


def _ratio_label(ratio) -> str:
    return f"{float(ratio) * 100:g}%"


def collusion_table(
    pool_sizes: Iterable[Union[int, float, str]],
    ratios: Iterable[Union[str, float, Fraction]],
    panel_sizes: Iterable[int],
) -> pd.DataFrame:
    """Every (pool, ratio, panel) combination as one row."""
    rows = []
    ratios = [parse_rational(r) for r in ratios]
    for ratio in ratios:
        if ratio >= Fraction(1, 2):
            raise CollusionQueryError(
                f"ratio {ratio} is not below 1/2, so no bound applies"
            )
    for pool_size in pool_sizes:
        for n in panel_sizes:
            for ratio in ratios:
                q = CollusionQuery(panel_size=n, pool_size=pool_size, ratio=ratio)
                rows.append(exact_collusion_probability(q).to_dict())
    columns = [
        "pool_size",
        "panel_size",
        "ratio",
        "colluders",
        "exact_tail",
        "hoeffding",
        "omega",
        "clamped",
        "display",
    ]
    return pd.DataFrame(rows, columns=columns)


def collusion_table_layout(df: pd.DataFrame) -> pd.DataFrame:
    """Pivot a single-pool table to panel rows and ratio columns of display text."""
    if df["pool_size"].nunique() > 1:
        raise CollusionQueryError("Lay out one pool size at a time")
    wide = df.pivot(index="panel_size", columns="ratio", values="display")
    wide.columns = [_ratio_label(c) for c in wide.columns]
    wide.index.name = "n"
    return wide


def collusion_curve(
    pool_sizes: Iterable[int],
    ratios: Iterable[Union[str, float, Fraction]],
    panel_sizes: Iterable[int],
) -> pd.DataFrame:
    """Tail probability against the selection ratio n / N, skipping n > N."""
    rows = []
    ratios = [parse_rational(r) for r in ratios]
    for pool_size in pool_sizes:
        for ratio in ratios:
            for n in panel_sizes:
                if n > pool_size:
                    continue
                q = CollusionQuery(panel_size=n, pool_size=pool_size, ratio=ratio)
                result = exact_collusion_probability(q)
                rows.append(
                    {
                        "pool_size": pool_size,
                        "ratio": float(ratio),
                        "panel_size": n,
                        "selection_ratio": n / pool_size,
                        "exact_tail": result.exact_tail,
                    }
                )
    return pd.DataFrame(
        rows,
        columns=["pool_size", "ratio", "panel_size", "selection_ratio", "exact_tail"],
    )


def min_panel_for_risk(
    p: Union[float, str, Fraction],
    epsilon: float,
    mode: Union[RiskMode, str] = RiskMode.EXACT,
    pool_size: Union[int, float, str] = INFINITE_POOL,
    max_panel: int = 100_001,
) -> int:
    """Smallest odd panel whose collusion risk is at most ``epsilon``."""
    if isinstance(mode, str):
        mode = RiskMode.from_string(mode)
    ratio = parse_rational(p)
    if not 0 <= ratio < Fraction(1, 2):
        raise CollusionQueryError(f"p must be in [0, 1/2), got {ratio}")
    if not 0 < epsilon <= 1:
        raise CollusionQueryError(f"epsilon must be in (0, 1], got {epsilon}")
    pool_size = parse_pool_size(pool_size)
    limit = min(max_panel, pool_size)

    n = 1
    while n <= limit:
        if mode == RiskMode.HOEFFDING:
            risk = hoeffding_bound(n, float(ratio))
        else:
            q = CollusionQuery(panel_size=n, pool_size=pool_size, ratio=ratio)
            risk = exact_collusion_probability(q).exact_tail
        if risk <= epsilon:
            return n
        n += 2
    raise CollusionQueryError(
        f"No odd panel up to {int(limit)} keeps the risk at p={ratio} below {epsilon}"
    )


def matches_golden(computed: float, golden: str) -> bool:
    """Within one unit of the third significant digit, or under a "<" sentinel."""
    golden = golden.strip()
    if golden.startswith("<"):
        return computed < float(golden[1:])
    expected = float(golden)
    if expected == 0:
        return computed == 0
    unit = 10 ** (math.floor(math.log10(abs(expected))) - 2)
    return abs(computed - expected) <= unit * (1 + 1e-9)


def check_collusion_golden(golden: pd.DataFrame, pool_size) -> pd.DataFrame:
    """Return the golden rows the computed table disagrees with."""
    mismatches: List[dict] = []
    for row in golden.itertuples(index=False):
        q = CollusionQuery(
            panel_size=int(row.panel_size), pool_size=pool_size, ratio=str(row.ratio)
        )
        computed = exact_collusion_probability(q).exact_tail
        if not matches_golden(computed, str(row.probability)):
            mismatches.append(
                {
                    "panel_size": row.panel_size,
                    "ratio": row.ratio,
                    "golden": row.probability,
                    "computed": format_probability(computed, floor=0),
                }
            )
    if mismatches:
        warnings.warn(f"{len(mismatches)} collusion cells differ from the golden table")
    return pd.DataFrame(
        mismatches, columns=["panel_size", "ratio", "golden", "computed"]
    )
