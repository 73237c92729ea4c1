"""Juror capacity planning.

The smallest juror pool that keeps the dispute backlog finite is
``ceil(lambda * n * h / a)`` for disputes arriving at ``lambda`` per hour,
each needing ``n`` jurors for ``h`` hours, with every juror supplying ``a``
hours. Simulation checks the threshold by modelling each juror as a server
and each dispute as a batch of ``n`` juror tasks.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, List, Optional, Union

import numpy as np
import pandas as pd

from veracity_bond.queueing import (
    QueueStats,
    ServiceDistribution,
    ServiceKind,
    mgc_simulate,
)
from veracity_bond.utils import VeracityBondError, humanize_count, parse_rational

logger = logging.getLogger(__name__)

HOURS_PER_DAY = 24

# relative tolerances used to call a run stable
SLOPE_TOLERANCE = 0.05
LITTLE_TOLERANCE = 0.05


class CapacityQueryError(VeracityBondError):
    pass


class ServerModel(Enum):
    JUROR = "juror"
    PANEL = "panel"


class StabilityVerdict(Enum):
    STABLE = "stable"
    STABLE_MARGINAL = "stable_marginal"
    DIVERGENT = "divergent"


def _ceil(value: Fraction) -> int:
    return -((-value.numerator) // value.denominator)


@dataclass(frozen=True)
class CapacityQuery:
    arrival_rate: Fraction
    panel_size: int
    hours_per_case: Fraction
    available_hours: Fraction

    def __post_init__(self):
        for name in ("arrival_rate", "hours_per_case", "available_hours"):
            try:
                object.__setattr__(self, name, parse_rational(getattr(self, name)))
            except ValueError as e:
                raise CapacityQueryError(str(e))
        if self.arrival_rate < 0:
            raise CapacityQueryError(
                f"arrival rate cannot be negative, got {self.arrival_rate}"
            )
        if self.hours_per_case <= 0:
            raise CapacityQueryError(
                f"hours per case must be positive, got {self.hours_per_case}"
            )
        if self.available_hours <= 0:
            raise CapacityQueryError(
                f"available juror hours must be positive, got {self.available_hours}"
            )
        n = self.panel_size
        if isinstance(n, bool) or not isinstance(n, int) or n <= 0 or n % 2 == 0:
            raise CapacityQueryError(
                f"panel size must be a positive odd integer, got {n}"
            )

    @property
    def demand(self) -> Fraction:
        """Juror-hours requested per hour."""
        return self.arrival_rate * self.panel_size * self.hours_per_case

    @property
    def service_time(self) -> Fraction:
        """Hours one juror needs to finish one case."""
        return self.hours_per_case / self.available_hours


@dataclass(frozen=True)
class CapacityResult:
    query: CapacityQuery
    n_min: int
    pool_size: int
    servers: int
    utilization: Union[Fraction, float]

    @property
    def stable(self) -> bool:
        return self.utilization <= 1

    def to_dict(self) -> dict:
        return {
            "arrival_rate": float(self.query.arrival_rate),
            "panel_size": self.query.panel_size,
            "hours_per_case": float(self.query.hours_per_case),
            "available_hours": float(self.query.available_hours),
            "n_min": self.n_min,
            "pool_size": self.pool_size,
            "servers": self.servers,
            "utilization": float(self.utilization),
            "stable": self.stable,
        }


def _servers(q: CapacityQuery, pool_size: int, model: ServerModel) -> int:
    if model == ServerModel.PANEL:
        return pool_size // q.panel_size
    return pool_size


def _utilization(
    q: CapacityQuery, pool_size: int, model: ServerModel
) -> Union[Fraction, float]:
    servers = _servers(q, pool_size, model)
    if q.arrival_rate == 0:
        return Fraction(0)
    if servers == 0:
        return math.inf
    if model == ServerModel.PANEL:
        return q.arrival_rate * q.service_time / servers
    return q.demand / (servers * q.available_hours)


def min_jurors(
    q: CapacityQuery,
    pool_size: Optional[int] = None,
    model: ServerModel = ServerModel.JUROR,
) -> CapacityResult:
    n_min = _ceil(q.demand / q.available_hours)
    pool_size = n_min if pool_size is None else pool_size
    if pool_size < 0:
        raise CapacityQueryError(f"pool size cannot be negative, got {pool_size}")
    return CapacityResult(
        query=q,
        n_min=n_min,
        pool_size=pool_size,
        servers=_servers(q, pool_size, model),
        utilization=_utilization(q, pool_size, model),
    )


def dispute_rate_from_volume(posts_per_day, challenge_ratio) -> Fraction:
    """Disputes per hour from daily post volume and the share challenged."""
    posts_per_day = parse_rational(posts_per_day)
    ratio = parse_rational(challenge_ratio)
    if posts_per_day < 0:
        raise CapacityQueryError(
            f"posts per day cannot be negative, got {posts_per_day}"
        )
    if not 0 <= ratio <= 1:
        raise CapacityQueryError(f"challenge ratio must be in [0, 1], got {ratio}")
    return posts_per_day * ratio / HOURS_PER_DAY


@dataclass(frozen=True)
class PlatformRow:
    name: str
    posts_per_day: Fraction
    challenge_ratio: Fraction

    def __post_init__(self):
        object.__setattr__(self, "posts_per_day", parse_rational(self.posts_per_day))
        ratio = parse_rational(self.challenge_ratio)
        object.__setattr__(self, "challenge_ratio", ratio)

    @property
    def arrival_rate(self) -> Fraction:
        return dispute_rate_from_volume(self.posts_per_day, self.challenge_ratio)


@dataclass(frozen=True)
class StaffingConfig:
    name: str
    panel_size: int
    hours_per_case: Fraction
    available_hours: Fraction

    def __post_init__(self):
        object.__setattr__(self, "hours_per_case", parse_rational(self.hours_per_case))
        hours = parse_rational(self.available_hours)
        object.__setattr__(self, "available_hours", hours)
        self.query(Fraction(0))

    def query(self, arrival_rate: Fraction) -> CapacityQuery:
        return CapacityQuery(
            arrival_rate=arrival_rate,
            panel_size=self.panel_size,
            hours_per_case=self.hours_per_case,
            available_hours=self.available_hours,
        )


# The challenge ratios are back-solved from the published dispute rates.
DEFAULT_PLATFORMS = [
    PlatformRow("Small Community", 100_000, "1/1000"),
    PlatformRow("Reddit", 1_300_000, "2/1000"),
    PlatformRow("Twitter/X", 500_000_000, "5/1000"),
    PlatformRow("Facebook", 4_000_000_000, "3/1000"),
]

DEFAULT_STAFFING = [
    StaffingConfig("Quick", 21, "1/2", 2),
    StaffingConfig("Standard", 31, 1, 4),
    StaffingConfig("Thorough", 35, 2, 8),
]

CAPACITY_COLUMNS = [
    "platform",
    "posts_per_day",
    "posts_display",
    "challenge_ratio",
    "arrival_rate",
    "arrival_display",
    "config",
    "panel_size",
    "hours_per_case",
    "available_hours",
    "n_min",
    "n_min_display",
]


def capacity_table(
    rows: Iterable[PlatformRow] = None, configs: Iterable[StaffingConfig] = None
) -> pd.DataFrame:
    """One row per (platform, staffing config) with the minimum pool size."""
    rows = DEFAULT_PLATFORMS if rows is None else list(rows)
    configs = DEFAULT_STAFFING if configs is None else list(configs)
    records = []
    for row in rows:
        rate = row.arrival_rate
        for config in configs:
            result = min_jurors(config.query(rate))
            records.append(
                {
                    "platform": row.name,
                    "posts_per_day": int(row.posts_per_day),
                    "posts_display": humanize_count(row.posts_per_day),
                    "challenge_ratio": float(row.challenge_ratio),
                    "arrival_rate": float(rate),
                    "arrival_display": humanize_count(rate),
                    "config": config.name,
                    "panel_size": config.panel_size,
                    "hours_per_case": float(config.hours_per_case),
                    "available_hours": float(config.available_hours),
                    "n_min": result.n_min,
                    "n_min_display": humanize_count(result.n_min),
                }
            )
    return pd.DataFrame(records, columns=CAPACITY_COLUMNS)


def capacity_table_layout(df: pd.DataFrame) -> pd.DataFrame:
    """Platform rows with one display column per staffing config."""
    if df.empty:
        return pd.DataFrame(columns=["platform", "posts_per_day", "lambda"])
    configs = list(dict.fromkeys(df["config"]))
    wide = df.pivot(index="platform", columns="config", values="n_min_display")
    wide = wide[configs]
    platforms = list(dict.fromkeys(df["platform"]))
    firsts = df.drop_duplicates("platform").set_index("platform")
    out = pd.DataFrame(
        {
            "posts_per_day": firsts.loc[platforms, "posts_display"],
            "ratio": [
                f"{r * 100:g}%" for r in firsts.loc[platforms, "challenge_ratio"]
            ],
            "lambda": firsts.loc[platforms, "arrival_display"],
        },
        index=platforms,
    )
    out = out.join(wide.loc[platforms])
    out.index.name = "platform"
    return out.reset_index()


def check_capacity_golden(golden: pd.DataFrame, computed: pd.DataFrame) -> pd.DataFrame:
    """Golden rows whose exact N_min or display form the table does not match."""
    merged = golden.merge(
        computed[["platform", "config", "n_min", "n_min_display"]],
        on=["platform", "config"],
        how="left",
        suffixes=("_golden", ""),
    )
    bad = (merged["n_min"] != merged["n_min_golden"]) | (
        merged["n_min_display"] != merged["n_min_display_golden"]
    )
    return merged.loc[bad].reset_index(drop=True)


@dataclass
class StabilityReport:
    verdict: StabilityVerdict
    pool_size: int
    servers: int
    utilization: float
    backlog_slope: float
    expected_slope: float
    little_gap: float
    stats: QueueStats = field(repr=False)

    @property
    def slope_error(self) -> float:
        """Relative gap between the fitted and the fluid-limit slope."""
        if self.expected_slope == 0:
            return math.inf if self.backlog_slope else 0.0
        return abs(self.backlog_slope - self.expected_slope) / self.expected_slope

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "pool_size": self.pool_size,
            "servers": self.servers,
            "utilization": self.utilization,
            "backlog_slope": self.backlog_slope,
            "expected_slope": self.expected_slope,
            "little_gap": self.little_gap,
            **{f"sim_{k}": v for k, v in self.stats.to_dict().items()},
        }


def verify_stability(
    q: CapacityQuery,
    pool_size: int,
    rng: np.random.Generator,
    service_kind: ServiceKind = ServiceKind.DETERMINISTIC,
    model: ServerModel = ServerModel.JUROR,
    target_arrivals: int = 300_000,
    horizon: float = None,
    warmup_fraction: float = 0.1,
) -> StabilityReport:
    """Simulate ``pool_size`` jurors against the query's demand.

    Backlog is counted in juror-hours so a divergent run grows at
    ``lambda*n*h - N*a`` per hour.
    """
    if pool_size < 1:
        raise CapacityQueryError(f"pool size must be positive, got {pool_size}")
    result = min_jurors(q, pool_size, model)
    if result.servers < 1:
        raise CapacityQueryError(
            f"pool of {pool_size} cannot seat a panel of {q.panel_size}"
        )
    rate = float(q.arrival_rate)
    if model == ServerModel.PANEL:
        batch = 1
        work_per_job = float(q.hours_per_case * q.panel_size)
    else:
        batch = q.panel_size
        work_per_job = float(q.hours_per_case)
    service = ServiceDistribution(mean=float(q.service_time), kind=service_kind)

    if horizon is None:
        if rate > 0:
            horizon = target_arrivals / (rate * batch)
        else:
            horizon = 100 * float(q.service_time)
        horizon = max(horizon, 50 * float(q.service_time))
    stats = mgc_simulate(
        rate,
        service,
        result.servers,
        horizon,
        rng,
        warmup=warmup_fraction * horizon,
        batch_size=batch,
    )
    demand = float(q.demand)
    seats = q.panel_size if model == ServerModel.PANEL else 1
    supply = float(result.servers * q.available_hours * seats)
    expected_slope = max(0.0, demand - supply)
    backlog_slope = stats.slope * work_per_job

    bounded = backlog_slope <= SLOPE_TOLERANCE * max(demand, 1e-12)
    if bounded and stats.little_gap <= LITTLE_TOLERANCE:
        if result.utilization == 1:
            verdict = StabilityVerdict.STABLE_MARGINAL
            warnings.warn(
                f"Pool of {pool_size} runs at utilization exactly 1; "
                "the backlog is finite only in the limit"
            )
        else:
            verdict = StabilityVerdict.STABLE
    else:
        verdict = StabilityVerdict.DIVERGENT

    report = StabilityReport(
        verdict=verdict,
        pool_size=pool_size,
        servers=result.servers,
        utilization=float(result.utilization),
        backlog_slope=backlog_slope,
        expected_slope=expected_slope,
        little_gap=stats.little_gap,
        stats=stats,
    )
    logger.info(
        "Pool %d: %s (rho=%.4f, slope %.2f vs %.2f)",
        pool_size,
        verdict.value,
        report.utilization,
        backlog_slope,
        expected_slope,
    )
    return report


def sharpness_pools(n_min: int, shortfall: Fraction = Fraction(4, 5)) -> List[int]:
    """The pools that bracket the threshold: N_min and ceil(0.8 N_min)."""
    return [n_min, _ceil(shortfall * n_min)]


def parse_platform(value: str) -> PlatformRow:
    """Parse ``NAME:posts_per_day:ratio``."""
    parts = value.rsplit(":", 2)
    if len(parts) != 3:
        raise CapacityQueryError(f"Expected NAME:posts_per_day:ratio, got {value!r}")
    try:
        return PlatformRow(parts[0], parts[1], parts[2])
    except ValueError as e:
        raise CapacityQueryError(str(e))


def parse_staffing(value: str) -> StaffingConfig:
    """Parse ``NAME:n:h:a``."""
    parts = value.rsplit(":", 3)
    if len(parts) != 4:
        raise CapacityQueryError(f"Expected NAME:n:h:a, got {value!r}")
    try:
        return StaffingConfig(parts[0], int(parts[1]), parts[2], parts[3])
    except ValueError as e:
        raise CapacityQueryError(str(e))
