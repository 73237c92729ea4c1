"""FIFO multi-server queue simulation and M/M/c closed forms."""
import heapq
import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd

from veracity_bond.utils import VeracityBondError

logger = logging.getLogger(__name__)


class QueueSimulationError(VeracityBondError):
    pass


class ServiceKind(Enum):
    DETERMINISTIC = "deterministic"
    EXPONENTIAL = "exponential"
    LOGNORMAL = "lognormal"

    @classmethod
    def from_string(cls, string: str):
        try:
            return cls(string.strip().lower())
        except ValueError:
            raise QueueSimulationError(f"Unknown service distribution: {string}")


@dataclass(frozen=True)
class ServiceDistribution:
    mean: float
    kind: ServiceKind = ServiceKind.DETERMINISTIC
    # shape of the underlying normal, lognormal only
    sigma: float = 0.5

    def __post_init__(self):
        if not self.mean > 0:
            raise QueueSimulationError(
                f"mean service time must be positive, got {self.mean}"
            )
        if self.sigma < 0:
            raise QueueSimulationError(f"sigma cannot be negative, got {self.sigma}")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == ServiceKind.DETERMINISTIC:
            return np.full(size, float(self.mean))
        if self.kind == ServiceKind.EXPONENTIAL:
            return rng.exponential(self.mean, size)
        mu = math.log(self.mean) - self.sigma ** 2 / 2
        return rng.lognormal(mu, self.sigma, size)


@dataclass
class QueueStats:
    """Window statistics of one simulated run.

    ``mean_in_system`` (L) is the time average over the measurement window
    and ``mean_sojourn`` (W) the mean time in system of jobs arriving in it.
    """

    mean_in_system: float
    mean_sojourn: float
    mean_wait: float
    arrival_rate: float
    throughput: float
    processed: int
    slope: float
    trajectory: pd.DataFrame

    @property
    def little_gap(self) -> float:
        """|L - lambda W| / max(L, 1)."""
        gap = abs(self.mean_in_system - self.arrival_rate * self.mean_sojourn)
        return gap / max(self.mean_in_system, 1.0)

    def to_dict(self) -> dict:
        return {
            "mean_in_system": self.mean_in_system,
            "mean_sojourn": self.mean_sojourn,
            "mean_wait": self.mean_wait,
            "arrival_rate": self.arrival_rate,
            "throughput": self.throughput,
            "processed": self.processed,
            "slope": self.slope,
            "little_gap": self.little_gap,
        }


def _poisson_arrivals(
    rate: float, horizon: float, batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    count = rng.poisson(rate * horizon)
    times = np.sort(rng.uniform(0.0, horizon, count))
    if batch_size > 1:
        times = np.repeat(times, batch_size)
    return times


def _fifo_starts(
    arrivals: np.ndarray, service: np.ndarray, servers: int
) -> np.ndarray:
    free_at = [0.0] * servers
    starts = np.empty_like(arrivals)
    for i, (arrival, duration) in enumerate(zip(arrivals.tolist(), service.tolist())):
        start = max(arrival, heapq.heappop(free_at))
        starts[i] = start
        heapq.heappush(free_at, start + duration)
    return starts


def mgc_simulate(
    arrival_rate: float,
    service: ServiceDistribution,
    servers: int,
    horizon: float,
    rng: np.random.Generator,
    warmup: float = 0.0,
    batch_size: int = 1,
    samples: int = 200,
) -> QueueStats:
    """Simulate a FIFO queue with Poisson (batch) arrivals and ``servers`` servers.

    Arrivals happen at ``arrival_rate`` per unit time, each bringing
    ``batch_size`` jobs. Statistics cover ``[warmup, horizon]``.
    """
    if not horizon > 0:
        raise QueueSimulationError(f"horizon must be positive, got {horizon}")
    if not 0 <= warmup < horizon:
        raise QueueSimulationError(f"warmup must be in [0, horizon), got {warmup}")
    if servers < 1:
        raise QueueSimulationError(f"need at least one server, got {servers}")
    if arrival_rate < 0:
        raise QueueSimulationError(
            f"arrival rate cannot be negative, got {arrival_rate}"
        )
    if batch_size < 1:
        raise QueueSimulationError(f"batch_size must be at least 1, got {batch_size}")

    grid = np.linspace(warmup, horizon, samples)
    arrivals = _poisson_arrivals(float(arrival_rate), horizon, batch_size, rng)
    if arrivals.size == 0:
        trajectory = pd.DataFrame({"time": grid, "in_system": np.zeros(samples)})
        return QueueStats(0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0, trajectory)

    durations = service.sample(rng, arrivals.size)
    starts = _fifo_starts(arrivals, durations, servers)
    departures = starts + durations

    window = horizon - warmup
    overlap = np.clip(
        np.minimum(departures, horizon) - np.maximum(arrivals, warmup), 0.0, None
    )
    mean_in_system = float(overlap.sum() / window)

    in_window = (arrivals >= warmup) & (arrivals <= horizon)
    arrived = int(in_window.sum())
    mean_sojourn = float((departures - arrivals)[in_window].mean()) if arrived else 0.0
    mean_wait = float((starts - arrivals)[in_window].mean()) if arrived else 0.0
    processed = int(((departures >= warmup) & (departures <= horizon)).sum())

    sorted_departures = np.sort(departures)
    in_system = np.searchsorted(arrivals, grid, side="right") - np.searchsorted(
        sorted_departures, grid, side="right"
    )
    slope = float(np.polyfit(grid, in_system, 1)[0]) if samples > 1 else 0.0
    trajectory = pd.DataFrame({"time": grid, "in_system": in_system})

    stats = QueueStats(
        mean_in_system=mean_in_system,
        mean_sojourn=mean_sojourn,
        mean_wait=mean_wait,
        arrival_rate=arrived / window,
        throughput=processed / window,
        processed=processed,
        slope=slope,
        trajectory=trajectory,
    )
    logger.debug(
        "Simulated %d jobs on %d servers: %s", arrivals.size, servers, stats.to_dict()
    )
    return stats


def erlang_b(servers: int, offered_load: float) -> float:
    blocking = 1.0
    for k in range(1, servers + 1):
        blocking = offered_load * blocking / (k + offered_load * blocking)
    return blocking


def erlang_c(servers: int, offered_load: float) -> float:
    """Probability an arrival waits in M/M/c, offered load a = lambda / mu."""
    if servers < 1:
        raise QueueSimulationError(f"need at least one server, got {servers}")
    if offered_load < 0:
        raise QueueSimulationError(
            f"offered load cannot be negative, got {offered_load}"
        )
    if offered_load >= servers:
        return 1.0
    blocking = erlang_b(servers, offered_load)
    return servers * blocking / (servers - offered_load * (1 - blocking))


def mmc_mean_in_system(arrival_rate: float, service_rate: float, servers: int) -> float:
    """Mean number in an M/M/c system, infinite when rho >= 1."""
    offered_load = arrival_rate / service_rate
    rho = offered_load / servers
    if rho >= 1:
        return math.inf
    waiting = erlang_c(servers, offered_load) * rho / (1 - rho)
    return waiting + offered_load
