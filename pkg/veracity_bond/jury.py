"""Jury selection, conflict-free evaluator assignment and rating aggregation."""
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from veracity_bond.utils import VeracityBondError, format_rational, parse_rational

logger = logging.getLogger(__name__)


class JurySelectionError(VeracityBondError):
    pass


class RatingError(VeracityBondError):
    pass


class RatingValue(Enum):
    NO = 0
    NEUTRAL = 1
    YES = 2

    @classmethod
    def from_string(cls, string: str):
        try:
            return cls[string.strip().upper()]
        except KeyError:
            raise RatingError(f"Unknown rating: {string}")


class RatingVerdict(Enum):
    BELOW_NEUTRAL = "below_neutral"
    AT_OR_ABOVE_NEUTRAL = "at_or_above_neutral"


class Vote(Enum):
    FOR_CREATOR = "for_creator"
    FOR_CHALLENGER = "for_challenger"
    NOT_YET_VOTED = "not_yet_voted"


@dataclass(frozen=True)
class Rating:
    value: RatingValue
    evaluator_id: str
    contest_id: str


@dataclass
class JuryConfig:
    pool_size: int
    panel_size: int = 21
    gamma: Fraction = Fraction(1, 10)
    bench_size: Optional[int] = None

    def __post_init__(self):
        if self.pool_size <= 0:
            raise JurySelectionError(
                f"pool_size must be positive, got {self.pool_size}"
            )
        if self.panel_size <= 0 or self.panel_size % 2 == 0:
            raise JurySelectionError(
                f"panel_size must be a positive odd integer, got {self.panel_size}"
            )
        if self.panel_size > self.pool_size:
            raise JurySelectionError(
                f"panel_size {self.panel_size} exceeds pool_size {self.pool_size}"
            )
        self.gamma = parse_rational(self.gamma)
        if not 0 < self.gamma < 1:
            raise JurySelectionError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.bench_size is None:
            self.bench_size = self.panel_size
        if self.bench_size < 0:
            raise JurySelectionError(
                f"bench_size cannot be negative: {self.bench_size}"
            )

    @property
    def majority(self) -> int:
        return (self.panel_size + 1) // 2

    def to_dict(self) -> dict:
        return {
            "pool_size": self.pool_size,
            "panel_size": self.panel_size,
            "gamma": format_rational(self.gamma),
            "bench_size": self.bench_size,
        }


@dataclass
class JurorProfile:
    """A juror's standing: visibility, motive weights and running estimates."""

    juror_id: str
    visibility: float = 1.0
    weight_prosocial: float = 1.0
    weight_monetary: float = 1.0
    est_va: float = 0.5
    est_vy: float = 0.5
    participation: float = 1.0
    cost_coefficient: float = 1.0
    reputation: float = 0.0
    rating_history: List[RatingValue] = field(default_factory=list)

    def __post_init__(self):
        if self.visibility < 0:
            raise ValueError(f"visibility must be non-negative, got {self.visibility}")
        if self.cost_coefficient <= 0:
            raise ValueError(
                f"cost_coefficient must be positive, got {self.cost_coefficient}"
            )
        if not 0 <= self.participation <= 1:
            raise ValueError(
                f"participation must be in [0, 1], got {self.participation}"
            )
        if not (np.isfinite(self.est_va) and np.isfinite(self.est_vy)):
            raise ValueError("reputation estimates must be finite")

    def to_dict(self) -> dict:
        return {
            "juror_id": self.juror_id,
            "visibility": self.visibility,
            "weight_prosocial": self.weight_prosocial,
            "weight_monetary": self.weight_monetary,
            "est_va": self.est_va,
            "est_vy": self.est_vy,
            "participation": self.participation,
            "cost_coefficient": self.cost_coefficient,
            "reputation": self.reputation,
            "rating_history": [r.name for r in self.rating_history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JurorProfile":
        d = dict(d)
        d["rating_history"] = [
            RatingValue.from_string(r) for r in d.get("rating_history", [])
        ]
        return cls(**d)


@dataclass
class JuryPanel:
    members: List[str]
    bench: List[str] = field(default_factory=list)
    votes: Dict[str, Vote] = field(default_factory=dict)
    assessments: Dict[str, str] = field(default_factory=dict)
    substitutions: List[Tuple[str, str, int]] = field(default_factory=list)
    inactive: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.members) % 2 == 0:
            raise JurySelectionError(
                f"panel must be odd-sized, got {len(self.members)}"
            )
        if len(set(self.members)) != len(self.members):
            raise JurySelectionError(f"panel members must be distinct: {self.members}")
        for juror_id in self.members:
            self.votes.setdefault(juror_id, Vote.NOT_YET_VOTED)

    @property
    def majority(self) -> int:
        return (len(self.members) + 1) // 2

    def has_voted(self, juror_id: str) -> bool:
        return self.votes.get(juror_id, Vote.NOT_YET_VOTED) != Vote.NOT_YET_VOTED

    def missing_voters(self) -> List[str]:
        return [j for j in self.members if not self.has_voted(j)]

    def tally(self) -> Dict[Vote, int]:
        counts = {Vote.FOR_CREATOR: 0, Vote.FOR_CHALLENGER: 0}
        for juror_id in self.members:
            vote = self.votes[juror_id]
            if vote in counts:
                counts[vote] += 1
        return counts

    def all_ids(self) -> Set[str]:
        """Everyone who has sat on this panel, including replaced jurors."""
        return set(self.members) | set(self.inactive)

    def to_dict(self) -> dict:
        return {
            "members": list(self.members),
            "bench": list(self.bench),
            "votes": {j: self.votes[j].value for j in self.members},
            "assessments": {j: self.assessments[j] for j in sorted(self.assessments)},
            "substitutions": [list(s) for s in self.substitutions],
            "inactive": list(self.inactive),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JuryPanel":
        return cls(
            members=list(d["members"]),
            bench=list(d.get("bench", [])),
            votes={j: Vote(v) for j, v in d.get("votes", {}).items()},
            assessments=dict(d.get("assessments", {})),
            substitutions=[tuple(s) for s in d.get("substitutions", [])],
            inactive=list(d.get("inactive", [])),
        )


def rank_jurors(
    profiles: Iterable[JurorProfile], threshold: Optional[float] = 0.0
) -> List[JurorProfile]:
    """Profiles with reputation >= threshold, best first, ties by juror_id.

    A threshold of None keeps everyone.
    """
    eligible = [
        p for p in profiles if threshold is None or p.reputation >= threshold
    ]
    return sorted(eligible, key=lambda p: (-p.reputation, p.juror_id))


def select_jury(
    pool: Sequence[JurorProfile],
    config: JuryConfig,
    exclusions: Iterable[str],
    rng: np.random.Generator,
    threshold: Optional[float] = 0.0,
) -> JuryPanel:
    """Draw a panel (and a bench of alternates) uniformly without replacement.

    Eligible jurors are those not excluded and, when ``threshold`` is not
    None, with reputation >= threshold. The panel is the first
    ``panel_size`` of one uniform draw; the bench takes up to
    ``bench_size`` of the remaining eligible jurors.
    """
    exclusions = set(exclusions)
    eligible = sorted(
        (
            p.juror_id
            for p in pool
            if p.juror_id not in exclusions
            and (threshold is None or p.reputation >= threshold)
        )
    )
    if len(set(eligible)) != len(eligible):
        raise JurySelectionError("juror pool contains duplicate ids")
    n = config.panel_size
    if len(eligible) < n:
        raise JurySelectionError(
            f"Only {len(eligible)} eligible jurors for a panel of {n}"
        )
    draw_size = min(len(eligible), n + config.bench_size)
    picks = rng.choice(len(eligible), size=draw_size, replace=False)
    chosen = [eligible[i] for i in picks]
    logger.debug("Selected panel %s with bench %s", chosen[:n], chosen[n:])
    return JuryPanel(members=chosen[:n], bench=chosen[n:])


def assign_evaluators(
    contest, viewer_pool: Sequence[str], count: int, rng: np.random.Generator
) -> List[str]:
    """Draw ``count`` viewers with no role in ``contest``.

    ``contest`` is anything exposing ``participant_ids()``.
    """
    conflicted = set(contest.participant_ids())
    eligible = sorted(set(v for v in viewer_pool if v not in conflicted))
    if count < 0:
        raise JurySelectionError(f"count cannot be negative, got {count}")
    if count > len(eligible):
        raise JurySelectionError(
            f"Requested {count} evaluators but only {len(eligible)} are conflict-free"
        )
    picks = rng.choice(len(eligible), size=count, replace=False)
    return [eligible[i] for i in picks]


def aggregate_rating(
    ratings: Sequence[Rating],
) -> Tuple[Fraction, RatingVerdict]:
    if not ratings:
        raise RatingError("Cannot aggregate an empty list of ratings")
    values = [r.value if isinstance(r, Rating) else r for r in ratings]
    mean = Fraction(sum(v.value for v in values), len(values))
    verdict = (
        RatingVerdict.AT_OR_ABOVE_NEUTRAL
        if mean >= RatingValue.NEUTRAL.value
        else RatingVerdict.BELOW_NEUTRAL
    )
    return mean, verdict
