"""Juror benefit and visibility-weighted reputation scoring.

The estimates of a juror's prosocial (``est_va``) and monetary (``est_vy``)
motivation are exponential moving averages over what the protocol can
observe: evaluator ratings and whether the juror took high-value cases.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from veracity_bond.jury import JurorProfile, RatingValue, rank_jurors

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReputationParams:
    alpha: float = 0.2
    inactivity_penalty: float = 0.1
    threshold: Optional[float] = 0.0
    monetary_scale: float = 100.0
    # bonds at or above this many minor units count as high-value cases
    high_bond_amount: int = 1000

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.inactivity_penalty < 0:
            raise ValueError(
                f"inactivity_penalty cannot be negative, got {self.inactivity_penalty}"
            )
        if self.monetary_scale <= 0:
            raise ValueError(
                f"monetary_scale must be positive, got {self.monetary_scale}"
            )

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "inactivity_penalty": self.inactivity_penalty,
            "threshold": self.threshold,
            "monetary_scale": self.monetary_scale,
            "high_bond_amount": self.high_bond_amount,
        }


@dataclass(frozen=True)
class JurorOutcome:
    """What one finalized contest revealed about one juror."""

    ratings: Sequence[RatingValue] = field(default_factory=tuple)
    voted: bool = True
    monetary: float = 0.0
    accepted_high_bond: bool = False


def juror_benefit(profile: JurorProfile, y: float) -> float:
    a = profile.participation
    cost = profile.cost_coefficient * a * a / 2
    return (profile.est_va + profile.est_vy * y) * a - cost


def optimal_participation(profile: JurorProfile, y: float) -> float:
    a_star = (profile.est_va + profile.est_vy * y) / profile.cost_coefficient
    return float(np.clip(a_star, 0.0, 1.0))


def reputation_score(profile: JurorProfile) -> float:
    return profile.visibility * (
        profile.weight_prosocial * profile.est_va
        - profile.weight_monetary * profile.est_vy
    )


def _ema(prior: float, observation: float, alpha: float) -> float:
    return (1 - alpha) * prior + alpha * observation


def update_reputation(
    profile: JurorProfile,
    outcome: JurorOutcome,
    params: ReputationParams = ReputationParams(),
) -> JurorProfile:
    """Return a new profile with estimates, participation and R updated.

    An inactive juror reveals nothing about their motives, so only the
    inactivity penalty touches their estimates.
    """
    ratings: List[RatingValue] = list(outcome.ratings)
    est_va, est_vy = profile.est_va, profile.est_vy

    if outcome.voted:
        if ratings:
            mean_rating = sum(r.value for r in ratings) / len(ratings)
            est_va = _ema(est_va, mean_rating / 2, params.alpha)
        monetary_signal = min(1.0, max(0.0, outcome.monetary) / params.monetary_scale)
        est_vy = _ema(
            est_vy,
            monetary_signal if outcome.accepted_high_bond else 0.0,
            params.alpha,
        )
        participation = _ema(profile.participation, 1.0, params.alpha)
    else:
        est_va = est_va - params.inactivity_penalty
        participation = _ema(profile.participation, 0.0, params.alpha)

    updated = replace(
        profile,
        est_va=est_va,
        est_vy=est_vy,
        participation=participation,
        rating_history=list(profile.rating_history) + ratings,
    )
    updated.reputation = reputation_score(updated)
    logger.debug(
        "Juror %s reputation %.6f -> %.6f",
        profile.juror_id,
        profile.reputation,
        updated.reputation,
    )
    return updated


def refresh_reputation(profiles: Sequence[JurorProfile]) -> List[JurorProfile]:
    """Recompute R on every profile in place and return them."""
    for profile in profiles:
        profile.reputation = reputation_score(profile)
    return list(profiles)


def eligible_jurors(
    profiles: Sequence[JurorProfile], params: ReputationParams = ReputationParams()
) -> List[JurorProfile]:
    return rank_jurors(refresh_reputation(profiles), params.threshold)
