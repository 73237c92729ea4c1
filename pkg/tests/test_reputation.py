import logging
from dataclasses import replace

import numpy as np
import pytest

from veracity_bond.jury import JurorProfile, RatingValue
from veracity_bond.reputation import (
    JurorOutcome,
    ReputationParams,
    eligible_jurors,
    juror_benefit,
    optimal_participation,
    reputation_score,
    update_reputation,
)

logging.getLogger("veracity_bond").setLevel(logging.DEBUG)

participation_cases = [
    # est_va, est_vy, cost, payout
    (0.2, 0.1, 1.0, 1.0),
    (0.5, 0.5, 1.0, 2.0),
    (0.1, 0.0, 4.0, 0.0),
    (0.0, 0.3, 0.5, 1.5),
    (-0.4, 0.1, 1.0, 1.0),
]


@pytest.mark.parametrize("est_va,est_vy,cost,y", participation_cases)
def test_optimal_participation_maximises_benefit(est_va, est_vy, cost, y):
    profile = JurorProfile("j", est_va=est_va, est_vy=est_vy, cost_coefficient=cost)
    grid = np.linspace(0.0, 1.0, 10_001)
    benefits = [juror_benefit(replace(profile, participation=a), y) for a in grid]
    best = grid[int(np.argmax(benefits))]
    assert optimal_participation(profile, y) == pytest.approx(best, abs=1e-4)


def _random_profiles(count, seed):
    rng = np.random.default_rng(seed)
    for i in range(count):
        yield JurorProfile(
            f"j{i}",
            visibility=float(rng.uniform(0, 3)),
            weight_prosocial=float(rng.uniform(0, 2)),
            weight_monetary=float(rng.uniform(0, 2)),
            est_va=float(rng.uniform(-1, 1)),
            est_vy=float(rng.uniform(-1, 1)),
            cost_coefficient=float(rng.uniform(0.1, 5)),
        ), float(rng.uniform(0, 3))


def test_optimal_participation_beats_its_neighbours():
    # the benefit is concave in participation, so a local check is global
    for profile, y in _random_profiles(1000, seed=3):
        a_star = optimal_participation(profile, y)
        best = juror_benefit(replace(profile, participation=a_star), y)
        for a in (0.0, 1.0, a_star - 1e-3, a_star + 1e-3):
            if 0 <= a <= 1:
                other = juror_benefit(replace(profile, participation=a), y)
                assert best >= other - 1e-12


def test_optimal_participation_matches_a_grid_search():
    grid = np.linspace(0.0, 1.0, 1001)
    for profile, y in _random_profiles(1000, seed=5):
        benefits = [juror_benefit(replace(profile, participation=a), y) for a in grid]
        best = grid[int(np.argmax(benefits))]
        assert optimal_participation(profile, y) == pytest.approx(best, abs=1e-3), (
            profile,
            y,
        )


def test_reputation_score_is_linear_in_the_estimates():
    for profile, _ in _random_profiles(1000, seed=4):
        base = reputation_score(profile)
        more_va = reputation_score(replace(profile, est_va=profile.est_va + 0.5))
        more_vy = reputation_score(replace(profile, est_vy=profile.est_vy + 0.5))
        assert more_va - base == pytest.approx(
            0.5 * profile.visibility * profile.weight_prosocial, abs=1e-9
        )
        assert base - more_vy == pytest.approx(
            0.5 * profile.visibility * profile.weight_monetary, abs=1e-9
        )


def test_optimal_participation_is_clipped():
    assert optimal_participation(JurorProfile("j", est_va=5.0), 0.0) == 1.0
    assert optimal_participation(JurorProfile("j", est_va=-1.0, est_vy=0.0), 1.0) == 0.0


def test_reputation_score():
    profile = JurorProfile(
        "j",
        visibility=2.0,
        weight_prosocial=1.5,
        weight_monetary=0.5,
        est_va=0.6,
        est_vy=0.4,
    )
    assert reputation_score(profile) == pytest.approx(2.0 * (0.9 - 0.2))


def test_update_after_good_ratings():
    profile = JurorProfile("j")
    outcome = JurorOutcome(ratings=(RatingValue.YES, RatingValue.YES), voted=True)
    updated = update_reputation(profile, outcome)
    assert updated.est_va == pytest.approx(0.6)
    assert updated.est_vy == pytest.approx(0.4)
    assert updated.participation == pytest.approx(1.0)
    assert updated.reputation == pytest.approx(0.2)
    assert updated.rating_history == [RatingValue.YES, RatingValue.YES]
    # the input profile is left alone
    assert profile.est_va == 0.5
    assert profile.rating_history == []


def test_update_after_bad_ratings_lowers_reputation():
    profile = JurorProfile("j")
    good = update_reputation(profile, JurorOutcome(ratings=(RatingValue.YES,)))
    bad = update_reputation(profile, JurorOutcome(ratings=(RatingValue.NO,)))
    assert bad.reputation < good.reputation


def test_update_for_inactive_juror():
    updated = update_reputation(JurorProfile("j"), JurorOutcome(voted=False))
    assert updated.est_va == pytest.approx(0.4)
    assert updated.est_vy == pytest.approx(0.5)
    assert updated.participation == pytest.approx(0.8)
    assert updated.reputation == pytest.approx(-0.1)


def test_high_bond_cases_raise_the_monetary_estimate():
    profile = JurorProfile("j", est_vy=0.0)
    outcome = JurorOutcome(voted=True, monetary=200.0, accepted_high_bond=True)
    updated = update_reputation(profile, outcome, ReputationParams(alpha=0.5))
    assert updated.est_vy == pytest.approx(0.5)


def test_eligible_jurors():
    profiles = [
        JurorProfile("a", est_va=0.9, est_vy=0.1),
        JurorProfile("b", est_va=0.1, est_vy=0.9),
        JurorProfile("c", est_va=0.5, est_vy=0.5),
    ]
    eligible = eligible_jurors(profiles)
    assert [p.juror_id for p in eligible] == ["a", "c"]
    assert len(eligible_jurors(profiles, ReputationParams(threshold=None))) == 3


@pytest.mark.parametrize(
    "kwargs",
    [{"alpha": 0.0}, {"alpha": 1.5}, {"inactivity_penalty": -1}, {"monetary_scale": 0}],
)
def test_reputation_params_validation(kwargs):
    with pytest.raises(ValueError):
        ReputationParams(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [{"visibility": -1.0}, {"cost_coefficient": 0.0}, {"participation": 1.5}],
)
def test_profile_validation(kwargs):
    with pytest.raises(ValueError):
        JurorProfile("j", **kwargs)
