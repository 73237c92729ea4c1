import logging
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from veracity_bond.jury import RatingValue
from veracity_bond.money import (
    BondStatus,
    FeeCurve,
    FeeCurveKind,
    JurorBond,
    JurorBondError,
    Money,
    MoneyError,
    PayoutError,
    PayoutPolicy,
    PolicyError,
    distribute_forfeited_bond,
    juror_bond_amount,
    payouts_by_party,
    settle_juror_bond,
    sum_money,
)

logging.getLogger("veracity_bond").setLevel(logging.DEBUG)

betas = st.integers(min_value=1, max_value=10**12)
odd_panels = st.integers(min_value=0, max_value=50).map(lambda k: 2 * k + 1)
fractions = st.fractions(min_value=0, max_value=Fraction(99, 100), max_denominator=1000)
curves = st.sampled_from(
    [FeeCurve(), FeeCurve(FeeCurveKind.LOG_SCALE), FeeCurve(FeeCurveKind.LOG_SCALE, 2)]
)


@st.composite
def policies(draw):
    platform = draw(fractions)
    jury = draw(fractions)
    assume(platform + jury < 1)
    return PayoutPolicy(
        platform_fraction=platform,
        jury_pool_fraction=jury,
        juror_fee_curve=draw(curves),
    )


def _jurors(n):
    return [f"j{i}" for i in range(n)]


@pytest.mark.parametrize("amount", [-1, 1.5, True, "10"])
def test_money_rejects_non_integer_amounts(amount):
    with pytest.raises(MoneyError):
        Money(amount)


def test_money_arithmetic():
    assert Money(7) + Money(5) == Money(12)
    assert Money(7) - 5 == Money(2)
    assert Money(10).split_evenly(3) == (Money(3), Money(1))
    assert Money(1000).floor_fraction(Fraction(1, 3)) == Money(333)
    assert sum_money([Money(1), Money(2), Money(3)]) == Money(6)
    assert not Money(0)
    with pytest.raises(MoneyError):
        Money(3) - Money(4)
    with pytest.raises(MoneyError):
        Money(3).split_evenly(0)


def test_default_payout_worked_example():
    payout = distribute_forfeited_bond(1000, PayoutPolicy(), _jurors(21))
    assert payout.platform_share == Money(100)
    assert {share for _, share in payout.juror_shares} == {Money(14)}
    assert payout.winner_share == Money(606)
    assert payout.to_dict()["juror_shares"][0] == ["j0", 14]


def test_winner_takes_the_dust():
    payout = distribute_forfeited_bond(10, PayoutPolicy(), _jurors(7))
    # pool of 3 cannot be split over 7 jurors
    assert payout.jury_total() == Money(0)
    assert payout.platform_share == Money(1)
    assert payout.winner_share == Money(9)


@settings(max_examples=300)
@given(beta=betas, n=odd_panels, policy=policies())
def test_payout_conserves_the_bond(beta, n, policy):
    payout = distribute_forfeited_bond(beta, policy, _jurors(n))
    assert payout.total() == Money(beta)
    shares = {share for _, share in payout.juror_shares}
    assert len(shares) == 1
    assert payout.platform_share == Money(beta).floor_fraction(policy.platform_fraction)


def test_ten_thousand_seeded_payouts_conserve_the_bond():
    rng = np.random.default_rng(2024)
    fee_curves = [FeeCurve(), FeeCurve(FeeCurveKind.LOG_SCALE)]
    for _ in range(10_000):
        platform = Fraction(int(rng.integers(0, 500)), 1000)
        jury = Fraction(int(rng.integers(0, 500)), 1000)
        policy = PayoutPolicy(
            platform_fraction=platform,
            jury_pool_fraction=jury,
            juror_fee_curve=fee_curves[int(rng.integers(2))],
        )
        beta = int(rng.integers(1, 10**12))
        n = 2 * int(rng.integers(0, 51)) + 1
        payout = distribute_forfeited_bond(beta, policy, _jurors(n))
        assert payout.total() == Money(beta), (beta, n, policy)
        assert payout.winner_share.amount >= 0


@settings(max_examples=200)
@given(beta=betas, extra=st.integers(min_value=1, max_value=10**6), n=odd_panels)
def test_payout_shares_grow_with_the_bond(beta, extra, n):
    policy = PayoutPolicy()
    low = distribute_forfeited_bond(beta, policy, _jurors(n))
    high = distribute_forfeited_bond(beta + extra, policy, _jurors(n))
    assert high.platform_share >= low.platform_share
    assert high.juror_shares[0][1] >= low.juror_shares[0][1]
    # the winner only loses what the platform and pool floors can swallow
    assert high.winner_share.amount >= low.winner_share.amount - (n + 1)


@given(beta=betas, jury=fractions)
def test_log_scale_pool_never_exceeds_flat_pool(beta, jury):
    flat = FeeCurve().pool(Money(beta), jury)
    log_scale = FeeCurve(FeeCurveKind.LOG_SCALE).pool(Money(beta), jury)
    assert log_scale <= flat


@pytest.mark.parametrize(
    "beta,expected",
    [(100, 20), (1000, 71), (10, 2)],
)
def test_log_scale_pool_values(beta, expected):
    pool = FeeCurve(FeeCurveKind.LOG_SCALE).pool(Money(beta), Fraction(3, 10))
    assert pool == Money(expected)


@pytest.mark.parametrize(
    "jurors",
    [[], ["a", "b"], ["a", "a", "b"]],
)
def test_distribute_rejects_bad_juries(jurors):
    with pytest.raises(PayoutError):
        distribute_forfeited_bond(100, PayoutPolicy(), jurors)


def test_distribute_rejects_zero_bond():
    with pytest.raises(PayoutError):
        distribute_forfeited_bond(0, PayoutPolicy(), ["a"])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"platform_fraction": 0.1},
        {"platform_fraction": "1/2", "jury_pool_fraction": "1/2"},
        {"jury_pool_fraction": "-1/10"},
        {"gamma": 0},
        {"gamma": "1"},
    ],
)
def test_policy_validation(kwargs):
    with pytest.raises(PolicyError):
        PayoutPolicy(**kwargs)


def test_policy_from_dict():
    policy = PayoutPolicy.from_dict(
        {
            "platform_fraction": "1/20",
            "jury_pool_fraction": "0.25",
            "juror_fee_curve": {"kind": "log-scale", "base": "10"},
        }
    )
    assert policy.platform_fraction == Fraction(1, 20)
    assert policy.jury_pool_fraction == Fraction(1, 4)
    assert policy.winner_fraction == Fraction(7, 10)
    assert policy.juror_fee_curve == FeeCurve(FeeCurveKind.LOG_SCALE, Fraction(10))
    assert PayoutPolicy.from_dict(policy.to_dict()) == policy


def test_unknown_fee_curve():
    with pytest.raises(PolicyError):
        FeeCurveKind.from_string("quadratic")


def test_juror_bond_amount():
    assert juror_bond_amount(1005, Fraction(1, 10)) == Money(100)
    assert juror_bond_amount(Money(9), "1/10") == Money(0)
    with pytest.raises(JurorBondError):
        juror_bond_amount(100, Fraction(3, 2))


@pytest.mark.parametrize(
    "attended,assessment,rating,expected",
    [
        (True, True, RatingValue.NEUTRAL, BondStatus.REFUNDED),
        (True, True, Fraction(3, 2), BondStatus.REFUNDED),
        (True, True, Fraction(2, 3), BondStatus.FORFEITED_TO_RESERVE),
        (True, False, RatingValue.YES, BondStatus.FORFEITED_TO_RESERVE),
        (False, True, RatingValue.YES, BondStatus.FORFEITED_TO_RESERVE),
    ],
)
def test_settle_juror_bond(attended, assessment, rating, expected):
    bond = JurorBond("j0", Money(100))
    settled = settle_juror_bond(bond, attended, assessment, rating)
    assert settled.status == expected
    assert settled.amount == Money(100)


def test_settle_juror_bond_only_once():
    settled = settle_juror_bond(JurorBond("j0", Money(1)), True, True, RatingValue.YES)
    with pytest.raises(JurorBondError):
        settle_juror_bond(settled, True, True, RatingValue.YES)


def test_payouts_by_party():
    payout = distribute_forfeited_bond(1000, PayoutPolicy(), ["a", "b", "c"])
    by_party = payouts_by_party(payout, "winner")
    assert by_party["winner"] == payout.winner_share
    assert by_party["a"] == Money(100)
    assert sum_money(list(by_party.values())) + payout.platform_share == Money(1000)
