"""Monetary primitives and conservation-exact payout arithmetic.

Money is an integer count of minor units and every fraction is a
``fractions.Fraction``; no binary float ever reaches a settlement path.
"""
from dataclasses import dataclass, field, replace
from decimal import Context, Decimal
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple, Union

from veracity_bond.jury import RatingValue
from veracity_bond.utils import VeracityBondError, format_rational, parse_rational

# one whole currency unit, in minor units
BETA_0 = 100

_LOG_CONTEXT = Context(prec=40)


class MoneyError(VeracityBondError):
    pass


class PolicyError(VeracityBondError):
    pass


class PayoutError(VeracityBondError):
    pass


class JurorBondError(VeracityBondError):
    pass


@dataclass(frozen=True, order=True)
class Money:
    amount: int = 0

    def __post_init__(self):
        if isinstance(self.amount, bool) or not isinstance(self.amount, int):
            raise MoneyError(
                f"Money must be an integer count of minor units, got {self.amount!r}"
            )
        if self.amount < 0:
            raise MoneyError(f"Money cannot be negative, got {self.amount}")

    @classmethod
    def of(cls, amount: Union[int, "Money"]) -> "Money":
        if isinstance(amount, Money):
            return amount
        return cls(amount)

    def __add__(self, other: "Money") -> "Money":
        return Money(self.amount + Money.of(other).amount)

    def __sub__(self, other: "Money") -> "Money":
        other = Money.of(other)
        if other.amount > self.amount:
            raise MoneyError(f"Cannot subtract {other.amount} from {self.amount}")
        return Money(self.amount - other.amount)

    def __bool__(self) -> bool:
        return self.amount > 0

    def floor_fraction(self, fraction: Fraction) -> "Money":
        fraction = Fraction(fraction)
        if fraction < 0:
            raise MoneyError(f"Cannot take a negative fraction {fraction} of money")
        return Money((self.amount * fraction.numerator) // fraction.denominator)

    def split_evenly(self, parts: int) -> Tuple["Money", "Money"]:
        """Returns (share per part, undistributed dust)."""
        if parts <= 0:
            raise MoneyError(f"Cannot split money into {parts} parts")
        share, dust = divmod(self.amount, parts)
        return Money(share), Money(dust)


class FeeCurveKind(Enum):
    FLAT = "flat"
    LOG_SCALE = "log_scale"

    @classmethod
    def from_string(cls, string: str):
        s = string.strip().lower().replace("-", "_")
        for member in cls:
            if member.value == s or member.name.lower() == s:
                return member
        raise PolicyError(f"Unknown juror fee curve: {string}")


@dataclass(frozen=True)
class FeeCurve:
    """How the jury pool is sized from the forfeited bond.

    FLAT takes ``jury_pool_fraction`` of beta. LOG_SCALE takes the same
    fraction of ``beta0 * log_base(1 + beta / beta0)``, never more than the
    flat pool, so large bonds do not crowd out small ones.
    """

    kind: FeeCurveKind = FeeCurveKind.FLAT
    base: Fraction = None

    def __post_init__(self):
        if self.kind == FeeCurveKind.LOG_SCALE and self.base is not None:
            if Fraction(self.base) <= 1:
                raise PolicyError(f"log base must exceed 1, got {self.base}")

    def pool(self, beta: Money, jury_pool_fraction: Fraction) -> Money:
        flat = beta.floor_fraction(jury_pool_fraction)
        if self.kind == FeeCurveKind.FLAT:
            return flat
        units = Decimal(beta.amount) / Decimal(BETA_0)
        log_term = _LOG_CONTEXT.ln(1 + units)
        if self.base is not None:
            base = Fraction(self.base)
            log_term = log_term / _LOG_CONTEXT.ln(
                Decimal(base.numerator) / Decimal(base.denominator)
            )
        f = Decimal(jury_pool_fraction.numerator) / Decimal(
            jury_pool_fraction.denominator
        )
        scaled = int(_LOG_CONTEXT.multiply(f * BETA_0, log_term))
        return min(flat, Money(max(scaled, 0)))

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        if self.base is not None:
            out["base"] = format_rational(Fraction(self.base))
        return out

    @classmethod
    def from_dict(cls, d: Union[dict, str]) -> "FeeCurve":
        if isinstance(d, str):
            return cls(kind=FeeCurveKind.from_string(d))
        base = d.get("base")
        return cls(
            kind=FeeCurveKind.from_string(d.get("kind", "flat")),
            base=None if base is None else parse_rational(base),
        )


@dataclass(frozen=True)
class PayoutPolicy:
    platform_fraction: Fraction = Fraction(1, 10)
    jury_pool_fraction: Fraction = Fraction(3, 10)
    juror_fee_curve: FeeCurve = field(default_factory=FeeCurve)
    gamma: Fraction = Fraction(1, 10)

    def __post_init__(self):
        for name in ("platform_fraction", "jury_pool_fraction", "gamma"):
            value = getattr(self, name)
            if isinstance(value, float):
                raise PolicyError(
                    f"{name} must be an exact rational, got float {value}"
                )
            object.__setattr__(self, name, parse_rational(value))
        for name in ("platform_fraction", "jury_pool_fraction"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise PolicyError(f"{name} must be in [0, 1), got {value}")
        if self.winner_fraction <= 0:
            raise PolicyError(
                "platform_fraction + jury_pool_fraction must be below 1, got "
                f"{self.platform_fraction + self.jury_pool_fraction}"
            )
        if not 0 < self.gamma < 1:
            raise PolicyError(f"gamma must be in (0, 1), got {self.gamma}")

    @property
    def winner_fraction(self) -> Fraction:
        return 1 - self.platform_fraction - self.jury_pool_fraction

    def to_dict(self) -> dict:
        return {
            "platform_fraction": format_rational(self.platform_fraction),
            "jury_pool_fraction": format_rational(self.jury_pool_fraction),
            "juror_fee_curve": self.juror_fee_curve.to_dict(),
            "gamma": format_rational(self.gamma),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PayoutPolicy":
        default = cls()
        return cls(
            platform_fraction=parse_rational(
                d.get("platform_fraction", default.platform_fraction)
            ),
            jury_pool_fraction=parse_rational(
                d.get("jury_pool_fraction", default.jury_pool_fraction)
            ),
            juror_fee_curve=FeeCurve.from_dict(d.get("juror_fee_curve", "flat")),
            gamma=parse_rational(d.get("gamma", default.gamma)),
        )


@dataclass(frozen=True)
class Payout:
    """One forfeited bond split into winner, juror and platform shares."""

    winner_share: Money
    juror_shares: Tuple[Tuple[str, Money], ...]
    platform_share: Money

    def jury_total(self) -> Money:
        total = Money(0)
        for _, share in self.juror_shares:
            total = total + share
        return total

    def total(self) -> Money:
        return self.winner_share + self.jury_total() + self.platform_share

    def to_dict(self) -> dict:
        return {
            "winner_share": self.winner_share.amount,
            "juror_shares": [[j, s.amount] for j, s in self.juror_shares],
            "platform_share": self.platform_share.amount,
        }


def distribute_forfeited_bond(
    beta: Union[Money, int], policy: PayoutPolicy, jurors: Sequence[str]
) -> Payout:
    """Split a forfeited bond so that winner + jurors + platform == beta.

    The platform and the jury pool are floored; the winner takes the
    remainder, including the dust left over by splitting the pool evenly.
    """
    beta = Money.of(beta)
    jurors = list(jurors)
    if not jurors:
        raise PayoutError("Cannot distribute a bond to an empty jury")
    if len(jurors) % 2 == 0:
        raise PayoutError(f"Jury must be odd-sized, got {len(jurors)} jurors")
    if len(set(jurors)) != len(jurors):
        raise PayoutError(f"Jurors must be distinct, got {jurors}")
    if not beta:
        raise PayoutError("Forfeited bond must be positive")

    platform_share = beta.floor_fraction(policy.platform_fraction)
    pool = policy.juror_fee_curve.pool(beta, policy.jury_pool_fraction)
    per_juror, _ = pool.split_evenly(len(jurors))
    juror_shares = tuple((juror_id, per_juror) for juror_id in jurors)
    distributed = platform_share + Money(per_juror.amount * len(jurors))
    winner_share = beta - distributed

    payout = Payout(
        winner_share=winner_share,
        juror_shares=juror_shares,
        platform_share=platform_share,
    )
    if payout.total() != beta:
        raise PayoutError(f"Payout {payout.to_dict()} does not sum to {beta.amount}")
    return payout


def juror_bond_amount(beta: Union[Money, int], gamma: Fraction) -> Money:
    gamma = parse_rational(gamma)
    if not 0 < gamma < 1:
        raise JurorBondError(f"gamma must be in (0, 1), got {gamma}")
    return Money.of(beta).floor_fraction(gamma)


class BondStatus(Enum):
    HELD = "held"
    REFUNDED = "refunded"
    FORFEITED_TO_RESERVE = "forfeited_to_reserve"


@dataclass(frozen=True)
class JurorBond:
    juror_id: str
    amount: Money
    status: BondStatus = BondStatus.HELD

    def to_dict(self) -> dict:
        return {
            "juror_id": self.juror_id,
            "amount": self.amount.amount,
            "status": self.status.value,
        }


def settle_juror_bond(
    bond: JurorBond,
    attended: bool,
    assessment_submitted: bool,
    avg_rating: Union[RatingValue, Fraction, int],
) -> JurorBond:
    """Refund iff the juror attended, wrote an assessment and averaged >= Neutral."""
    if bond.status != BondStatus.HELD:
        raise JurorBondError(
            f"Bond of juror {bond.juror_id} already settled as {bond.status.value}"
        )
    if isinstance(avg_rating, RatingValue):
        avg = Fraction(avg_rating.value)
    else:
        avg = parse_rational(avg_rating)
    refunded = attended and assessment_submitted and avg >= RatingValue.NEUTRAL.value
    status = BondStatus.REFUNDED if refunded else BondStatus.FORFEITED_TO_RESERVE
    return replace(bond, status=status)


def sum_money(amounts: List[Money]) -> Money:
    total = Money(0)
    for amount in amounts:
        total = total + amount
    return total


def payouts_by_party(payout: Payout, winner_id: str) -> Dict[str, Money]:
    out = {winner_id: payout.winner_share}
    for juror_id, share in payout.juror_shares:
        out[juror_id] = out.get(juror_id, Money(0)) + share
    return out
