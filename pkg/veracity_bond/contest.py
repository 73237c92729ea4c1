"""The turn-based contest state machine.

A contest runs ``Open -> Challenged -> Deliberating -> ...`` until it is
resolved or expires unchallenged. Every mutation goes through an
``_apply_*`` method driven by a payload, and the same payload is appended to
the contest's event log, so :func:`replay` rebuilds a contest from its log
alone. Random choices are made live, recorded as outcomes, and re-derived
from the recorded generator state on replay.
"""
import functools
import logging
import threading
from collections import Counter
from copy import deepcopy
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from veracity_bond import jury as jury_selection
from veracity_bond.event_log import (
    EventLog,
    LogEntry,
    ReplayError,
    canonical_json,
    sha256_of,
)
from veracity_bond.jury import (
    JuryConfig,
    JurorProfile,
    JuryPanel,
    RatingError,
    RatingValue,
    Vote,
    select_jury,
)
from veracity_bond.money import (
    BondStatus,
    JurorBond,
    Money,
    PayoutPolicy,
    distribute_forfeited_bond,
    juror_bond_amount,
    settle_juror_bond,
)
from veracity_bond.reputation import JurorOutcome, ReputationParams, update_reputation
from veracity_bond.utils import VeracityBondError

logger = logging.getLogger(__name__)

__all__ = [
    "ChallengeRejected",
    "ContestEngine",
    "ContestError",
    "ContestStateError",
    "EmptyBenchError",
    "MissingVotesError",
    "ReplayError",
    "VoteRejected",
    "replay",
    "state_hash",
]


def _locked(method):
    """Run an engine operation under the engine's lock."""

    @functools.wraps(method)
    def wrapper(self, *args, **kwargs):
        with self._lock:
            return method(self, *args, **kwargs)

    return wrapper


class ContestError(VeracityBondError):
    pass


class ContestStateError(ContestError):
    pass


class ChallengeRejected(ContestError):
    pass


class VoteRejected(ContestError):
    pass


class EmptyBenchError(ContestError):
    pass


class MissingVotesError(ContestError):
    pass


class ContestState(Enum):
    OPEN = "open"
    CHALLENGED = "challenged"
    DELIBERATING = "deliberating"
    RESOLVED_FOR_CREATOR = "resolved_for_creator"
    RESOLVED_FOR_CHALLENGER = "resolved_for_challenger"
    EXPIRED_UNCHALLENGED = "expired_unchallenged"

    @property
    def is_terminal(self) -> bool:
        return self in _TERMINAL_STATES


_TERMINAL_STATES = {
    ContestState.RESOLVED_FOR_CREATOR,
    ContestState.RESOLVED_FOR_CHALLENGER,
    ContestState.EXPIRED_UNCHALLENGED,
}


class ChallengeOutcome(Enum):
    QUEUED = "queued"
    ACTIVE = "active"
    WON = "won"
    LOST = "lost"
    DISMISSED = "dismissed"


class SubstitutionReason(Enum):
    INACTIVE = "inactive"
    BOND_DECLINED = "bond_declined"


# escrow kinds held by the ledger
VERACITY_BOND = "vb"
COUNTER_BOND = "cvb"
JUROR_BOND = "juror_bond"


@dataclass(frozen=True)
class ContestTiming:
    challenge_period: int = 100
    deliberation_period: int = 50

    def __post_init__(self):
        for name in ("challenge_period", "deliberation_period"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ContestError(f"{name} must be a positive number of ticks")


@dataclass
class Challenge:
    challenger_id: str
    counter_bond: Money
    evidence_ref: str
    outcome: ChallengeOutcome = ChallengeOutcome.QUEUED
    submitted_tick: int = 0

    def to_dict(self) -> dict:
        return {
            "challenger_id": self.challenger_id,
            "counter_bond": self.counter_bond.amount,
            "evidence_ref": self.evidence_ref,
            "outcome": self.outcome.value,
            "submitted_tick": self.submitted_tick,
        }


@dataclass
class Contest:
    content_id: str
    creator_id: str
    veracity_bond: Money
    challenge_deadline: int
    deliberation_period: int
    state: ContestState = ContestState.OPEN
    clock: int = 0
    challenge_queue: List[Challenge] = field(default_factory=list)
    active_challenge: Optional[Challenge] = None
    resolved_challenges: List[Challenge] = field(default_factory=list)
    jury: Optional[JuryPanel] = None
    deliberation_deadline: Optional[int] = None
    juror_bonds: Dict[str, JurorBond] = field(default_factory=dict)
    settled_bonds: List[JurorBond] = field(default_factory=list)
    ratings: Dict[str, List[int]] = field(default_factory=dict)
    payouts: List[dict] = field(default_factory=list)
    past_panels: List[JuryPanel] = field(default_factory=list)
    creator_refund: int = 0
    # sealed: never serialized
    _evaluators: Set[str] = field(default_factory=set, repr=False, compare=False)
    _rated: Set[Tuple[str, str]] = field(default_factory=set, repr=False, compare=False)

    def challenger_ids(self) -> List[str]:
        challenges = list(self.resolved_challenges) + list(self.challenge_queue)
        if self.active_challenge is not None:
            challenges.append(self.active_challenge)
        return [c.challenger_id for c in challenges]

    def party_ids(self) -> Set[str]:
        """Creator and every challenger, past or pending."""
        return {self.creator_id, *self.challenger_ids()}

    def participant_ids(self) -> Set[str]:
        """Everyone holding a role in this contest, jurors included."""
        ids = self.party_ids()
        for panel in self.past_panels + ([self.jury] if self.jury else []):
            ids |= panel.all_ids()
        return ids

    def to_dict(self) -> dict:
        return {
            "content_id": self.content_id,
            "creator_id": self.creator_id,
            "veracity_bond": self.veracity_bond.amount,
            "state": self.state.value,
            "clock": self.clock,
            "challenge_deadline": self.challenge_deadline,
            "deliberation_period": self.deliberation_period,
            "deliberation_deadline": self.deliberation_deadline,
            "challenge_queue": [c.to_dict() for c in self.challenge_queue],
            "active_challenge": (
                None
                if self.active_challenge is None
                else self.active_challenge.to_dict()
            ),
            "resolved_challenges": [c.to_dict() for c in self.resolved_challenges],
            "jury": None if self.jury is None else self.jury.to_dict(),
            "juror_bonds": [
                self.juror_bonds[j].to_dict() for j in sorted(self.juror_bonds)
            ],
            "settled_bonds": [b.to_dict() for b in self.settled_bonds],
            "ratings": {j: list(v) for j, v in sorted(self.ratings.items())},
            "payouts": list(self.payouts),
            "past_panels": [p.to_dict() for p in self.past_panels],
            "creator_refund": self.creator_refund,
        }


def state_hash(contest: Contest) -> str:
    return sha256_of(contest.to_dict())


class Ledger:
    """Tracks every minor unit that enters the system and where it sits.

    ``residual()`` is zero whenever no operation is half-way through.
    """

    def __init__(self):
        self.injected = 0
        self.escrow: Dict[Tuple[str, str, str], int] = {}
        self.received: Counter = Counter()
        self.deposited: Counter = Counter()
        self.platform = 0
        self.reserve = 0

    def deposit(self, content_id: str, holder: str, kind: str, amount: Money) -> None:
        key = (content_id, holder, kind)
        if key in self.escrow:
            raise ContestError(f"{kind} of {holder} already escrowed for {content_id}")
        self.injected += amount.amount
        self.deposited[holder] += amount.amount
        self.escrow[key] = amount.amount

    def _take(self, content_id: str, holder: str, kind: str) -> Money:
        try:
            return Money(self.escrow.pop((content_id, holder, kind)))
        except KeyError:
            raise ContestError(f"No {kind} of {holder} escrowed for {content_id}")

    def refund(self, content_id: str, holder: str, kind: str) -> Money:
        amount = self._take(content_id, holder, kind)
        self.received[holder] += amount.amount
        return amount

    def forfeit(self, content_id: str, holder: str, kind: str) -> Money:
        """Remove an escrow; the caller must distribute the returned amount."""
        return self._take(content_id, holder, kind)

    def net(self, party: str) -> int:
        """What a party has received minus what it has put in."""
        return self.received[party] - self.deposited[party]

    def pay(self, party: str, amount: Money) -> None:
        self.received[party] += amount.amount

    def pay_platform(self, amount: Money) -> None:
        self.platform += amount.amount

    def to_reserve(self, amount: Money) -> None:
        self.reserve += amount.amount

    def escrowed(self, content_id: str = None) -> int:
        return sum(
            v for (cid, _, _), v in self.escrow.items() if content_id in (None, cid)
        )

    def residual(self) -> int:
        accounted = (
            self.escrowed() + sum(self.received.values()) + self.platform + self.reserve
        )
        return self.injected - accounted

    def to_dict(self) -> dict:
        return {
            "injected": self.injected,
            "escrowed": self.escrowed(),
            "received": dict(sorted(self.received.items())),
            "platform": self.platform,
            "reserve": self.reserve,
        }


def _generator_from_state(seed_state: dict) -> np.random.Generator:
    bit_generator = getattr(np.random, seed_state["bit_generator"])()
    bit_generator.state = seed_state
    return np.random.Generator(bit_generator)


class ContestEngine:
    """Owns contests, their logs, the escrow ledger and the juror registry.

    Every operation is keyed by ``content_id`` and returns the live contest.
    Contests share the ledger, the generator and the juror counters, so public
    operations run one at a time under a per-engine reentrant lock. Threads may
    drive different contests on one engine; draws then depend on call order.
    """

    def __init__(
        self,
        jurors: Iterable[JurorProfile] = (),
        jury_config: JuryConfig = None,
        policy: PayoutPolicy = None,
        timing: ContestTiming = None,
        seed: int = None,
        rng: np.random.Generator = None,
        challenge_cap: int = 3,
        reputation_params: ReputationParams = None,
    ):
        self.jurors: Dict[str, JurorProfile] = {}
        for profile in jurors:
            if profile.juror_id in self.jurors:
                raise ContestError(f"Duplicate juror id {profile.juror_id}")
            self.jurors[profile.juror_id] = profile
        self.jury_config = jury_config
        self.policy = policy or PayoutPolicy()
        self.timing = timing or ContestTiming()
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        if challenge_cap < 1:
            raise ContestError(f"challenge_cap must be at least 1, got {challenge_cap}")
        self.challenge_cap = challenge_cap
        self.reputation_params = reputation_params or ReputationParams()
        self.contests: Dict[str, Contest] = {}
        self.logs: Dict[str, EventLog] = {}
        self.ledger = Ledger()
        self.active_challenges: Counter = Counter()
        self._lock = threading.RLock()
        self._appliers: Dict[str, Callable[[Contest, dict], dict]] = {
            "submit_challenge": self._apply_submit,
            "activate_next_challenge": self._apply_activate,
            "record_vote": self._apply_vote,
            "substitute_juror": self._apply_substitute,
            "reputation_penalty": self._apply_penalty,
            "assign_evaluators": self._apply_noop,
            "record_rating": self._apply_rating,
            "finalize_active_challenge": self._apply_finalize,
            "expire_challenge_period": self._apply_expire,
            "advance_clock": self._apply_advance,
        }

    # -- helpers -------------------------------------------------------------

    def get(self, content_id: str) -> Contest:
        try:
            return self.contests[content_id]
        except KeyError:
            raise ContestError(f"Unknown content_id {content_id}")

    def log(self, content_id: str) -> EventLog:
        self.get(content_id)
        return self.logs[content_id]

    @_locked
    def snapshot(self, content_id: str) -> Contest:
        return deepcopy(self.get(content_id))

    @_locked
    def state_hash(self, content_id: str) -> str:
        return state_hash(self.get(content_id))

    def _seed_state(self) -> dict:
        return deepcopy(self.rng.bit_generator.state)

    def _record(
        self,
        contest: Contest,
        kind: str,
        payload: dict,
        seed_state: dict = None,
        tick=None,
    ) -> LogEntry:
        residual = self.ledger.residual()
        if residual != 0:
            raise ContestError(f"Escrow out of balance by {residual} after {kind}")
        tick = contest.clock if tick is None else tick
        return self.logs[contest.content_id].append(tick, kind, payload, seed_state)

    @staticmethod
    def _require_state(contest: Contest, *states: ContestState) -> None:
        if contest.state not in states:
            allowed = ", ".join(s.value for s in states)
            raise ContestStateError(
                f"Contest {contest.content_id} is {contest.state.value}; "
                f"expected one of: {allowed}"
            )

    # -- operations ----------------------------------------------------------

    @_locked
    def open_contest(
        self,
        content_id: str,
        creator_id: str,
        beta,
        challenge_period: int = None,
        verified: bool = True,
    ) -> Contest:
        if content_id in self.contests:
            raise ContestError(f"Contest {content_id} already exists")
        if not verified:
            raise ContestError(f"Creator {creator_id} is not verified")
        beta = Money.of(beta)
        if not beta:
            raise ContestError("Veracity bond must be positive")
        period = challenge_period
        if period is None:
            period = self.timing.challenge_period
        ContestTiming(period, self.timing.deliberation_period)
        payload = {
            "content_id": content_id,
            "creator_id": creator_id,
            "beta": beta.amount,
            "challenge_period": period,
            "deliberation_period": self.timing.deliberation_period,
        }
        contest = self._apply_open(payload)
        self._record(contest, "open_contest", payload)
        logger.info("Opened contest %s with bond %d", content_id, beta.amount)
        return contest

    @_locked
    def submit_challenge(
        self,
        content_id: str,
        challenger_id: str,
        bond,
        evidence_ref: str,
        verified: bool = True,
    ) -> Contest:
        contest = self.get(content_id)
        self._require_state(
            contest,
            ContestState.OPEN,
            ContestState.CHALLENGED,
            ContestState.DELIBERATING,
        )
        if contest.clock >= contest.challenge_deadline:
            raise ChallengeRejected(
                f"Challenge period for {content_id} ended at tick "
                f"{contest.challenge_deadline}"
            )
        if not verified:
            raise ChallengeRejected(f"Challenger {challenger_id} is not verified")
        bond = Money.of(bond)
        if bond != contest.veracity_bond:
            raise ChallengeRejected(
                f"Counter bond {bond.amount} must equal the veracity bond "
                f"{contest.veracity_bond.amount}"
            )
        if challenger_id == contest.creator_id:
            raise ChallengeRejected("A creator cannot challenge their own content")
        if challenger_id in contest.challenger_ids():
            raise ChallengeRejected(
                f"{challenger_id} has already challenged {content_id}"
            )
        if contest.jury is not None and challenger_id in contest.jury.all_ids():
            raise ChallengeRejected(
                f"{challenger_id} sits on the jury for {content_id}"
            )
        if self.active_challenges[challenger_id] >= self.challenge_cap:
            raise ChallengeRejected(
                f"{challenger_id} already has {self.challenge_cap} active challenges"
            )
        payload = {
            "challenger_id": challenger_id,
            "bond": bond.amount,
            "evidence_ref": evidence_ref,
        }
        self._apply_submit(contest, payload)
        self._record(contest, "submit_challenge", payload)
        return contest

    @_locked
    def activate_next_challenge(self, content_id: str) -> Contest:
        contest = self.get(content_id)
        if contest.active_challenge is not None:
            raise ContestStateError(
                f"Contest {content_id} already has an active challenge"
            )
        if not contest.challenge_queue:
            raise ContestStateError(f"Contest {content_id} has no queued challenges")
        self._require_state(contest, ContestState.CHALLENGED)
        if self.jury_config is None:
            raise ContestStateError("No jury configuration set on the engine")

        seed_state = self._seed_state()
        index = int(self.rng.integers(len(contest.challenge_queue)))
        challenge = contest.challenge_queue[index]
        panel = select_jury(
            list(self.jurors.values()),
            self.jury_config,
            contest.party_ids(),
            self.rng,
            threshold=self.reputation_params.threshold,
        )
        payload = {
            "challenger_id": challenge.challenger_id,
            "queue_size": len(contest.challenge_queue),
            "members": panel.members,
            "bench": panel.bench,
            "juror_bond": juror_bond_amount(
                contest.veracity_bond, self.jury_config.gamma
            ).amount,
        }
        self._apply_activate(contest, payload)
        self._record(contest, "activate_next_challenge", payload, seed_state)
        logger.info(
            "Contest %s: challenge by %s is active", content_id, challenge.challenger_id
        )
        return contest

    @_locked
    def record_vote(
        self, content_id: str, juror_id: str, vote: Vote, assessment: str
    ) -> Contest:
        contest = self.get(content_id)
        self._require_state(contest, ContestState.DELIBERATING)
        panel = contest.jury
        if juror_id not in panel.members:
            raise VoteRejected(f"{juror_id} is not on the jury for {content_id}")
        if contest.clock > contest.deliberation_deadline:
            raise VoteRejected(
                f"Deliberation for {content_id} closed at tick "
                f"{contest.deliberation_deadline}"
            )
        if panel.has_voted(juror_id):
            raise VoteRejected(f"{juror_id} has already voted on {content_id}")
        if vote not in (Vote.FOR_CREATOR, Vote.FOR_CHALLENGER):
            raise VoteRejected(f"Not a verdict: {vote}")
        if not assessment or not assessment.strip():
            raise VoteRejected("A vote must come with a written assessment")
        payload = {"juror_id": juror_id, "vote": vote.value, "assessment": assessment}
        self._apply_vote(contest, payload)
        self._record(contest, "record_vote", payload)
        return contest

    @_locked
    def substitute_inactive_juror(
        self,
        content_id: str,
        juror_id: str,
        reason: SubstitutionReason = SubstitutionReason.INACTIVE,
    ) -> Contest:
        """Replace a seated juror with the best-ranked alternate on the bench."""
        contest = self.get(content_id)
        self._require_state(contest, ContestState.DELIBERATING)
        panel = contest.jury
        if juror_id not in panel.members:
            raise VoteRejected(f"{juror_id} is not on the jury for {content_id}")
        if panel.has_voted(juror_id):
            raise VoteRejected(f"{juror_id} has voted and cannot be replaced")
        if (
            reason == SubstitutionReason.INACTIVE
            and contest.clock <= contest.deliberation_deadline
        ):
            raise ContestStateError(
                f"{juror_id} still has until tick "
                f"{contest.deliberation_deadline} to vote"
            )

        taken = contest.participant_ids()
        candidates = [b for b in panel.bench if b not in taken]
        if not candidates:
            raise EmptyBenchError(f"No alternates left on the bench for {content_id}")

        def score(juror):
            profile = self.jurors.get(juror)
            return 0.0 if profile is None else profile.reputation

        best = max(score(b) for b in candidates)
        tied = sorted(b for b in candidates if score(b) == best)
        seed_state = None
        if len(tied) > 1:
            seed_state = self._seed_state()
            substitute = tied[int(self.rng.integers(len(tied)))]
        else:
            substitute = tied[0]

        payload = {
            "juror_id": juror_id,
            "substitute_id": substitute,
            "reason": reason.value,
            "juror_bond": juror_bond_amount(
                contest.veracity_bond, self._gamma()
            ).amount,
        }
        self._apply_substitute(contest, payload)
        self._record(contest, "substitute_juror", payload, seed_state)
        penalty = {"juror_id": juror_id}
        self._apply_penalty(contest, penalty)
        self._record(contest, "reputation_penalty", penalty)
        logger.info(
            "Contest %s: %s replaced by %s (%s)",
            content_id,
            juror_id,
            substitute,
            reason.value,
        )
        return contest

    @_locked
    def decline_juror_bond(self, content_id: str, juror_id: str) -> Contest:
        return self.substitute_inactive_juror(
            content_id, juror_id, SubstitutionReason.BOND_DECLINED
        )

    @_locked
    def assign_evaluators(
        self, content_id: str, viewer_pool: Sequence[str], count: int
    ) -> List[str]:
        contest = self.get(content_id)
        self._require_state(contest, ContestState.DELIBERATING)
        seed_state = self._seed_state()
        evaluators = jury_selection.assign_evaluators(
            contest, viewer_pool, count, self.rng
        )
        contest._evaluators.update(evaluators)
        self._record(contest, "assign_evaluators", {"count": count}, seed_state)
        self.logs[content_id].seal(
            contest.clock, "evaluators_assigned", {"evaluator_ids": evaluators}
        )
        return evaluators

    @_locked
    def record_rating(
        self, content_id: str, evaluator_id: str, juror_id: str, value: RatingValue
    ) -> Contest:
        contest = self.get(content_id)
        self._require_state(contest, ContestState.DELIBERATING)
        if evaluator_id not in contest._evaluators:
            raise RatingError(f"{evaluator_id} is not an evaluator for {content_id}")
        if juror_id not in contest.jury.members:
            raise RatingError(f"{juror_id} is not on the jury for {content_id}")
        if (evaluator_id, juror_id) in contest._rated:
            raise RatingError(f"{evaluator_id} has already rated {juror_id}")
        value = RatingValue(value) if isinstance(value, int) else value
        contest._rated.add((evaluator_id, juror_id))
        payload = {"juror_id": juror_id, "value": value.value}
        self._apply_rating(contest, payload)
        self._record(contest, "record_rating", payload)
        self.logs[content_id].seal(
            contest.clock,
            "rating",
            {"evaluator_id": evaluator_id, "juror_id": juror_id, "value": value.value},
        )
        return contest

    @_locked
    def finalize_active_challenge(
        self, content_id: str, policy: PayoutPolicy = None
    ) -> Contest:
        contest = self.get(content_id)
        self._require_state(contest, ContestState.DELIBERATING)
        missing = contest.jury.missing_voters()
        if missing:
            raise MissingVotesError(
                f"Contest {content_id} is missing votes from {missing}; "
                "substitute them before finalizing"
            )
        policy = policy or self.policy
        payload = {"policy": policy.to_dict()}
        payload.update(self._apply_finalize(contest, payload))
        self._record(contest, "finalize_active_challenge", payload)
        logger.info("Contest %s: %s", content_id, payload["verdict"])
        if contest.state == ContestState.CHALLENGED:
            self.activate_next_challenge(content_id)
        return contest

    @_locked
    def expire_challenge_period(self, content_id: str) -> Contest:
        contest = self.get(content_id)
        if contest.state.is_terminal:
            raise ContestStateError(
                f"Contest {content_id} is already {contest.state.value}"
            )
        if contest.challenge_queue or contest.active_challenge is not None:
            raise ContestStateError(
                f"Contest {content_id} has pending challenges to resolve"
            )
        if contest.clock < contest.challenge_deadline:
            raise ContestStateError(
                f"Challenge period for {content_id} runs until tick "
                f"{contest.challenge_deadline}"
            )
        payload = {}
        payload.update(self._apply_expire(contest, payload))
        self._record(contest, "expire_challenge_period", payload)
        return contest

    @_locked
    def advance_clock(self, content_id: str, ticks: int = 1) -> Contest:
        contest = self.get(content_id)
        if contest.state.is_terminal:
            raise ContestStateError(
                f"Contest {content_id} is already {contest.state.value}"
            )
        if isinstance(ticks, bool) or not isinstance(ticks, int) or ticks <= 0:
            raise ContestError(f"ticks must be a positive integer, got {ticks!r}")
        tick = contest.clock
        payload = {"ticks": ticks}
        self._apply_advance(contest, payload)
        self._record(contest, "advance_clock", payload, tick=tick)
        return contest

    # -- appliers ------------------------------------------------------------

    def _gamma(self) -> Fraction:
        if self.jury_config is not None:
            return self.jury_config.gamma
        return self.policy.gamma

    def _apply_open(self, payload: dict) -> Contest:
        content_id = payload["content_id"]
        contest = Contest(
            content_id=content_id,
            creator_id=payload["creator_id"],
            veracity_bond=Money(payload["beta"]),
            challenge_deadline=payload["challenge_period"],
            deliberation_period=payload["deliberation_period"],
        )
        self.ledger.deposit(
            content_id, contest.creator_id, VERACITY_BOND, contest.veracity_bond
        )
        self.contests[content_id] = contest
        self.logs[content_id] = EventLog(content_id)
        return contest

    def _apply_submit(self, contest: Contest, payload: dict) -> dict:
        self._require_state(
            contest,
            ContestState.OPEN,
            ContestState.CHALLENGED,
            ContestState.DELIBERATING,
        )
        challenge = Challenge(
            challenger_id=payload["challenger_id"],
            counter_bond=Money(payload["bond"]),
            evidence_ref=payload["evidence_ref"],
            submitted_tick=contest.clock,
        )
        self.ledger.deposit(
            contest.content_id,
            challenge.challenger_id,
            COUNTER_BOND,
            challenge.counter_bond,
        )
        contest.challenge_queue.append(challenge)
        self.active_challenges[challenge.challenger_id] += 1
        if contest.state == ContestState.OPEN:
            contest.state = ContestState.CHALLENGED
        return {}

    def _apply_activate(self, contest: Contest, payload: dict) -> dict:
        self._require_state(contest, ContestState.CHALLENGED)
        queue = contest.challenge_queue
        matches = [c for c in queue if c.challenger_id == payload["challenger_id"]]
        if len(matches) != 1:
            raise ContestStateError(
                f"{payload['challenger_id']} is not queued on {contest.content_id}"
            )
        conflicted = set(payload["members"]) & contest.party_ids()
        if conflicted:
            raise ContestStateError(f"Conflicted jurors seated: {sorted(conflicted)}")
        challenge = matches[0]
        queue.remove(challenge)
        challenge.outcome = ChallengeOutcome.ACTIVE
        contest.active_challenge = challenge
        contest.jury = JuryPanel(
            members=list(payload["members"]), bench=list(payload["bench"])
        )
        for juror_id in contest.jury.members:
            self._post_juror_bond(contest, juror_id, Money(payload["juror_bond"]))
        contest.deliberation_deadline = contest.clock + contest.deliberation_period
        contest.state = ContestState.DELIBERATING
        return {}

    def _post_juror_bond(self, contest: Contest, juror_id: str, amount: Money) -> None:
        self.ledger.deposit(contest.content_id, juror_id, JUROR_BOND, amount)
        contest.juror_bonds[juror_id] = JurorBond(juror_id, amount)

    def _apply_vote(self, contest: Contest, payload: dict) -> dict:
        self._require_state(contest, ContestState.DELIBERATING)
        juror_id = payload["juror_id"]
        if juror_id not in contest.jury.members or contest.jury.has_voted(juror_id):
            raise VoteRejected(f"{juror_id} cannot vote on {contest.content_id}")
        contest.jury.votes[juror_id] = Vote(payload["vote"])
        contest.jury.assessments[juror_id] = payload["assessment"]
        return {}

    def _apply_substitute(self, contest: Contest, payload: dict) -> dict:
        self._require_state(contest, ContestState.DELIBERATING)
        panel = contest.jury
        juror_id = payload["juror_id"]
        substitute = payload["substitute_id"]
        reason = SubstitutionReason(payload["reason"])
        if juror_id not in panel.members or substitute not in panel.bench:
            raise ContestStateError(
                f"Cannot replace {juror_id} with {substitute} on {contest.content_id}"
            )

        bond = contest.juror_bonds.pop(juror_id)
        if reason == SubstitutionReason.BOND_DECLINED:
            # never posted: hand the deposit straight back
            self.ledger.refund(contest.content_id, juror_id, JUROR_BOND)
        else:
            settled = settle_juror_bond(
                bond,
                attended=False,
                assessment_submitted=False,
                avg_rating=RatingValue.NO,
            )
            self.ledger.to_reserve(
                self.ledger.forfeit(contest.content_id, juror_id, JUROR_BOND)
            )
            contest.settled_bonds.append(settled)

        panel.members[panel.members.index(juror_id)] = substitute
        panel.bench.remove(substitute)
        panel.votes.pop(juror_id, None)
        panel.votes[substitute] = Vote.NOT_YET_VOTED
        panel.inactive.append(juror_id)
        panel.substitutions.append((juror_id, substitute, contest.clock))
        contest.ratings.pop(juror_id, None)
        self._post_juror_bond(contest, substitute, Money(payload["juror_bond"]))
        if reason == SubstitutionReason.INACTIVE:
            contest.deliberation_deadline = contest.clock + contest.deliberation_period
        return {}

    def _apply_penalty(self, contest: Contest, payload: dict) -> dict:
        profile = self.jurors.get(payload["juror_id"])
        if profile is not None:
            self.jurors[profile.juror_id] = update_reputation(
                profile, JurorOutcome(voted=False), self.reputation_params
            )
        return {}

    def _apply_noop(self, contest: Contest, payload: dict) -> dict:
        self._require_state(contest, ContestState.DELIBERATING)
        return {}

    def _apply_rating(self, contest: Contest, payload: dict) -> dict:
        self._require_state(contest, ContestState.DELIBERATING)
        if payload["juror_id"] not in contest.jury.members:
            raise RatingError(f"{payload['juror_id']} is not on the jury")
        RatingValue(payload["value"])
        contest.ratings.setdefault(payload["juror_id"], []).append(payload["value"])
        return {}

    def _mean_rating(self, contest: Contest, juror_id: str) -> Fraction:
        values = contest.ratings.get(juror_id)
        if not values:
            return Fraction(RatingValue.NEUTRAL.value)
        return Fraction(sum(values), len(values))

    def _apply_finalize(self, contest: Contest, payload: dict) -> dict:
        self._require_state(contest, ContestState.DELIBERATING)
        policy = PayoutPolicy.from_dict(payload["policy"])
        panel = contest.jury
        if panel.missing_voters():
            raise MissingVotesError(f"Missing votes from {panel.missing_voters()}")
        challenge = contest.active_challenge
        content_id = contest.content_id
        tally = panel.tally()
        for_challenger = tally[Vote.FOR_CHALLENGER] >= panel.majority

        settled_bonds = []
        for juror_id in panel.members:
            settled = settle_juror_bond(
                contest.juror_bonds[juror_id],
                attended=True,
                assessment_submitted=bool(panel.assessments.get(juror_id, "").strip()),
                avg_rating=self._mean_rating(contest, juror_id),
            )
            if settled.status == BondStatus.REFUNDED:
                self.ledger.refund(content_id, juror_id, JUROR_BOND)
            else:
                self.ledger.to_reserve(
                    self.ledger.forfeit(content_id, juror_id, JUROR_BOND)
                )
            settled_bonds.append(settled)
        contest.settled_bonds.extend(settled_bonds)

        if for_challenger:
            winner_id = challenge.challenger_id
            forfeited = self.ledger.forfeit(
                content_id, contest.creator_id, VERACITY_BOND
            )
            self.ledger.refund(content_id, winner_id, COUNTER_BOND)
        else:
            winner_id = contest.creator_id
            forfeited = self.ledger.forfeit(
                content_id, challenge.challenger_id, COUNTER_BOND
            )
        payout = distribute_forfeited_bond(forfeited, policy, panel.members)
        self.ledger.pay(winner_id, payout.winner_share)
        for juror_id, share in payout.juror_shares:
            self.ledger.pay(juror_id, share)
        self.ledger.pay_platform(payout.platform_share)

        self.active_challenges[challenge.challenger_id] -= 1
        contest.resolved_challenges.append(challenge)
        if for_challenger:
            challenge.outcome = ChallengeOutcome.WON
            for queued in contest.challenge_queue:
                queued.outcome = ChallengeOutcome.DISMISSED
                self.ledger.refund(content_id, queued.challenger_id, COUNTER_BOND)
                self.active_challenges[queued.challenger_id] -= 1
                contest.resolved_challenges.append(queued)
            contest.challenge_queue = []
            contest.state = ContestState.RESOLVED_FOR_CHALLENGER
        else:
            challenge.outcome = ChallengeOutcome.LOST
            if contest.challenge_queue:
                contest.state = ContestState.CHALLENGED
            elif contest.clock >= contest.challenge_deadline:
                self._refund_creator(contest)
                contest.state = ContestState.RESOLVED_FOR_CREATOR
            else:
                contest.state = ContestState.OPEN

        verdict = Vote.FOR_CHALLENGER if for_challenger else Vote.FOR_CREATOR
        record = {
            "challenger_id": challenge.challenger_id,
            "verdict": verdict.value,
            "winner_id": winner_id,
            **payout.to_dict(),
        }
        contest.payouts.append(record)
        self._update_juror_reputations(contest, payout)

        contest.past_panels.append(panel)
        contest.jury = None
        contest.active_challenge = None
        contest.deliberation_deadline = None
        contest.juror_bonds = {}
        contest.ratings = {}
        contest._evaluators = set()
        contest._rated = set()
        return {
            "verdict": verdict.value,
            "tally": {v.value: count for v, count in tally.items()},
            "payout": payout.to_dict(),
            "juror_bonds": [b.to_dict() for b in settled_bonds],
            "state": contest.state.value,
        }

    def _update_juror_reputations(self, contest: Contest, payout) -> None:
        threshold = self.reputation_params.high_bond_amount
        high_bond = contest.veracity_bond.amount >= threshold
        for juror_id, share in payout.juror_shares:
            profile = self.jurors.get(juror_id)
            if profile is None:
                continue
            outcome = JurorOutcome(
                ratings=tuple(
                    RatingValue(v) for v in contest.ratings.get(juror_id, [])
                ),
                voted=True,
                monetary=float(share.amount),
                accepted_high_bond=high_bond,
            )
            self.jurors[juror_id] = update_reputation(
                profile, outcome, self.reputation_params
            )

    def _refund_creator(self, contest: Contest) -> None:
        refund = self.ledger.refund(
            contest.content_id, contest.creator_id, VERACITY_BOND
        )
        contest.creator_refund = refund.amount

    def _apply_expire(self, contest: Contest, payload: dict) -> dict:
        self._require_state(contest, ContestState.OPEN)
        self._refund_creator(contest)
        contest.state = (
            ContestState.RESOLVED_FOR_CREATOR
            if contest.resolved_challenges
            else ContestState.EXPIRED_UNCHALLENGED
        )
        return {"refund": contest.creator_refund, "state": contest.state.value}

    def _apply_advance(self, contest: Contest, payload: dict) -> dict:
        if contest.state.is_terminal:
            raise ContestStateError(f"Contest {contest.content_id} is terminal")
        contest.clock += payload["ticks"]
        return {}

    # -- replay --------------------------------------------------------------

    @_locked
    def apply_entry(self, content_id: str, entry: LogEntry) -> Contest:
        """Re-apply one recorded entry, checking it against recomputation."""
        try:
            if entry.kind == "open_contest":
                if entry.payload.get("content_id") != content_id:
                    raise ReplayError(f"Log opens {entry.payload.get('content_id')}")
                if content_id in self.contests:
                    raise ReplayError(f"Contest {content_id} opened twice")
                if entry.tick != 0:
                    raise ReplayError(f"Contest opened at tick {entry.tick}")
                contest = self._apply_open(entry.payload)
                self._record(contest, entry.kind, entry.payload)
                return contest

            contest = self.get(content_id)
            if entry.tick != contest.clock:
                raise ReplayError(
                    f"Entry {entry.seq} at tick {entry.tick} but contest clock "
                    f"is {contest.clock}"
                )
            applier = self._appliers.get(entry.kind)
            if applier is None:
                raise ReplayError(f"Unknown event kind {entry.kind!r}")
            if entry.kind == "activate_next_challenge":
                self._verify_activation_draw(contest, entry)
            derived = applier(contest, entry.payload)
            recorded = {k: entry.payload[k] for k in derived if k in entry.payload}
            if canonical_json(recorded) != canonical_json(derived):
                raise ReplayError(
                    f"Entry {entry.seq} ({entry.kind}) diverges: recorded "
                    f"{recorded}, recomputed {derived}"
                )
            self._record(
                contest, entry.kind, entry.payload, entry.seed_state, entry.tick
            )
            return contest
        except ReplayError:
            raise
        except (
            VeracityBondError,
            KeyError,
            ValueError,
            TypeError,
            AttributeError,
        ) as e:
            raise ReplayError(
                f"Entry {entry.seq} ({entry.kind}) cannot be applied: {e}"
            ) from e

    @staticmethod
    def _verify_activation_draw(contest: Contest, entry: LogEntry) -> None:
        if entry.seed_state is None:
            raise ReplayError(f"Entry {entry.seq} has no generator state")
        if entry.payload["queue_size"] != len(contest.challenge_queue):
            raise ReplayError(
                f"Entry {entry.seq} drew from a queue of "
                f"{entry.payload['queue_size']}, "
                f"replayed queue has {len(contest.challenge_queue)}"
            )
        rng = _generator_from_state(entry.seed_state)
        drawn = contest.challenge_queue[int(rng.integers(len(contest.challenge_queue)))]
        if drawn.challenger_id != entry.payload["challenger_id"]:
            raise ReplayError(
                f"Entry {entry.seq} activated {entry.payload['challenger_id']} but the "
                f"recorded generator state draws {drawn.challenger_id}"
            )


def replay(log: EventLog) -> Contest:
    """Rebuild a contest from its event log alone."""
    entries = list(log)
    if not entries or entries[0].kind != "open_contest":
        raise ReplayError("An event log must begin with open_contest")
    content_id = entries[0].payload.get("content_id")
    engine = ContestEngine()
    contest = None
    for i, entry in enumerate(entries):
        if entry.seq != i:
            raise ReplayError(f"Out-of-order log: position {i} holds seq {entry.seq}")
        contest = engine.apply_entry(content_id, entry)
    return contest


def replay_matches(log: EventLog, expected_hash: str) -> bool:
    return state_hash(replay(log)) == expected_hash
