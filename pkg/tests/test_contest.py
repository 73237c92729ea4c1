import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from veracity_bond.contest import (
    ChallengeOutcome,
    ChallengeRejected,
    ContestEngine,
    ContestError,
    ContestState,
    ContestStateError,
    ContestTiming,
    EmptyBenchError,
    MissingVotesError,
    ReplayError,
    VoteRejected,
    replay,
    replay_matches,
    state_hash,
)
from veracity_bond.event_log import EventLog, LogEntry
from veracity_bond.jury import JuryConfig, JurorProfile, RatingError, RatingValue, Vote
from veracity_bond.utils import VeracityBondError

logging.getLogger("veracity_bond").setLevel(logging.DEBUG)

CID = "content_1"
VIEWERS = [f"viewer_{i}" for i in range(10)]


def _open(engine, beta=1000):
    return engine.open_contest(CID, "creator", beta)


def _vote_all(engine, vote, content_id=CID):
    contest = engine.get(content_id)
    for juror_id in list(contest.jury.members):
        if not contest.jury.has_voted(juror_id):
            engine.record_vote(content_id, juror_id, vote, "checked the cited sources")


def _rate_all(engine, value=RatingValue.YES, count=2, content_id=CID):
    evaluators = engine.assign_evaluators(content_id, VIEWERS, count)
    for evaluator_id in evaluators:
        for juror_id in engine.get(content_id).jury.members:
            engine.record_rating(content_id, evaluator_id, juror_id, value)
    return evaluators


def _assert_balanced(engine):
    ledger = engine.ledger
    assert ledger.residual() == 0
    parties = set(ledger.received) | set(ledger.deposited)
    total_net = sum(ledger.net(p) for p in parties)
    assert total_net + ledger.platform + ledger.reserve + ledger.escrowed() == 0


def _assert_replays(engine, content_id=CID):
    replayed = replay(engine.log(content_id))
    assert state_hash(replayed) == engine.state_hash(content_id)


def test_unchallenged_content_expires(engine):
    _open(engine)
    with pytest.raises(ContestStateError):
        engine.expire_challenge_period(CID)
    engine.advance_clock(CID, 10)
    contest = engine.expire_challenge_period(CID)
    assert contest.state == ContestState.EXPIRED_UNCHALLENGED
    assert contest.creator_refund == 1000
    assert engine.ledger.net("creator") == 0
    assert engine.ledger.escrowed() == 0
    _assert_balanced(engine)
    _assert_replays(engine)
    with pytest.raises(ContestStateError):
        engine.advance_clock(CID)


def test_challenger_wins(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    assert engine.get(CID).state == ContestState.CHALLENGED
    contest = engine.activate_next_challenge(CID)
    assert contest.state == ContestState.DELIBERATING
    assert len(contest.jury.members) == 5
    members = list(contest.jury.members)

    _vote_all(engine, Vote.FOR_CHALLENGER)
    _rate_all(engine)
    contest = engine.finalize_active_challenge(CID)

    assert contest.state == ContestState.RESOLVED_FOR_CHALLENGER
    record = contest.payouts[0]
    assert record["winner_id"] == "c1"
    assert record["verdict"] == "for_challenger"
    assert record["winner_share"] == 600
    assert record["platform_share"] == 100
    ledger = engine.ledger
    assert ledger.net("creator") == -1000
    assert ledger.net("c1") == 600
    assert all(ledger.net(j) == 60 for j in members)
    assert ledger.platform == 100
    assert ledger.reserve == 0
    assert ledger.escrowed() == 0
    _assert_balanced(engine)
    _assert_replays(engine)


def test_creator_wins_and_then_expires(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    engine.activate_next_challenge(CID)
    _vote_all(engine, Vote.FOR_CREATOR)
    contest = engine.finalize_active_challenge(CID)
    # the challenge period is still running
    assert contest.state == ContestState.OPEN
    assert contest.resolved_challenges[0].outcome == ChallengeOutcome.LOST

    engine.advance_clock(CID, 10)
    contest = engine.expire_challenge_period(CID)
    assert contest.state == ContestState.RESOLVED_FOR_CREATOR
    assert engine.ledger.net("creator") == 600
    assert engine.ledger.net("c1") == -1000
    _assert_balanced(engine)
    _assert_replays(engine)


def test_creator_wins_after_the_deadline(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    engine.activate_next_challenge(CID)
    engine.advance_clock(CID, 5)
    _vote_all(engine, Vote.FOR_CREATOR)
    engine.advance_clock(CID, 5)
    with pytest.raises(VoteRejected):
        engine.record_vote(CID, "juror_00", Vote.FOR_CREATOR, "late")
    contest = engine.finalize_active_challenge(CID)
    assert contest.state == ContestState.RESOLVED_FOR_CREATOR
    assert contest.creator_refund == 1000
    _assert_balanced(engine)


def test_queued_challenges_are_heard_in_turn(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    engine.submit_challenge(CID, "c2", 1000, "evidence/c2")
    contest = engine.activate_next_challenge(CID)
    first = contest.active_challenge.challenger_id
    second = ({"c1", "c2"} - {first}).pop()

    _vote_all(engine, Vote.FOR_CREATOR)
    contest = engine.finalize_active_challenge(CID)
    # the next challenge is activated straight away
    assert contest.state == ContestState.DELIBERATING
    assert contest.active_challenge.challenger_id == second
    assert len(contest.past_panels) == 1

    _vote_all(engine, Vote.FOR_CHALLENGER)
    contest = engine.finalize_active_challenge(CID)
    assert contest.state == ContestState.RESOLVED_FOR_CHALLENGER
    assert engine.ledger.net("creator") == 600 - 1000
    assert engine.ledger.net(first) == -1000
    assert engine.ledger.net(second) == 600
    assert engine.active_challenges[first] == 0
    _assert_balanced(engine)
    _assert_replays(engine)


def test_winning_challenge_dismisses_the_queue(engine):
    _open(engine)
    for challenger_id in ("c1", "c2", "c3"):
        engine.submit_challenge(CID, challenger_id, 1000, f"evidence/{challenger_id}")
    contest = engine.activate_next_challenge(CID)
    winner = contest.active_challenge.challenger_id
    _vote_all(engine, Vote.FOR_CHALLENGER)
    contest = engine.finalize_active_challenge(CID)

    assert contest.state == ContestState.RESOLVED_FOR_CHALLENGER
    dismissed = [
        c
        for c in contest.resolved_challenges
        if c.outcome == ChallengeOutcome.DISMISSED
    ]
    assert {c.challenger_id for c in dismissed} == {"c1", "c2", "c3"} - {winner}
    for challenge in dismissed:
        assert engine.ledger.net(challenge.challenger_id) == 0
    assert engine.ledger.escrowed() == 0
    _assert_balanced(engine)
    _assert_replays(engine)


def test_inactive_juror_is_replaced(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    contest = engine.activate_next_challenge(CID)
    idle = contest.jury.members[0]
    for juror_id in contest.jury.members[1:]:
        engine.record_vote(CID, juror_id, Vote.FOR_CHALLENGER, "sources disagree")

    with pytest.raises(ContestStateError):
        engine.substitute_inactive_juror(CID, idle)
    with pytest.raises(MissingVotesError):
        engine.finalize_active_challenge(CID)

    engine.advance_clock(CID, 6)
    contest = engine.substitute_inactive_juror(CID, idle)
    substitute = contest.jury.substitutions[-1][1]
    assert idle not in contest.jury.members
    assert substitute in contest.jury.members
    assert idle in contest.jury.inactive
    assert contest.deliberation_deadline == 6 + 5
    assert engine.ledger.reserve == 100
    assert engine.jurors[idle].reputation == pytest.approx(-0.1)

    engine.record_vote(CID, substitute, Vote.FOR_CHALLENGER, "sources disagree")
    engine.finalize_active_challenge(CID)
    assert engine.ledger.net(idle) == -100
    assert engine.ledger.net(substitute) == 60
    _assert_balanced(engine)
    _assert_replays(engine)


def test_declined_bond_is_refunded(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    contest = engine.activate_next_challenge(CID)
    declining = contest.jury.members[0]
    contest = engine.decline_juror_bond(CID, declining)
    assert declining not in contest.jury.members
    assert engine.ledger.net(declining) == 0
    assert engine.ledger.reserve == 0
    assert contest.deliberation_deadline == 5
    _assert_balanced(engine)


def test_empty_bench(juror_pool):
    engine = ContestEngine(
        jurors=juror_pool[:6],
        jury_config=JuryConfig(pool_size=6, panel_size=5, bench_size=1),
        seed=3,
    )
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    contest = engine.activate_next_challenge(CID)
    first, second = contest.jury.members[:2]
    engine.decline_juror_bond(CID, first)
    with pytest.raises(EmptyBenchError):
        engine.decline_juror_bond(CID, second)


def test_poorly_rated_juror_forfeits_bond(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    contest = engine.activate_next_challenge(CID)
    careless = contest.jury.members[0]
    _vote_all(engine, Vote.FOR_CHALLENGER)
    for evaluator_id in engine.assign_evaluators(CID, VIEWERS, 2):
        for juror_id in contest.jury.members:
            value = RatingValue.NO if juror_id == careless else RatingValue.YES
            engine.record_rating(CID, evaluator_id, juror_id, value)
    engine.finalize_active_challenge(CID)
    assert engine.ledger.reserve == 100
    assert engine.ledger.net(careless) == 60 - 100
    _assert_balanced(engine)
    _assert_replays(engine)


def test_evaluators_have_no_role_in_the_contest(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    contest = engine.activate_next_challenge(CID)
    pool = ["creator", "c1", *contest.jury.members, "viewer_0"]
    evaluators = engine.assign_evaluators(CID, pool, 1)
    assert evaluators == ["viewer_0"]
    # evaluator identities stay out of the contest-visible log
    assert "viewer_0" not in engine.log(CID).to_jsonl()
    assert engine.log(CID).sealed[0].payload == {"evaluator_ids": ["viewer_0"]}


def test_rating_errors(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    contest = engine.activate_next_challenge(CID)
    juror_id = contest.jury.members[0]
    with pytest.raises(RatingError):
        engine.record_rating(CID, "viewer_0", juror_id, RatingValue.YES)
    (evaluator_id,) = engine.assign_evaluators(CID, VIEWERS, 1)
    engine.record_rating(CID, evaluator_id, juror_id, RatingValue.YES)
    with pytest.raises(RatingError):
        engine.record_rating(CID, evaluator_id, juror_id, RatingValue.NO)
    with pytest.raises(RatingError):
        engine.record_rating(CID, evaluator_id, "c1", RatingValue.NO)


@pytest.mark.parametrize(
    "challenger_id,bond,verified",
    [
        ("c1", 999, True),
        ("creator", 1000, True),
        ("c1", 1000, False),
    ],
)
def test_invalid_challenges(engine, challenger_id, bond, verified):
    _open(engine)
    with pytest.raises(ChallengeRejected):
        engine.submit_challenge(CID, challenger_id, bond, "evidence", verified=verified)
    assert engine.get(CID).state == ContestState.OPEN
    assert engine.ledger.escrowed(CID) == 1000


def test_challenge_rules(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    with pytest.raises(ChallengeRejected):
        engine.submit_challenge(CID, "c1", 1000, "again")
    contest = engine.activate_next_challenge(CID)
    with pytest.raises(ChallengeRejected):
        engine.submit_challenge(CID, contest.jury.members[0], 1000, "juror")
    # late challenges queue behind the active one
    engine.submit_challenge(CID, "c2", 1000, "evidence/c2")
    assert [c.challenger_id for c in contest.challenge_queue] == ["c2"]
    engine.advance_clock(CID, 10)
    with pytest.raises(ChallengeRejected):
        engine.submit_challenge(CID, "c3", 1000, "too late")


def test_challenge_cap(engine):
    for i in range(4):
        engine.open_contest(f"content_{i}", "creator", 1000)
    for i in range(3):
        engine.submit_challenge(f"content_{i}", "c1", 1000, "evidence")
    with pytest.raises(ChallengeRejected):
        engine.submit_challenge("content_3", "c1", 1000, "evidence")


def test_vote_rules(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    contest = engine.activate_next_challenge(CID)
    juror_id = contest.jury.members[0]
    with pytest.raises(VoteRejected):
        engine.record_vote(CID, "c1", Vote.FOR_CREATOR, "not a juror")
    with pytest.raises(VoteRejected):
        engine.record_vote(CID, juror_id, Vote.FOR_CREATOR, "   ")
    with pytest.raises(VoteRejected):
        engine.record_vote(CID, juror_id, Vote.NOT_YET_VOTED, "undecided")
    engine.record_vote(CID, juror_id, Vote.FOR_CREATOR, "fine")
    with pytest.raises(VoteRejected):
        engine.record_vote(CID, juror_id, Vote.FOR_CHALLENGER, "changed my mind")


def test_open_contest_rules(engine):
    with pytest.raises(ContestError):
        engine.open_contest(CID, "creator", 0)
    with pytest.raises(ContestError):
        engine.open_contest(CID, "creator", 1000, verified=False)
    _open(engine)
    with pytest.raises(ContestError):
        _open(engine)
    with pytest.raises(ContestError):
        engine.get("missing")


def test_duplicate_jurors_are_rejected():
    with pytest.raises(ContestError):
        ContestEngine(jurors=[JurorProfile("a"), JurorProfile("a")])


@pytest.mark.parametrize("seed", range(8))
def test_random_contests_conserve_money(juror_pool, seed):
    engine = ContestEngine(
        jurors=juror_pool,
        jury_config=JuryConfig(pool_size=20, panel_size=5, bench_size=5),
        seed=seed,
    )
    for i in range(4):
        content_id = f"content_{i}"
        engine.open_contest(content_id, "creator", 1000 + 37 * seed + i)
        for challenger_id in ("c1", "c2")[: i % 3]:
            engine.submit_challenge(
                content_id, challenger_id, 1000 + 37 * seed + i, "evidence"
            )
        contest = engine.get(content_id)
        if contest.challenge_queue:
            engine.activate_next_challenge(content_id)
        while contest.state == ContestState.DELIBERATING:
            vote = Vote.FOR_CHALLENGER if (seed + i) % 2 else Vote.FOR_CREATOR
            _vote_all(engine, vote, content_id)
            _rate_all(engine, RatingValue(seed % 3), 1, content_id)
            engine.finalize_active_challenge(content_id)
        if contest.state == ContestState.OPEN:
            engine.advance_clock(content_id, contest.challenge_deadline - contest.clock)
            engine.expire_challenge_period(content_id)
        assert contest.state.is_terminal
        _assert_balanced(engine)
        _assert_replays(engine, content_id)
    assert engine.ledger.escrowed() == 0


def test_every_log_prefix_replays(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    engine.submit_challenge(CID, "c2", 1000, "evidence/c2")
    engine.activate_next_challenge(CID)
    _vote_all(engine, Vote.FOR_CREATOR)
    _rate_all(engine)
    engine.finalize_active_challenge(CID)
    log = engine.log(CID)
    for k in range(1, len(log) + 1):
        replay(log.prefix(k))
    assert replay_matches(log, engine.state_hash(CID))


def test_replay_is_independent_of_the_live_generator(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    engine.activate_next_challenge(CID)
    log = EventLog.from_lines(engine.log(CID).to_jsonl().splitlines())
    first = state_hash(replay(log))
    assert state_hash(replay(log)) == first == engine.state_hash(CID)


def test_tampered_payout_fails_replay(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    engine.activate_next_challenge(CID)
    _vote_all(engine, Vote.FOR_CHALLENGER)
    engine.finalize_active_challenge(CID)
    entries = list(engine.log(CID))
    last = entries[-1]
    payout = dict(last.payload["payout"], winner_share=999)
    entries[-1] = LogEntry(
        last.seq, last.tick, last.kind, dict(last.payload, payout=payout)
    )
    with pytest.raises(ReplayError):
        replay(EventLog(CID, entries))


def test_tampered_activation_fails_replay(engine):
    _open(engine)
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    engine.submit_challenge(CID, "c2", 1000, "evidence/c2")
    contest = engine.activate_next_challenge(CID)
    other = ({"c1", "c2"} - {contest.active_challenge.challenger_id}).pop()
    entries = list(engine.log(CID))
    last = entries[-1]
    entries[-1] = LogEntry(
        last.seq,
        last.tick,
        last.kind,
        dict(last.payload, challenger_id=other),
        last.seed_state,
    )
    with pytest.raises(ReplayError):
        replay(EventLog(CID, entries))


def test_replay_needs_an_opening_entry():
    log = EventLog(CID, [LogEntry(0, 0, "advance_clock", {"ticks": 1})])
    with pytest.raises(ReplayError):
        replay(log)


def test_replay_rejects_unknown_events(engine):
    _open(engine)
    entries = list(engine.log(CID)) + [LogEntry(1, 0, "bribe_juror", {})]
    with pytest.raises(ReplayError):
        replay(EventLog(CID, entries))


def _engine(juror_pool, seed):
    return ContestEngine(
        jurors=juror_pool,
        jury_config=JuryConfig(pool_size=len(juror_pool), panel_size=5, bench_size=5),
        timing=ContestTiming(challenge_period=10, deliberation_period=5),
        seed=seed,
    )


def test_activation_draws_uniformly_from_the_queue(juror_pool):
    challengers = ["c1", "c2", "c3", "c4"]
    trials = 10_000
    counts = Counter()
    for seed in range(trials):
        engine = _engine(juror_pool, seed)
        _open(engine)
        for challenger_id in challengers:
            engine.submit_challenge(CID, challenger_id, 1000, "evidence")
        contest = engine.activate_next_challenge(CID)
        counts[contest.active_challenge.challenger_id] += 1
    p = 1 / len(challengers)
    sigma = math.sqrt(trials * p * (1 - p))
    assert set(counts) == set(challengers)
    for challenger_id in challengers:
        assert abs(counts[challenger_id] - trials * p) <= 3 * sigma, counts


def _reach(engine, state):
    _open(engine)
    if state == ContestState.OPEN:
        return
    if state == ContestState.EXPIRED_UNCHALLENGED:
        engine.advance_clock(CID, 10)
        engine.expire_challenge_period(CID)
        return
    engine.submit_challenge(CID, "c1", 1000, "evidence/c1")
    if state == ContestState.CHALLENGED:
        return
    engine.activate_next_challenge(CID)
    if state == ContestState.DELIBERATING:
        return
    if state == ContestState.RESOLVED_FOR_CHALLENGER:
        _vote_all(engine, Vote.FOR_CHALLENGER)
    else:
        _vote_all(engine, Vote.FOR_CREATOR)
        engine.advance_clock(CID, 10)
    engine.finalize_active_challenge(CID)


def _seated_juror(engine):
    jury = engine.get(CID).jury
    return "juror_00" if jury is None else jury.members[0]


EVENTS = {
    "submit_challenge": lambda e: e.submit_challenge(CID, "c9", 1000, "evidence/c9"),
    "activate_next_challenge": lambda e: e.activate_next_challenge(CID),
    "record_vote": lambda e: e.record_vote(
        CID, _seated_juror(e), Vote.FOR_CHALLENGER, "read the sources"
    ),
    "substitute_inactive_juror": lambda e: e.substitute_inactive_juror(
        CID, _seated_juror(e)
    ),
    "decline_juror_bond": lambda e: e.decline_juror_bond(CID, _seated_juror(e)),
    "assign_evaluators": lambda e: e.assign_evaluators(CID, VIEWERS, 2),
    "record_rating": lambda e: e.record_rating(
        CID, "viewer_0", _seated_juror(e), RatingValue.YES
    ),
    "finalize_active_challenge": lambda e: e.finalize_active_challenge(CID),
    "expire_challenge_period": lambda e: e.expire_challenge_period(CID),
    "advance_clock": lambda e: e.advance_clock(CID, 1),
}

S = ContestState
_ALL_REJECTED = {event: ContestStateError for event in EVENTS}

# what each event does from each state: the state it leads to, or the error
TRANSITIONS = {
    S.OPEN: {
        **_ALL_REJECTED,
        "submit_challenge": S.CHALLENGED,
        "advance_clock": S.OPEN,
    },
    S.CHALLENGED: {
        **_ALL_REJECTED,
        "submit_challenge": S.CHALLENGED,
        "activate_next_challenge": S.DELIBERATING,
        "advance_clock": S.CHALLENGED,
    },
    S.DELIBERATING: {
        **_ALL_REJECTED,
        "submit_challenge": S.DELIBERATING,
        "record_vote": S.DELIBERATING,
        "decline_juror_bond": S.DELIBERATING,
        "assign_evaluators": S.DELIBERATING,
        "record_rating": RatingError,
        "finalize_active_challenge": MissingVotesError,
        "advance_clock": S.DELIBERATING,
    },
    S.RESOLVED_FOR_CREATOR: _ALL_REJECTED,
    S.RESOLVED_FOR_CHALLENGER: _ALL_REJECTED,
    S.EXPIRED_UNCHALLENGED: _ALL_REJECTED,
}


def test_transition_table_covers_every_state_and_event():
    assert set(TRANSITIONS) == set(ContestState)
    for row in TRANSITIONS.values():
        assert set(row) == set(EVENTS)


@pytest.mark.parametrize("state", list(ContestState), ids=lambda s: s.value)
@pytest.mark.parametrize("event", list(EVENTS))
def test_every_event_in_every_state(juror_pool, state, event):
    engine = _engine(juror_pool, 11)
    _reach(engine, state)
    assert engine.get(CID).state == state
    expected = TRANSITIONS[state][event]
    before = engine.state_hash(CID)
    entries = len(engine.log(CID))

    if isinstance(expected, ContestState):
        EVENTS[event](engine)
        assert engine.get(CID).state == expected
        _assert_replays(engine)
    else:
        with pytest.raises(expected):
            EVENTS[event](engine)
        # a rejected event leaves no trace
        assert engine.state_hash(CID) == before
        assert len(engine.log(CID)) == entries
    _assert_balanced(engine)


def _active_count(contest):
    challenges = list(contest.challenge_queue) + list(contest.resolved_challenges)
    if contest.active_challenge is not None:
        challenges.append(contest.active_challenge)
    return sum(c.outcome == ChallengeOutcome.ACTIVE for c in challenges)


@pytest.mark.parametrize("seed", range(30))
def test_random_events_never_activate_two_challenges(juror_pool, seed):
    engine = _engine(juror_pool, seed)
    rng = np.random.default_rng(1000 + seed)
    _open(engine)
    contest = engine.get(CID)

    def any_juror():
        pool = contest.jury.members if contest.jury else ["juror_00"]
        return pool[int(rng.integers(len(pool)))]

    moves = [
        lambda: engine.submit_challenge(
            CID, f"c{int(rng.integers(5))}", 1000, "evidence"
        ),
        lambda: engine.activate_next_challenge(CID),
        lambda: engine.record_vote(
            CID,
            any_juror(),
            [Vote.FOR_CREATOR, Vote.FOR_CHALLENGER][int(rng.integers(2))],
            "read the sources",
        ),
        lambda: engine.substitute_inactive_juror(CID, any_juror()),
        lambda: engine.decline_juror_bond(CID, any_juror()),
        lambda: engine.assign_evaluators(CID, VIEWERS, 2),
        lambda: engine.record_rating(
            CID,
            VIEWERS[int(rng.integers(len(VIEWERS)))],
            any_juror(),
            RatingValue(int(rng.integers(3))),
        ),
        lambda: engine.finalize_active_challenge(CID),
        lambda: engine.expire_challenge_period(CID),
        lambda: engine.advance_clock(CID, int(rng.integers(1, 4))),
    ]
    for _ in range(300):
        try:
            moves[int(rng.integers(len(moves)))]()
        except VeracityBondError:
            pass
        assert _active_count(contest) <= 1
        assert (contest.active_challenge is None) == (
            contest.state != ContestState.DELIBERATING
        )
        assert engine.ledger.residual() == 0
        if contest.state.is_terminal:
            break
    _assert_replays(engine)


def _run_to_verdict(engine, content_id):
    engine.open_contest(content_id, f"creator_{content_id}", 1000)
    engine.submit_challenge(content_id, f"challenger_{content_id}", 1000, "evidence")
    engine.activate_next_challenge(content_id)
    _vote_all(engine, Vote.FOR_CHALLENGER, content_id)
    _rate_all(engine, RatingValue.YES, 1, content_id)
    return engine.finalize_active_challenge(content_id).state


def test_threads_share_one_engine():
    jurors = [JurorProfile(f"juror_{i:02d}") for i in range(80)]
    engine = ContestEngine(
        jurors=jurors,
        jury_config=JuryConfig(pool_size=len(jurors), panel_size=5, bench_size=5),
        seed=99,
    )
    content_ids = [f"content_{i}" for i in range(8)]
    with ThreadPoolExecutor(max_workers=4) as pool:
        states = list(pool.map(lambda c: _run_to_verdict(engine, c), content_ids))
    assert states == [ContestState.RESOLVED_FOR_CHALLENGER] * len(content_ids)
    assert engine.ledger.escrowed() == 0
    assert engine.ledger.platform == 100 * len(content_ids)
    assert sum(engine.active_challenges.values()) == 0
    _assert_balanced(engine)
    for content_id in content_ids:
        _assert_replays(engine, content_id)
