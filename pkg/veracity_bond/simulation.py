"""Agent-based Monte Carlo runs of the full contest protocol.

A scenario is a population of creators, challengers and jurors with fixed
strategies. Every contest goes through :class:`ContestEngine`, so the
money, jury and reputation rules are the production ones.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import norm, spearmanr

from veracity_bond.collusion import (
    INFINITE_POOL,
    CollusionQuery,
    exact_collusion_probability,
)
from veracity_bond.contest import (
    ChallengeRejected,
    Contest,
    ContestEngine,
    ContestState,
    ContestTiming,
)
from veracity_bond.event_log import EventLog
from veracity_bond.jury import JuryConfig, JurorProfile, RatingValue, Vote
from veracity_bond.money import BETA_0, Money, PayoutPolicy
from veracity_bond.reputation import ReputationParams
from veracity_bond.utils import VeracityBondError

logger = logging.getLogger(__name__)


class ScenarioConfigError(VeracityBondError):
    pass


class AgentKind(Enum):
    HONEST_CREATOR = "honest_creator"
    MISINFO_CREATOR = "misinfo_creator"
    DILIGENT_CHALLENGER = "diligent_challenger"
    FRIVOLOUS_CHALLENGER = "frivolous_challenger"
    DILIGENT_JUROR = "diligent_juror"
    LAZY_JUROR = "lazy_juror"
    COLLUDING_JUROR = "colluding_juror"

    @property
    def role(self) -> str:
        return self.value.split("_")[-1]


_PROBABILITY_FIELDS = (
    "accuracy",
    "detection_skill",
    "challenge_rate",
    "error_rate",
    "abstain_prob",
)


@dataclass(frozen=True)
class AgentStrategy:
    """A block of ``count`` identical agents.

    Only the parameters relevant to ``kind`` are used: ``accuracy`` for
    creators (chance their content is true), ``detection_skill`` for
    diligent challengers (chance they dispute false content),
    ``challenge_rate`` for frivolous challengers (chance they dispute true
    content), ``error_rate`` for diligent and lazy jurors,
    ``abstain_prob`` for lazy jurors, and ``bloc_id``/``target_verdict``
    for colluders.
    """

    kind: AgentKind
    count: int = 1
    accuracy: float = 1.0
    detection_skill: float = 1.0
    challenge_rate: float = 0.0
    error_rate: float = 0.0
    abstain_prob: float = 0.0
    bloc_id: str = "bloc"
    target_verdict: Vote = Vote.FOR_CREATOR

    def __post_init__(self):
        if self.count < 0:
            raise ScenarioConfigError(f"count cannot be negative, got {self.count}")
        for name in _PROBABILITY_FIELDS:
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ScenarioConfigError(f"{name} must be in [0, 1], got {value}")
        if self.target_verdict == Vote.NOT_YET_VOTED:
            raise ScenarioConfigError("A colluding bloc needs a verdict to push")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "count": self.count,
            "accuracy": self.accuracy,
            "detection_skill": self.detection_skill,
            "challenge_rate": self.challenge_rate,
            "error_rate": self.error_rate,
            "abstain_prob": self.abstain_prob,
            "bloc_id": self.bloc_id,
            "target_verdict": self.target_verdict.value,
        }


@dataclass
class ScenarioConfig:
    strategies: List[AgentStrategy]
    name: str = "scenario"
    contests: int = 100
    seed: int = 0
    beta: int = 1000
    panel_size: int = 21
    policy: PayoutPolicy = field(default_factory=PayoutPolicy)
    timing: ContestTiming = field(default_factory=ContestTiming)
    reputation: ReputationParams = field(
        default_factory=lambda: ReputationParams(threshold=None)
    )
    # when set, every piece of content is true with this probability
    truth_probability: Optional[float] = None
    viewers: int = 50
    evaluators_per_contest: int = 3
    evaluator_noise: float = 0.0
    challenge_cap: int = 3

    def __post_init__(self):
        if self.contests < 0:
            raise ScenarioConfigError(
                f"contests cannot be negative, got {self.contests}"
            )
        if self.beta <= 0:
            raise ScenarioConfigError(f"beta must be positive, got {self.beta}")
        if self.truth_probability is not None and not 0 <= self.truth_probability <= 1:
            raise ScenarioConfigError(
                f"truth_probability must be in [0, 1], got {self.truth_probability}"
            )
        if not 0 <= self.evaluator_noise <= 1:
            raise ScenarioConfigError(
                f"evaluator_noise must be in [0, 1], got {self.evaluator_noise}"
            )
        if not self.creators():
            raise ScenarioConfigError("A scenario needs at least one creator")
        jurors = self.jurors()
        if self.panel_size <= 0 or self.panel_size % 2 == 0:
            raise ScenarioConfigError(
                f"panel_size must be a positive odd integer, got {self.panel_size}"
            )
        # a full bench lets every seated juror be replaced once
        if len(jurors) < 2 * self.panel_size:
            raise ScenarioConfigError(
                f"{len(jurors)} jurors cannot seat a panel of {self.panel_size} "
                "with a full bench"
            )
        if self.evaluators_per_contest > self.viewers:
            raise ScenarioConfigError(
                f"{self.evaluators_per_contest} evaluators requested from "
                f"{self.viewers} viewers"
            )

    def _agents(self, roles: Sequence[str]) -> List[Tuple[str, AgentStrategy]]:
        agents = []
        for strategy in self.strategies:
            if strategy.kind.role not in roles:
                continue
            for _ in range(strategy.count):
                agents.append((f"{strategy.kind.value}_{len(agents)}", strategy))
        return agents

    def creators(self) -> List[Tuple[str, AgentStrategy]]:
        return self._agents(["creator"])

    def challengers(self) -> List[Tuple[str, AgentStrategy]]:
        return self._agents(["challenger"])

    def jurors(self) -> List[Tuple[str, AgentStrategy]]:
        return self._agents(["juror"])

    def jury_config(self) -> JuryConfig:
        return JuryConfig(
            pool_size=len(self.jurors()),
            panel_size=self.panel_size,
            gamma=self.policy.gamma,
        )

    def colluder_count(self) -> int:
        return sum(
            s.count for s in self.strategies if s.kind == AgentKind.COLLUDING_JUROR
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "contests": self.contests,
            "seed": self.seed,
            "beta": self.beta,
            "panel_size": self.panel_size,
            "policy": self.policy.to_dict(),
            "timing": {
                "challenge_period": self.timing.challenge_period,
                "deliberation_period": self.timing.deliberation_period,
            },
            "reputation": self.reputation.to_dict(),
            "truth_probability": self.truth_probability,
            "viewers": self.viewers,
            "evaluators_per_contest": self.evaluators_per_contest,
            "evaluator_noise": self.evaluator_noise,
            "challenge_cap": self.challenge_cap,
            "strategies": [s.to_dict() for s in self.strategies],
        }


@dataclass
class EmpiricalRate:
    successes: int
    trials: int
    low: float
    high: float

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "successes": self.successes,
            "trials": self.trials,
            "low": self.low,
            "high": self.high,
        }


def wilson_interval(
    successes: int, trials: int, z: float = None, confidence: float = 0.9973
) -> Tuple[float, float]:
    """Wilson score interval; the default confidence is the 3-sigma band."""
    if trials == 0:
        return 0.0, 1.0
    if z is None:
        z = float(norm.ppf(1 - (1 - confidence) / 2))
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the bounds touch 0 and 1 exactly at the extremes; float error would not
    low = 0.0 if successes == 0 else max(0.0, centre - half)
    high = 1.0 if successes == trials else min(1.0, centre + half)
    return low, high


@dataclass
class ScenarioMetrics:
    name: str
    seed: int
    contests: int
    false_contents: int
    challenged_contests: int
    misinformation_survival_rate: float
    false_challenge_success_rate: float
    collusion: EmpiricalRate
    exact_collusion_probability: float
    outcomes: Dict[str, int]
    payouts_by_role: Dict[str, int]
    net_payoff_by_strategy: Dict[str, int]
    mean_net_payoff_by_strategy: Dict[str, float]
    platform_total: int
    reserve_inflow: int
    escrow_residual: int
    escrow_outstanding: int
    reputation_trajectories: pd.DataFrame = field(repr=False)
    logs: Dict[str, EventLog] = field(default_factory=dict, repr=False)
    state_hashes: Dict[str, str] = field(default_factory=dict, repr=False)

    @property
    def empirical_collusion_rate(self) -> float:
        return self.collusion.rate

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "contests": self.contests,
            "false_contents": self.false_contents,
            "challenged_contests": self.challenged_contests,
            "misinformation_survival_rate": self.misinformation_survival_rate,
            "false_challenge_success_rate": self.false_challenge_success_rate,
            "empirical_collusion": self.collusion.to_dict(),
            "exact_collusion_probability": self.exact_collusion_probability,
            "outcomes": dict(sorted(self.outcomes.items())),
            "payouts_by_role": dict(sorted(self.payouts_by_role.items())),
            "net_payoff_by_strategy": dict(sorted(self.net_payoff_by_strategy.items())),
            "mean_net_payoff_by_strategy": dict(
                sorted(self.mean_net_payoff_by_strategy.items())
            ),
            "platform_total": self.platform_total,
            "reserve_inflow": self.reserve_inflow,
            "escrow_residual": self.escrow_residual,
            "escrow_outstanding": self.escrow_outstanding,
        }


class _ScenarioRun:
    """Mutable state of one scenario run."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.creators = config.creators()
        self.challengers = config.challengers()
        self.juror_strategy = dict(config.jurors())
        self.viewers = [f"viewer_{i}" for i in range(config.viewers)]
        self.engine = ContestEngine(
            jurors=[JurorProfile(juror_id) for juror_id in self.juror_strategy],
            jury_config=config.jury_config(),
            policy=config.policy,
            timing=config.timing,
            rng=self.rng,
            challenge_cap=config.challenge_cap,
            reputation_params=config.reputation,
        )
        self.panels_seated = 0
        self.panels_captured = 0
        self.false_contents = 0
        self.false_survived = 0
        self.challenged_true = 0
        self.true_overturned = 0
        self.challenged = 0
        self.outcomes: Dict[str, int] = {}
        self.trajectory_rows: List[dict] = []

    def _correct_vote(self, content_true: bool) -> Vote:
        return Vote.FOR_CREATOR if content_true else Vote.FOR_CHALLENGER

    def _juror_vote(self, juror_id: str, content_true: bool) -> Vote:
        strategy = self.juror_strategy[juror_id]
        if strategy.kind == AgentKind.COLLUDING_JUROR:
            return strategy.target_verdict
        correct = self._correct_vote(content_true)
        if self.rng.random() < strategy.error_rate:
            if correct == Vote.FOR_CREATOR:
                return Vote.FOR_CHALLENGER
            return Vote.FOR_CREATOR
        return correct

    def _rating_for(self, juror_id: str, vote: Vote, content_true: bool) -> RatingValue:
        if self.rng.random() < self.config.evaluator_noise:
            return RatingValue(int(self.rng.integers(3)))
        strategy = self.juror_strategy[juror_id]
        correct = vote == self._correct_vote(content_true)
        if strategy.kind == AgentKind.COLLUDING_JUROR and not correct:
            return RatingValue.NO
        if strategy.kind == AgentKind.LAZY_JUROR or not correct:
            return RatingValue.NEUTRAL
        return RatingValue.YES

    def _challenges_for(self, content_true: bool) -> List[str]:
        submitting = []
        for challenger_id, strategy in self.challengers:
            if strategy.kind == AgentKind.DILIGENT_CHALLENGER:
                chance = 0.0 if content_true else strategy.detection_skill
            else:
                chance = strategy.challenge_rate if content_true else 0.0
            if self.rng.random() < chance:
                submitting.append(challenger_id)
        order = self.rng.permutation(len(submitting))
        return [submitting[i] for i in order]

    def _deliberate(self, content_id: str, content_true: bool) -> None:
        engine = self.engine
        contest = engine.get(content_id)
        panel = contest.jury
        evaluators = engine.assign_evaluators(
            content_id, self.viewers, self.config.evaluators_per_contest
        )

        abstaining = []
        for juror_id in list(panel.members):
            strategy = self.juror_strategy[juror_id]
            if (
                strategy.kind == AgentKind.LAZY_JUROR
                and self.rng.random() < strategy.abstain_prob
            ):
                abstaining.append(juror_id)
                continue
            vote = self._juror_vote(juror_id, content_true)
            engine.record_vote(
                content_id, juror_id, vote, f"{juror_id} on {content_id}"
            )

        for juror_id in abstaining:
            # a substitution restarts the deadline, so each wait is separate
            engine.advance_clock(
                content_id, contest.deliberation_deadline - contest.clock + 1
            )
            engine.substitute_inactive_juror(content_id, juror_id)
            substitute = panel.substitutions[-1][1]
            vote = self._juror_vote(substitute, content_true)
            engine.record_vote(
                content_id, substitute, vote, f"{substitute} on {content_id}"
            )

        for evaluator_id in evaluators:
            for juror_id in panel.members:
                rating = self._rating_for(juror_id, panel.votes[juror_id], content_true)
                engine.record_rating(content_id, evaluator_id, juror_id, rating)

        colluders = sum(
            1
            for j in panel.members
            if self.juror_strategy[j].kind == AgentKind.COLLUDING_JUROR
        )
        self.panels_seated += 1
        if colluders >= panel.majority:
            self.panels_captured += 1

    def run_contest(self, index: int) -> Contest:
        engine = self.engine
        creator_id, creator = self.creators[int(self.rng.integers(len(self.creators)))]
        truth_p = (
            self.config.truth_probability
            if self.config.truth_probability is not None
            else creator.accuracy
        )
        content_true = bool(self.rng.random() < truth_p)
        content_id = f"content_{index}"
        contest = engine.open_contest(content_id, creator_id, self.config.beta)

        submitted = 0
        for challenger_id in self._challenges_for(content_true):
            try:
                engine.submit_challenge(
                    content_id,
                    challenger_id,
                    self.config.beta,
                    f"evidence/{challenger_id}",
                )
                submitted += 1
            except ChallengeRejected as e:
                logger.debug("Challenge skipped: %s", e)

        if submitted:
            self.challenged += 1
            engine.activate_next_challenge(content_id)
            while contest.state == ContestState.DELIBERATING:
                self._deliberate(content_id, content_true)
                engine.finalize_active_challenge(content_id)
        if contest.state == ContestState.OPEN:
            remaining = contest.challenge_deadline - contest.clock
            if remaining > 0:
                engine.advance_clock(content_id, remaining)
            engine.expire_challenge_period(content_id)

        overturned = contest.state == ContestState.RESOLVED_FOR_CHALLENGER
        if not content_true:
            self.false_contents += 1
            self.false_survived += int(not overturned)
        elif submitted:
            self.challenged_true += 1
            self.true_overturned += int(overturned)
        state = contest.state.value
        self.outcomes[state] = self.outcomes.get(state, 0) + 1

        for juror_id, profile in engine.jurors.items():
            self.trajectory_rows.append(
                {
                    "contest": index,
                    "juror_id": juror_id,
                    "kind": self.juror_strategy[juror_id].kind.value,
                    "reputation": profile.reputation,
                }
            )
        return contest

    def metrics(self) -> ScenarioMetrics:
        config = self.config
        ledger = self.engine.ledger
        agents = (
            [(a, s.kind) for a, s in self.creators]
            + [(a, s.kind) for a, s in self.challengers]
            + [(a, s.kind) for a, s in self.juror_strategy.items()]
        )
        net_by_kind: Dict[str, int] = {}
        members_by_kind: Dict[str, int] = {}
        for agent_id, kind in agents:
            net = ledger.net(agent_id)
            net_by_kind[kind.value] = net_by_kind.get(kind.value, 0) + net
            members_by_kind[kind.value] = members_by_kind.get(kind.value, 0) + 1

        by_role: Dict[str, int] = {"creator": 0, "challenger": 0, "juror": 0}
        kinds = {agent_id: kind for agent_id, kind in agents}
        for contest in self.engine.contests.values():
            for record in contest.payouts:
                by_role[kinds[record["winner_id"]].role] += record["winner_share"]
                by_role["juror"] += sum(share for _, share in record["juror_shares"])
        by_role["platform"] = ledger.platform
        by_role["reserve"] = ledger.reserve

        pool = len(self.juror_strategy)
        query = CollusionQuery(
            panel_size=config.panel_size,
            pool_size=pool,
            colluders=config.colluder_count(),
        )
        low, high = wilson_interval(self.panels_captured, self.panels_seated)

        return ScenarioMetrics(
            name=config.name,
            seed=config.seed,
            contests=config.contests,
            false_contents=self.false_contents,
            challenged_contests=self.challenged,
            misinformation_survival_rate=(
                self.false_survived / self.false_contents
                if self.false_contents
                else 0.0
            ),
            false_challenge_success_rate=(
                self.true_overturned / self.challenged_true
                if self.challenged_true
                else 0.0
            ),
            collusion=EmpiricalRate(
                self.panels_captured, self.panels_seated, low, high
            ),
            exact_collusion_probability=exact_collusion_probability(query).exact_tail,
            outcomes=self.outcomes,
            payouts_by_role=by_role,
            net_payoff_by_strategy=net_by_kind,
            mean_net_payoff_by_strategy={
                k: net_by_kind[k] / members_by_kind[k] for k in net_by_kind
            },
            platform_total=ledger.platform,
            reserve_inflow=ledger.reserve,
            escrow_residual=ledger.residual(),
            escrow_outstanding=ledger.escrowed(),
            reputation_trajectories=pd.DataFrame(
                self.trajectory_rows,
                columns=["contest", "juror_id", "kind", "reputation"],
            ),
            logs=dict(self.engine.logs),
            state_hashes={
                cid: self.engine.state_hash(cid) for cid in self.engine.contests
            },
        )


def run_scenario(config: ScenarioConfig) -> ScenarioMetrics:
    run = _ScenarioRun(config)
    for index in range(config.contests):
        run.run_contest(index)
    metrics = run.metrics()
    logger.info(
        "Scenario %s (seed %d): %d contests, survival %.4f",
        config.name,
        config.seed,
        config.contests,
        metrics.misinformation_survival_rate,
    )
    return metrics


def run_scenario_sweep(
    configs: Sequence[ScenarioConfig], max_workers: int = 1
) -> List[ScenarioMetrics]:
    """Run independent scenarios, in a process pool when max_workers > 1."""
    if max_workers <= 1:
        return [run_scenario(c) for c in configs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run_scenario, configs))


def empirical_collusion_rate(
    config: Union[ScenarioConfig, CollusionQuery],
    trials: int,
    rng: np.random.Generator = None,
) -> EmpiricalRate:
    """Seat ``trials`` random panels and count bloc majorities.

    A finite pool draws the seated colluder count without replacement; an
    infinite pool seats each juror independently.
    """
    if isinstance(config, ScenarioConfig):
        query = CollusionQuery(
            panel_size=config.panel_size,
            pool_size=len(config.jurors()),
            colluders=config.colluder_count(),
        )
        rng = rng if rng is not None else np.random.default_rng(config.seed)
    else:
        query = config
        rng = rng if rng is not None else np.random.default_rng()
    if trials <= 0:
        raise ScenarioConfigError(f"trials must be positive, got {trials}")

    n = query.panel_size
    if query.is_infinite:
        seated = rng.binomial(n, float(query.ratio), size=trials)
    elif query.colluders == 0:
        seated = np.zeros(trials, dtype=int)
    elif query.colluders == query.pool_size:
        seated = np.full(trials, n)
    else:
        seated = rng.hypergeometric(
            query.colluders, query.pool_size - query.colluders, n, size=trials
        )
    successes = int((seated >= query.threshold).sum())
    low, high = wilson_interval(successes, trials)
    return EmpiricalRate(successes, trials, low, high)


def visibility_rank(
    contents: Sequence[Tuple[str, Union[int, Money], float]], weight: float = 1.0
) -> List[Tuple[str, float]]:
    """Order content by base score boosted by the size of its bond."""
    scored = []
    for content_id, beta, base_score in contents:
        amount = Money.of(beta).amount
        boost = 1 + weight * math.log1p(amount / BETA_0)
        scored.append((content_id, base_score * boost))
    return sorted(scored, key=lambda item: (-item[1], item[0]))


def incentive_trend(
    values: Sequence[float],
    metrics: Sequence[ScenarioMetrics],
    attribute: str = "misinformation_survival_rate",
) -> float:
    """Spearman correlation between a swept parameter and a metric.

    A metric that never moves has no rank order and reports 0.
    """
    observed = [getattr(m, attribute) for m in metrics]
    if len(set(observed)) < 2 or len(set(values)) < 2:
        return 0.0
    return float(spearmanr(values, observed).correlation)


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(config, seed=seed)


def sweep_parameter(
    config: ScenarioConfig,
    kind: AgentKind,
    name: str,
    values: Sequence[float],
) -> List[ScenarioConfig]:
    """Copies of ``config`` with ``name`` set to each value on every ``kind`` block."""
    if name not in _PROBABILITY_FIELDS:
        raise ScenarioConfigError(f"Cannot sweep {name}")
    configs = []
    for value in values:
        strategies = [
            replace(s, **{name: value}) if s.kind == kind else s
            for s in config.strategies
        ]
        configs.append(
            replace(config, strategies=strategies, name=f"{config.name}:{name}={value}")
        )
    return configs


__all__ = [
    "AgentKind",
    "AgentStrategy",
    "EmpiricalRate",
    "INFINITE_POOL",
    "ScenarioConfig",
    "ScenarioConfigError",
    "ScenarioMetrics",
    "empirical_collusion_rate",
    "incentive_trend",
    "run_scenario",
    "run_scenario_sweep",
    "sweep_parameter",
    "visibility_rank",
    "wilson_interval",
    "with_seed",
]
