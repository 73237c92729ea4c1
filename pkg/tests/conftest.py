import numpy as np
import pandas as pd
import pytest

from veracity_bond.contest import ContestEngine, ContestTiming
from veracity_bond.jury import JuryConfig, JurorProfile
from veracity_bond.money import PayoutPolicy
from veracity_bond.simulation import AgentKind, AgentStrategy, ScenarioConfig


@pytest.fixture
def juror_pool():
    return [JurorProfile(f"juror_{i:02d}") for i in range(20)]


@pytest.fixture
def policy():
    return PayoutPolicy()


@pytest.fixture
def engine(juror_pool, policy):
    return ContestEngine(
        jurors=juror_pool,
        jury_config=JuryConfig(pool_size=len(juror_pool), panel_size=5, bench_size=5),
        policy=policy,
        timing=ContestTiming(challenge_period=10, deliberation_period=5),
        seed=1234,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def honest_scenario():
    return ScenarioConfig(
        strategies=[
            AgentStrategy(AgentKind.HONEST_CREATOR, count=3, accuracy=1.0),
            AgentStrategy(AgentKind.MISINFO_CREATOR, count=2, accuracy=0.0),
            AgentStrategy(AgentKind.DILIGENT_CHALLENGER, count=2, detection_skill=1.0),
            AgentStrategy(AgentKind.DILIGENT_JUROR, count=14),
        ],
        name="honest",
        contests=20,
        seed=3,
        panel_size=5,
        viewers=10,
        timing=ContestTiming(challenge_period=10, deliberation_period=5),
    )


@pytest.fixture
def scenario_document():
    return {
        "name": "small",
        "seed": 5,
        "contests": 10,
        "panel_size": 5,
        "viewers": 10,
        "timing": {"challenge_period": 10, "deliberation_period": 5},
        "strategies": [
            {"kind": "honest_creator", "count": 2, "accuracy": 0.5},
            {"kind": "diligent_challenger", "count": 2},
            {"kind": "diligent_juror", "count": 12},
        ],
    }


@pytest.fixture
def results_table():
    return pd.DataFrame(
        {
            "panel_size": [11, 21, 101],
            "ratio": ["0.30", "0.10", "0.05"],
            "exact_tail": [0.0782, 1.35e-06, 0.0],
            "clamped": [False, False, True],
            "display": ["7.82e-02", "1.35e-06", "<1e-10"],
        }
    )


@pytest.fixture
def results_meta():
    return {
        "name": "results",
        "columns": [
            {"name": "panel_size", "type": "int64"},
            {"name": "ratio", "type": "string"},
            {"name": "exact_tail", "type": "float64"},
            {"name": "clamped", "type": "bool"},
            {"name": "display", "type": "string"},
        ],
    }
