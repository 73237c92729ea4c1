"""JSON configuration documents: schemas, validation and loading."""
import json
import logging
import os
from typing import IO, List, Optional, Tuple, Union

from jsonschema import Draft7Validator
from smart_open import open

from veracity_bond.capacity import (
    DEFAULT_PLATFORMS,
    DEFAULT_STAFFING,
    PlatformRow,
    StaffingConfig,
)
from veracity_bond.contest import ContestTiming
from veracity_bond.jury import Vote
from veracity_bond.money import PayoutPolicy
from veracity_bond.reputation import ReputationParams
from veracity_bond.simulation import AgentKind, AgentStrategy, ScenarioConfig
from veracity_bond.utils import VeracityBondError

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "VERACITY_SEED"

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
SCENARIO_DIR = os.path.join(DATA_DIR, "scenarios")
GOLDEN_DIR = os.path.join(DATA_DIR, "golden")


class ConfigValidationError(VeracityBondError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


_RATIONAL = {
    "oneOf": [
        {"type": "string", "pattern": r"^\s*-?\d+(\.\d+)?(\s*/\s*\d+)?\s*$"},
        {"type": "integer"},
    ]
}
_PROBABILITY = {"type": "number", "minimum": 0, "maximum": 1}
_POSITIVE_INT = {"type": "integer", "minimum": 1}

FEE_CURVE_SCHEMA = {
    "oneOf": [
        {"type": "string", "enum": ["flat", "log_scale"]},
        {
            "type": "object",
            "properties": {
                "kind": {"type": "string", "enum": ["flat", "log_scale"]},
                "base": _RATIONAL,
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
    ]
}

POLICY_SCHEMA = {
    "type": "object",
    "properties": {
        "platform_fraction": _RATIONAL,
        "jury_pool_fraction": _RATIONAL,
        "juror_fee_curve": FEE_CURVE_SCHEMA,
        "gamma": _RATIONAL,
    },
    "additionalProperties": False,
}

TIMING_SCHEMA = {
    "type": "object",
    "properties": {
        "challenge_period": _POSITIVE_INT,
        "deliberation_period": _POSITIVE_INT,
    },
    "additionalProperties": False,
}

REPUTATION_SCHEMA = {
    "type": "object",
    "properties": {
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "inactivity_penalty": {"type": "number", "minimum": 0},
        "threshold": {"type": ["number", "null"]},
        "monetary_scale": {"type": "number", "exclusiveMinimum": 0},
        "high_bond_amount": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

STRATEGY_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"type": "string", "enum": [k.value for k in AgentKind]},
        "count": {"type": "integer", "minimum": 0},
        "accuracy": _PROBABILITY,
        "detection_skill": _PROBABILITY,
        "challenge_rate": _PROBABILITY,
        "error_rate": _PROBABILITY,
        "abstain_prob": _PROBABILITY,
        "bloc_id": {"type": "string"},
        "target_verdict": {
            "type": "string",
            "enum": [Vote.FOR_CREATOR.value, Vote.FOR_CHALLENGER.value],
        },
    },
    "required": ["kind"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "contests": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "beta": _POSITIVE_INT,
        "panel_size": _POSITIVE_INT,
        "policy": POLICY_SCHEMA,
        "timing": TIMING_SCHEMA,
        "reputation": REPUTATION_SCHEMA,
        "truth_probability": {"oneOf": [_PROBABILITY, {"type": "null"}]},
        "viewers": {"type": "integer", "minimum": 0},
        "evaluators_per_contest": {"type": "integer", "minimum": 0},
        "evaluator_noise": _PROBABILITY,
        "challenge_cap": _POSITIVE_INT,
        "strategies": {"type": "array", "items": STRATEGY_SCHEMA, "minItems": 1},
        "collusion_trials": {"type": "integer", "minimum": 1},
    },
    "required": ["strategies"],
    "additionalProperties": False,
}

_PLATFORM_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "posts_per_day": _RATIONAL,
        "challenge_ratio": _RATIONAL,
    },
    "required": ["name", "posts_per_day", "challenge_ratio"],
    "additionalProperties": False,
}

_STAFFING_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "panel_size": _POSITIVE_INT,
        "hours_per_case": _RATIONAL,
        "available_hours": _RATIONAL,
    },
    "required": ["name", "panel_size", "hours_per_case", "available_hours"],
    "additionalProperties": False,
}

CAPACITY_SCHEMA = {
    "type": "object",
    "properties": {
        "platforms": {"type": "array", "items": _PLATFORM_SCHEMA},
        "staffing": {"type": "array", "items": _STAFFING_SCHEMA},
    },
    "additionalProperties": False,
}


def json_path(parts) -> str:
    path = "$"
    for part in parts:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def validate_document(document: dict, schema: dict) -> None:
    """Raise ConfigValidationError for the first schema violation.

    Errors are ordered by location so the same document always reports the
    same field.
    """
    errors = sorted(
        Draft7Validator(schema).iter_errors(document),
        key=lambda e: [str(p) for p in e.absolute_path],
    )
    if errors:
        error = errors[0]
        raise ConfigValidationError(error.message, json_path(error.absolute_path))


def load_json(path_or_file: Union[str, IO]) -> dict:
    try:
        if isinstance(path_or_file, str):
            with open(path_or_file, "r") as f:
                return json.load(f)
        return json.load(path_or_file)
    except json.JSONDecodeError as e:
        raise ConfigValidationError(f"not valid JSON ({e.msg})", f"$ (line {e.lineno})")


def _wrap(build, path: str):
    try:
        return build()
    except (VeracityBondError, ValueError) as e:
        if isinstance(e, ConfigValidationError):
            raise
        raise ConfigValidationError(str(e), path) from e


def policy_from_dict(document: dict) -> PayoutPolicy:
    validate_document(document, POLICY_SCHEMA)
    return _wrap(lambda: PayoutPolicy.from_dict(document), "$")


def strategy_from_dict(document: dict) -> AgentStrategy:
    d = dict(document)
    d["kind"] = AgentKind(d["kind"])
    if "target_verdict" in d:
        d["target_verdict"] = Vote(d["target_verdict"])
    return AgentStrategy(**d)


def resolve_seed(config_seed: Optional[int], cli_seed: Optional[int] = None) -> int:
    """``--seed`` beats ``VERACITY_SEED``, which beats the config file."""
    if cli_seed is not None:
        return cli_seed
    env_seed = os.getenv(SEED_ENV_VAR)
    if env_seed is not None and env_seed.strip():
        try:
            return int(env_seed)
        except ValueError:
            raise ConfigValidationError(
                f"{SEED_ENV_VAR}={env_seed!r} is not an integer", SEED_ENV_VAR
            )
    return 0 if config_seed is None else config_seed


def scenario_from_dict(
    document: dict, cli_seed: Optional[int] = None
) -> ScenarioConfig:
    validate_document(document, SCENARIO_SCHEMA)
    d = dict(document)
    d.pop("collusion_trials", None)
    strategies = []
    for i, s in enumerate(d.pop("strategies")):
        strategies.append(_wrap(lambda: strategy_from_dict(s), f"$.strategies[{i}]"))
    kwargs = {"strategies": strategies}
    if "policy" in d:
        kwargs["policy"] = policy_from_dict(d.pop("policy"))
    if "timing" in d:
        timing = d.pop("timing")
        kwargs["timing"] = _wrap(lambda: ContestTiming(**timing), "$.timing")
    if "reputation" in d:
        reputation = d.pop("reputation")
        if "threshold" not in reputation:
            reputation = {**reputation, "threshold": None}
        kwargs["reputation"] = _wrap(
            lambda: ReputationParams(**reputation), "$.reputation"
        )
    d["seed"] = resolve_seed(d.get("seed"), cli_seed)
    kwargs.update(d)
    config = _wrap(lambda: ScenarioConfig(**kwargs), "$")
    logger.debug("Loaded scenario %s with seed %d", config.name, config.seed)
    return config


def load_scenario(
    path_or_file: Union[str, IO], cli_seed: Optional[int] = None
) -> ScenarioConfig:
    return scenario_from_dict(load_json(path_or_file), cli_seed)


def collusion_trials(document: dict, default: int = 100_000) -> int:
    return document.get("collusion_trials", default)


def capacity_from_dict(
    document: dict,
) -> Tuple[List[PlatformRow], List[StaffingConfig]]:
    """Platform rows and staffing configs, defaulting either list when absent."""
    validate_document(document, CAPACITY_SCHEMA)
    rows = DEFAULT_PLATFORMS
    configs = DEFAULT_STAFFING
    if "platforms" in document:
        rows = [
            _wrap(lambda: PlatformRow(**p), f"$.platforms[{i}]")
            for i, p in enumerate(document["platforms"])
        ]
    if "staffing" in document:
        configs = [
            _wrap(lambda: StaffingConfig(**s), f"$.staffing[{i}]")
            for i, s in enumerate(document["staffing"])
        ]
    return list(rows), list(configs)


def bundled_scenario_path(name: str) -> str:
    """Path of a bundled scenario, accepting ``all-honest`` or ``all_honest``."""
    filename = name.replace("-", "_")
    if not filename.endswith(".json"):
        filename += ".json"
    path = os.path.join(SCENARIO_DIR, filename)
    if not os.path.exists(path):
        available = sorted(f[:-5] for f in os.listdir(SCENARIO_DIR))
        raise ConfigValidationError(
            f"no bundled scenario {name!r}; choose from {available}", "scenario"
        )
    return path


def golden_path(filename: str) -> str:
    return os.path.join(GOLDEN_DIR, filename)
