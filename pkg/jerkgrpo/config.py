"""
Load experiment configurations from YAML files.

A config file is one YAML mapping with the optional sections `env`,
`policy`, `bc`, `grpo`, `reward`, `demo` and `kinematics`. Missing keys
take their defaults and unknown keys are rejected. For example::

    kinematics:
      link_lengths: [1.0, 1.0]
    env:
      horizon: 40
    grpo:
      group_size: 8
    reward:
      mode: smooth
      lam: 0.2
"""
import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from .demos import DEMO_MODES
from .env import EnvConfig
from .errors import ConfigError, JerkGrpoError
from .kinematics import DERIVATIVE_METHODS, ManipulatorModel
from .policy import PolicyConfig
from .trainer import BcConfig, GrpoConfig, RewardConfig

__all__ = [
    "SECTIONS",
    "DemoConfig",
    "KinematicsConfig",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "config_hash",
]

logger = logging.getLogger(__name__)

SECTIONS = ("env", "policy", "bc", "grpo", "reward", "demo", "kinematics")


@dataclass(frozen=True)
class DemoConfig:
    """
    How scripted demonstrations are generated.
    """

    mode: str = "joint"
    speed_margin: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in DEMO_MODES:
            raise ConfigError(
                f"Unknown demonstration mode '{self.mode}'; use {DEMO_MODES}."
            )


@dataclass(frozen=True)
class KinematicsConfig:
    """
    The arm geometry and how Jacobian derivatives are evaluated.
    """

    link_lengths: Tuple[float, ...] = (1.0, 1.0)
    joint_limits: Tuple[Tuple[float, float], ...] = ((-math.pi, math.pi), (0.1, 2.8))
    derivative_method: str = "analytic"

    def __post_init__(self) -> None:
        if self.derivative_method not in DERIVATIVE_METHODS:
            raise ConfigError(
                f"Unknown derivative method '{self.derivative_method}'; "
                f"use {DERIVATIVE_METHODS}."
            )

    def model(self) -> ManipulatorModel:
        return ManipulatorModel(self.link_lengths, self.joint_limits)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Every setting of an experiment, resolved.
    """

    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    bc: BcConfig = field(default_factory=BcConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    demo: DemoConfig = field(default_factory=DemoConfig)
    kinematics: KinematicsConfig = field(default_factory=KinematicsConfig)

    def as_dict(self) -> Dict[str, Dict[str, Any]]:
        """
        The config as plain JSON-compatible sections.
        """
        sections: Dict[str, Dict[str, Any]] = {}
        for name in SECTIONS:
            values = dataclasses.asdict(getattr(self, name))
            # the arm lives in the kinematics section
            values.pop("model", None)
            sections[name] = json.loads(json.dumps(values))
        return sections


def _coerce(key: str, default: Any, value: Any) -> Any:
    """
    Convert a YAML value to the type of the field's default.
    """
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{key}' must be true or false, got {value!r}.")
        return value

    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{key}' must be an integer, got {value!r}.")
        return value

    if isinstance(default, float) or (default is None and value is not None):
        # YAML 1.1 reads "3e-4" (no dot) as a string
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' must be a number, got {value!r}.")
        return float(value)

    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"'{key}' must be a string, got {value!r}.")
        return value

    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"'{key}' must be a list, got {value!r}.")
        return tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)

    return value


def _section_values(
    name: str, cls: Any, values: Mapping[str, Any], skip: Tuple[str, ...] = ()
) -> Dict[str, Any]:
    """
    Validate the keys of one section against the fields of `cls`.
    """
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls) if f.name not in skip}

    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown keys in section '{name}': {', '.join(unknown)}.")

    return {
        key: _coerce(f"{name}.{key}", getattr(defaults, key), value)
        for key, value in values.items()
    }


def _build(raw: Mapping[str, Any]) -> ExperimentConfig:

    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown config sections: {', '.join(unknown)}.")

    sections = {}
    for name in SECTIONS:
        section = raw.get(name) or {}
        if not isinstance(section, Mapping):
            raise ConfigError(f"Section '{name}' must be a mapping, got {section!r}.")
        sections[name] = section

    def typed(name: str, cls: Any, skip: Tuple[str, ...] = ()) -> Dict[str, Any]:
        return _section_values(name, cls, sections[name], skip=skip)

    try:
        kinematics = KinematicsConfig(**typed("kinematics", KinematicsConfig))
        env = EnvConfig(
            model=kinematics.model(), **typed("env", EnvConfig, skip=("model",))
        )
        return ExperimentConfig(
            env=env,
            policy=PolicyConfig(**typed("policy", PolicyConfig)),
            bc=BcConfig(**typed("bc", BcConfig)),
            grpo=GrpoConfig(**typed("grpo", GrpoConfig)),
            reward=RewardConfig(**typed("reward", RewardConfig)),
            demo=DemoConfig(**typed("demo", DemoConfig)),
            kinematics=kinematics,
        )
    except ConfigError:
        raise
    except (JerkGrpoError, TypeError, ValueError) as err:
        raise ConfigError(f"Invalid configuration: {err}") from err


def _apply_overrides(
    raw: Dict[str, Any], overrides: Mapping[str, Any]
) -> Dict[str, Any]:
    """
    Set dotted keys such as "grpo.seed" in the raw section mapping.
    """
    merged = {name: dict(raw.get(name) or {}) for name in raw}

    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(
                f"Overrides must look like 'section.key', got '{dotted}'."
            )
        merged.setdefault(section, {})[key] = value

    return merged


def parse_config(
    text: str, overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """
    Parse a YAML config document.

    Parameters
    ----------
    text: str
        The YAML source (may be empty for all defaults).
    overrides: Mapping[str, Any], optional
        Dotted keys that replace values from `text`.

    Returns
    -------
    config: ExperimentConfig

    Raises
    ------
    ConfigError:
        If the YAML does not parse or holds invalid settings.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"Unable to parse config: {err}") from err

    raw = {} if raw is None else raw

    if not isinstance(raw, dict):
        raise ConfigError(f"A config must be a YAML mapping, got {type(raw).__name__}.")

    return _build(_apply_overrides(raw, overrides or {}))


def load_config(
    path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """
    Load the config file at `path` (all defaults when None).
    """
    if path is None:
        return parse_config("", overrides)

    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as err:
        raise ConfigError(f"Unable to read config '{path}': {err}") from err

    logger.debug(f"Loaded config from {path}")

    return parse_config(text, overrides)


def config_hash(config: ExperimentConfig) -> str:
    """
    The SHA-256 of the canonical JSON encoding of `config`.
    """
    canonical = json.dumps(config.as_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
