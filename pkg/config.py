import json
import os
from pathlib import Path
from typing import Any, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from errors import SpecValidationError
from polarization import DEFAULT_BETA, ModelTag, validate_beta, validate_delta
from sources import JointSourceSpec, TestChannel, load_source_spec
from utils import is_power_of_two

# Load environment variables first
load_dotenv()

OUTPUT_DIR = Path(os.getenv("POLARKEY_OUTPUT_DIR", "./polarkey_out"))
LOG_LEVEL = os.getenv("POLARKEY_LOG_LEVEL", "INFO")
WORKERS = int(os.getenv("POLARKEY_WORKERS", "1"))
BETA = float(os.getenv("POLARKEY_BETA", str(DEFAULT_BETA)))


class ExperimentConfig(BaseModel):
    """Everything one construct/run/oracle invocation needs"""

    model_config = ConfigDict(protected_namespaces=(), extra="forbid")

    model: ModelTag
    source: JointSourceSpec
    channel: Optional[TestChannel] = None
    n: int = 8
    k: int = Field(default=1, ge=1)
    beta: float = BETA
    delta: Optional[float] = None
    delta_high: Optional[float] = None
    delta_very_high: Optional[float] = None
    method: Literal["exact", "mc"] = "exact"
    samples: int = Field(default=10_000, ge=1)
    trials: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=WORKERS, ge=1)
    out: Path = OUTPUT_DIR
    exact_metrics: bool = True

    @field_validator("n")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if not is_power_of_two(value):
            raise ValueError(f"N must be a power of 2, got {value}")
        return value

    @field_validator("beta")
    @classmethod
    def _beta_range(cls, value: float) -> float:
        validate_beta(value)
        return value

    @model_validator(mode="after")
    def _deltas(self) -> "ExperimentConfig":
        for value in (self.delta, self.delta_high, self.delta_very_high):
            if value is not None:
                validate_delta(value)
        if self.model == "model3-tri" and self.source.terminals != 3:
            raise ValueError("model3-tri needs a three-terminal source")
        if self.model == "model4" and self.source.variant != "markov_tree":
            raise ValueError("model4 needs a markov_tree source")
        if self.model == "model3-star" and self.source.variant not in ("broadcast_star", "generic_table"):
            raise ValueError("model3-star needs a broadcast_star or generic_table source")
        return self


def _read_json(path: Path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SpecValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SpecValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise SpecValidationError(f"config file {path} must hold a JSON object")
    return data


def build_config(config_path: Optional[Path] = None, source_path: Optional[Path] = None, **overrides: Any) -> ExperimentConfig:
    """Merge a JSON config file, a separate source file and CLI flags.

    Flags left as None keep the file's value (or the default).
    """
    data: dict[str, Any] = _read_json(config_path) if config_path else {}
    if source_path is not None:
        try:
            data["source"] = load_source_spec(source_path).model_dump(mode="json")
        except FileNotFoundError:
            raise SpecValidationError(f"source file not found: {source_path}") from None
        except ValidationError as exc:
            raise SpecValidationError(f"invalid source specification in {source_path}: {exc}") from None
    data.update({name: value for name, value in overrides.items() if value is not None})
    if "source" not in data:
        raise SpecValidationError("no source given: pass --source or a config file with a 'source' entry")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise SpecValidationError(f"invalid configuration: {exc}") from None


def load_experiment_config(path: Path) -> ExperimentConfig:
    return build_config(config_path=path)
