"""
Run configuration: defaults file, environment override and seed streams.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from errors import DataError
from physical_constants import CONSTANTS, PhysicalConstants

CONFIG_ENV_VAR = "PURCELL_CONFIG"
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "purcell_config.json"
MAX_SEED = 2**64


class ConstantsConfig(BaseModel):
    planck: float = Field(default=CONSTANTS.planck, gt=0)
    boltzmann: float = Field(default=CONSTANTS.boltzmann, gt=0)


class SivConfig(BaseModel):
    """SiV susceptibilities; d and f are illustrative unless measured"""
    lambda_so_gs: float = Field(default=46.0, gt=0)
    lambda_so_es: float = Field(default=255.0, gt=0)
    d: float = 1.3e6
    f: float = -1.7e6
    gyro: float = Field(default=2.8, gt=0)


class ToleranceConfig(BaseModel):
    xtol: float = Field(default=1e-10, gt=0)
    gtol: float = Field(default=1e-12, gt=0)
    max_iterations: int = Field(default=200, gt=0)


class RunConfig(BaseModel):
    constants: ConstantsConfig = Field(default_factory=ConstantsConfig)
    siv: SivConfig = Field(default_factory=SivConfig)
    tolerances: ToleranceConfig = Field(default_factory=ToleranceConfig)
    output_dir: str = "purcell_out"
    log_dir: str = "_purcell_runs"
    seed: int = 20240601

    @field_validator("seed")
    @classmethod
    def _seed_is_u64(cls, value: int) -> int:
        if not 0 <= value < MAX_SEED:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return value

    def physical_constants(self) -> PhysicalConstants:
        return PhysicalConstants(planck=self.constants.planck, boltzmann=self.constants.boltzmann)

    def siv_parameters(self):
        from siv_model import SivParameters

        return SivParameters(**self.siv.model_dump())

    def fit_tolerances(self):
        from fit_core import Tolerances

        return Tolerances(
            xtol=self.tolerances.xtol,
            gtol=self.tolerances.gtol,
            max_iterations=self.tolerances.max_iterations,
        )


def resolve_config_path(explicit: Optional[Union[str, Path]] = None) -> Optional[Path]:
    """Flag, then environment variable, then the bundled defaults file"""
    if explicit:
        return Path(explicit)
    load_dotenv()
    from_env = os.environ.get(CONFIG_ENV_VAR)
    if from_env:
        return Path(from_env)
    if DEFAULT_CONFIG_PATH.exists():
        return DEFAULT_CONFIG_PATH
    return None


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load run configuration"""
    config_path = resolve_config_path(path)
    if config_path is None:
        return RunConfig()
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise DataError(f"config file not found: {config_path}")
    except json.JSONDecodeError as e:
        raise DataError(f"config file is not valid JSON: {e.msg}", line=e.lineno)
    data.pop("description", None)
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise DataError(f"invalid configuration: {e.errors()[0]['msg']}")


def derive_seed(seed: int, label: str) -> int:
    """64-bit stream seed from the global seed and a label"""
    digest = hashlib.sha256(f"{seed}\x00{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
