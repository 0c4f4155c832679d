"""
Run-level configuration: the validated RunConfig, line-oriented key=value
config files and run manifests
"""

# Standard
from typing import Dict, Iterable, Literal, Mapping, Optional, Tuple
import hashlib
import os

# Third Party
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
import numpy as np
import pydantic

# Local
from . import constants
from .demand import DemandSpec, is_admissible
from .errors import ConfigurationError
from .instruments import (
    REFERENCE_NON_MACHINERY,
    REFERENCE_SINGLE_PRODUCT,
    WEIGHTING_UNWEIGHTED,
    WEIGHTING_VALUE,
    InstrumentConfig,
)
from .log import log
from .outcomes import ME_AT_MEANS, ME_AVERAGE, ProbitSpec
from .panel import IngestConfig
from .pipeline import PipelineSpec
from .production import MODE_NONPARAMETRIC, MODE_SEMIPARAMETRIC, PRESETS, moment_preset
from .shares import MarketSizeRule

MANIFEST_HEADER = "# prodloom run manifest"

## RunConfig ###################################################################


class RunConfig(BaseModel):
    """Everything a CLI run depends on. Two runs with equal configs and equal
    input files produce byte-identical outputs.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: str
    data: Optional[str] = None
    concordance: Optional[str] = None
    strict_concordance: bool = True
    market_sizes: Optional[str] = None
    kappa: float = constants.DEFAULT_KAPPA
    tau: float = constants.DEFAULT_TAU
    grid: Tuple[float, float, float] = constants.DEFAULT_GRID
    demand_mode: Optional[Literal["estimate", "calibrate"]] = None
    calibrate: Optional[Tuple[float, float]] = None
    nest_count_instrument: bool = False
    reference: Literal[REFERENCE_SINGLE_PRODUCT, REFERENCE_NON_MACHINERY] = REFERENCE_SINGLE_PRODUCT
    weighting: Literal[WEIGHTING_UNWEIGHTED, WEIGHTING_VALUE] = WEIGHTING_UNWEIGHTED
    min_contributors: int = Field(constants.DEFAULT_MIN_CONTRIBUTORS, ge=1)
    pooled_shares: bool = False
    gmm_preset: str = "col3"
    me_kind: Literal[ME_AT_MEANS, ME_AVERAGE] = ME_AT_MEANS
    bootstrap: int = Field(0, ge=0)
    mode: Literal[MODE_NONPARAMETRIC, MODE_SEMIPARAMETRIC] = MODE_NONPARAMETRIC
    seed: Optional[int] = None
    jobs: int = -1
    n_plants: int = Field(500, ge=2)
    n_years: int = Field(8, ge=3)
    out: str = "."

    @field_validator("tau")
    @classmethod
    def _tau_range(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"Threshold tau must be in [0, 1] (got {value})")
        return value

    @field_validator("grid", mode="before")
    @classmethod
    def _parse_grid(cls, value):
        if isinstance(value, str):
            return parse_grid(value)
        return value

    @field_validator("grid")
    @classmethod
    def _grid_range(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        start, stop, step = value
        if not (0.0 <= start <= stop <= 1.0 and step > 0):
            raise ValueError(f"Grid must satisfy 0 <= a <= b <= 1 and step > 0 (got {value})")
        return value

    @field_validator("calibrate", mode="before")
    @classmethod
    def _parse_calibrate(cls, value):
        if isinstance(value, str):
            return parse_calibration(value)
        return value

    @field_validator("calibrate")
    @classmethod
    def _calibrate_admissible(cls, value):
        if value is not None and not is_admissible(*value):
            raise ValueError(f"Calibrated demand needs alpha > 0 and 0 < sigma < 1 (got {value})")
        return value

    @field_validator("gmm_preset")
    @classmethod
    def _known_preset(cls, value: str) -> str:
        if value not in PRESETS:
            raise ValueError(f"Unknown GMM preset '{value}' (choose from {sorted(PRESETS)})")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        if self.demand_mode == "estimate" and self.calibrate is not None:
            raise ValueError("demand_mode=estimate excludes calibrate")
        if self.demand_mode == "calibrate" and self.calibrate is None:
            raise ValueError("demand_mode=calibrate needs calibrate=alpha=..,sigma=..")
        if self.bootstrap and self.seed is None:
            raise ValueError(
                f"Bootstrap runs need a seed (--seed or {constants.SEED_ENV_VAR})"
            )
        if self.bootstrap == 1:
            raise ValueError("Bootstrap needs at least 2 replications")
        if self.mode == MODE_SEMIPARAMETRIC and self.calibrate is not None:
            raise ValueError("Semi-parametric draws need estimated demand, not a calibration")
        return self

    ## Derived views ##

    @property
    def calibration(self) -> Optional[Tuple[float, float]]:
        return tuple(self.calibrate) if self.calibrate is not None else None

    @property
    def resolved_demand_mode(self) -> str:
        return "calibrate" if self.calibrate is not None else "estimate"

    def data_path(self, name: str) -> str:
        if self.data is None:
            raise ConfigurationError(f"'{self.command}' needs a data directory (--data)")
        return os.path.join(self.data, name)

    def ingest_config(self) -> IngestConfig:
        return IngestConfig(strict_concordance=self.strict_concordance)

    def pipeline_spec(self) -> PipelineSpec:
        rule = (
            MarketSizeRule.from_csv(self.market_sizes)
            if self.market_sizes
            else MarketSizeRule(kappa=self.kappa)
        )
        extra = ("nest_count",) if self.nest_count_instrument else ()
        return PipelineSpec(
            market_size_rule=rule,
            instrument=InstrumentConfig(
                reference=self.reference,
                weighting=self.weighting,
                min_contributors=self.min_contributors,
                pooled_shares=self.pooled_shares,
            ),
            demand=DemandSpec(extra_instruments=extra),
            moments=moment_preset(self.gmm_preset),
            probit=ProbitSpec(me_kind=self.me_kind),
        )

    def manifest_entries(self) -> Dict[str, str]:
        """Canonical key=value echo of every field that can change outputs"""
        entries = {}
        for key, value in self.model_dump(exclude={"jobs"}).items():
            entries[key] = _render(value)
        entries["demand_mode"] = self.resolved_demand_mode
        return entries


## Public ######################################################################


def parse_grid(text: str) -> Tuple[float, float, float]:
    """Parse a:b:step"""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigurationError(f"Grid must look like a:b:step (got '{text}')")
    try:
        start, stop, step = (float(part) for part in parts)
    except ValueError as err:
        raise ConfigurationError(f"Grid must look like a:b:step (got '{text}')") from err
    return start, stop, step


def parse_calibration(text: str) -> Tuple[float, float]:
    """Parse alpha=..,sigma=.."""
    values = {}
    for item in text.split(","):
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigurationError(f"Calibration must look like alpha=..,sigma=.. (got '{text}')")
        try:
            values[key.strip()] = float(val)
        except ValueError as err:
            raise ConfigurationError(f"Non-numeric calibration value '{val}'") from err
    if set(values) != {"alpha", "sigma"}:
        raise ConfigurationError(f"Calibration needs exactly alpha and sigma (got {sorted(values)})")
    return values["alpha"], values["sigma"]


def read_config_file(path: str) -> Dict[str, str]:
    """Read a key=value file; '#' starts a comment line, blank lines are
    ignored and dashes in keys become underscores
    """
    values = {}
    with open(path, encoding="utf-8") as handle:
        for number, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigurationError(f"{path}:{number}: expected key=value, got '{line}'")
            values[key.strip().replace("-", "_")] = value.strip()
    log.debug2("Read %d config values from %s", len(values), path)
    return values


def load_run_config(
    command: str,
    config_path: Optional[str] = None,
    overrides: Optional[Mapping[str, object]] = None,
) -> RunConfig:
    """Build a RunConfig from an optional config file overlaid by explicit
    values (None values are ignored). The seed falls back to PRODLOOM_SEED.

    Raises:
        ConfigurationError
            Any validation failure
    """
    values: Dict[str, object] = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    values.update({key: val for key, val in (overrides or {}).items() if val is not None})
    if values.get("seed") in (None, "") and os.environ.get(constants.SEED_ENV_VAR):
        values["seed"] = os.environ[constants.SEED_ENV_VAR]
    values["command"] = command
    try:
        return RunConfig(**values)
    except pydantic.ValidationError as err:
        messages = [
            "{}: {}".format(".".join(str(part) for part in item["loc"]) or "config", item["msg"])
            for item in err.errors()
        ]
        raise ConfigurationError("; ".join(messages)) from err


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(path: str, entries: Mapping[str, object], files: Iterable[str]) -> str:
    """Write a manifest: sorted key=value config echo followed by one
    sha256.<file>=<hex> line per output file (no timestamps)
    """
    lines = [MANIFEST_HEADER]
    lines.extend(f"{key}={_render(entries[key])}" for key in sorted(entries))
    for file_path in sorted(files, key=os.path.basename):
        lines.append(f"sha256.{os.path.basename(file_path)}={file_sha256(file_path)}")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    log.debug("Wrote manifest %s covering %d files", path, len(lines) - 1 - len(entries))
    return path


def read_manifest(path: str) -> Dict[str, str]:
    """Inverse of write_manifest (header and comments skipped)"""
    entries = {}
    with open(path, encoding="utf-8") as handle:
        for raw in handle:
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key] = value
    return entries


## Implementation Details ######################################################


def _render(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return np.format_float_positional(value, trim="-")
    if isinstance(value, (tuple, list)):
        return ":".join(_render(item) for item in value)
    return str(value)
