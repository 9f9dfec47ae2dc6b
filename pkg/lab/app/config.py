"""
Experiment configuration.

Configs are flat `key = value` text with dotted namespaces, `#` comments and
comma-separated lists:

    experiment = resolvent
    seed = 7
    resolvent.h_grid = 0.125, 0.0625, 0.03125, 0.015625
    resolvent.kappa = 1

parse_config validates the text against ExperimentConfig; format_config is its inverse.
"""

import logging
import os
import re
import types
from typing import Literal, Union, get_args, get_origin

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_DIR = os.getenv("TUBELAB_OUTPUT_DIR", "results")

EXPERIMENTS = ("concentration", "projector", "resolvent", "dampedwave", "oscint", "selftest")

KEY_PATTERN = re.compile(r"[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)?")
PATCH_PATTERN = re.compile(r"^(equator|poles|x\d+):\s*[0-9.eE+-]+$")


def _list_annotation(annotation) -> bool:
    if get_origin(annotation) is list:
        return True
    if get_origin(annotation) in (Union, types.UnionType):
        return any(get_origin(arg) is list for arg in get_args(annotation))
    return False


class Section(BaseModel):
    """Base for config sections: unknown keys rejected, comma lists split."""

    model_config = ConfigDict(extra="forbid", validate_default=True)

    @field_validator("*", mode="before")
    @classmethod
    def _split_text(cls, value, info):
        if not isinstance(value, str):
            return value
        if value.strip().lower() == "none":
            return None
        if _list_annotation(cls.model_fields[info.field_name].annotation):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value.strip()


class ManifoldSection(Section):
    kind: Literal["sphere", "torus"] = "sphere"
    dim: int = Field(default=2, ge=1)
    periods: list[float] | None = None


class SubmanifoldSection(Section):
    kind: Literal["great_subsphere", "pole_pair", "subtorus"] = "great_subsphere"
    dim: int = Field(default=1, ge=0)
    mask: list[bool] | None = None


class ConcentrationSection(Section):
    mode: Literal["highest_weight", "zonal", "plane_wave", "quasimode"] = "highest_weight"
    j_list: list[int] = Field(default=[64, 128, 256], min_length=1)
    alphas: list[float] = Field(default=[0.0625, 0.125, 0.25, 0.5], min_length=1)
    wavevector: list[int] = Field(default=[0, 8], min_length=1)
    frequency: float = Field(default=20.0, gt=0)
    width: float = Field(default=1.0, gt=0)
    truncation: int | None = None
    resolution: list[int] | None = None
    c_max: float | None = None
    slope_tolerance: float = Field(default=0.15, gt=0)

    @field_validator("alphas")
    @classmethod
    def _check_alphas(cls, value):
        if any(a <= 0 or a > 1 for a in value):
            raise ValueError("alphas must lie in (0, 1]")
        return value


class ProjectorSection(Section):
    center: float = Field(default=64.0, gt=0)
    truncation: int = Field(default=10, ge=1)
    trials: int = Field(default=20, ge=1)
    alphas: list[float] = Field(default=[0.0625, 0.125, 0.25, 0.5], min_length=1)
    exponent_tolerance: float = Field(default=0.1, gt=0)
    eps0: float = Field(default=0.05, gt=0, lt=1)
    resolution: list[int] | None = None
    c_max: float | None = Field(default=None, gt=0)


class ResolventSection(Section):
    h_grid: list[float] = Field(default=[0.125, 0.0625, 0.03125, 0.015625], min_length=1)
    kappa: float = Field(default=1.0, gt=0)
    damping: Literal["surrogate", "distance_power", "constant"] = "surrogate"
    amplitude: float = Field(default=1.0, ge=0)
    truncation: int | None = None
    snap: bool = True
    quasimodes: bool = True
    spread_bound: float = Field(default=3.0, gt=1)
    identity_trials: int = Field(default=100, ge=0)
    truncation_check: bool = False

    @field_validator("h_grid")
    @classmethod
    def _check_h(cls, value):
        if any(h <= 0 or h >= 1 for h in value):
            raise ValueError("h values must lie in (0, 1)")
        return value


class DampedwaveSection(Section):
    truncation: int = Field(default=7, ge=1)
    frequency: float = Field(default=20.0, gt=0)
    width: float = Field(default=2.0, gt=0)
    dt: float = Field(default=0.02, gt=0)
    horizons: list[float] = Field(default=[100.0, 200.0], min_length=1)
    stride: int = Field(default=10, ge=1)
    kappa: float = Field(default=1.0, gt=0)
    damping: Literal["surrogate", "distance_power", "constant"] = "surrogate"
    amplitude: float = Field(default=1.0, ge=0)
    patches: list[str] | None = None
    conservation_horizon: float = Field(default=100.0, ge=0)

    @field_validator("patches")
    @classmethod
    def _check_patches(cls, value):
        for token in value or []:
            if not PATCH_PATTERN.match(token):
                raise ValueError(f"patch {token!r} is not of the form equator:K, poles:K or xI:K")
        return value


class OscintSection(Section):
    phase: Literal["bilinear", "regularized_distance"] = "bilinear"
    dim: int = Field(default=2, ge=1)
    delta: float = Field(default=0.0, ge=0)
    lambdas: list[float] = Field(default=[8.0, 16.0, 32.0, 64.0], min_length=1)
    p: int | None = None
    oversampling: float = Field(default=8.0, gt=0)
    min_nodes: int = Field(default=16, ge=2)
    tolerance: float = Field(default=0.15, gt=0)
    x_center: list[float] | None = None
    x_radius: list[float] | None = None
    xi_center: list[float] | None = None
    xi_radius: list[float] | None = None
    hessian_trials: int = Field(default=100, ge=0)


class SelftestSection(Section):
    triples: int = Field(default=1000, ge=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    experiment: Literal[
        "concentration", "projector", "resolvent", "dampedwave", "oscint", "selftest"
    ]
    seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: str = DEFAULT_OUTPUT_DIR
    manifold: ManifoldSection = Field(default_factory=ManifoldSection)
    submanifold: SubmanifoldSection = Field(default_factory=SubmanifoldSection)
    concentration: ConcentrationSection = Field(default_factory=ConcentrationSection)
    projector: ProjectorSection = Field(default_factory=ProjectorSection)
    resolvent: ResolventSection = Field(default_factory=ResolventSection)
    dampedwave: DampedwaveSection = Field(default_factory=DampedwaveSection)
    oscint: OscintSection = Field(default_factory=OscintSection)
    selftest: SelftestSection = Field(default_factory=SelftestSection)


SECTIONS = tuple(
    name
    for name, field in ExperimentConfig.model_fields.items()
    if isinstance(field.annotation, type) and issubclass(field.annotation, Section)
)


def parse_config(text: str, defaults: dict | None = None) -> ExperimentConfig:
    """
    Parse and validate config text.

    Args:
        text: `key = value` lines
        defaults: Top-level values used when the text does not set them

    Returns:
        ExperimentConfig with defaults filled in

    Raises:
        ConfigError: malformed or duplicate line (with line number), or a value or key
            rejected by validation (with the dotted field name)
    """
    raw: dict = {}
    lines: dict[str, int] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", line=number)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if not KEY_PATTERN.fullmatch(key):
            raise ConfigError(f"invalid key {key!r}", line=number)
        if key in lines:
            raise ConfigError(
                f"duplicate key {key!r} (first set on line {lines[key]})", line=number
            )
        lines[key] = number
        if "." in key:
            section, name = key.split(".", 1)
            target = raw.setdefault(section, {})
            if not isinstance(target, dict):
                raise ConfigError(f"{section!r} is not a section", line=number)
            target[name] = value
        else:
            if key in raw:
                raise ConfigError(f"{key!r} is a section", line=number)
            raw[key] = value

    for key, value in (defaults or {}).items():
        raw.setdefault(key, value)

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"])
        key = ".".join(str(part) for part in error["loc"][:2])
        message = "unknown key" if error["type"] == "extra_forbidden" else error["msg"]
        logger.error(f"Invalid config field {field}: {message}")
        raise ConfigError(message, line=lines.get(key), field=field) from e


def load_config(path: str, defaults: dict | None = None) -> ExperimentConfig:
    """Read and parse a config file."""
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    return parse_config(text, defaults)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(config: ExperimentConfig) -> str:
    """Serialize a config so that parse_config(format_config(c)) == c."""
    out = [
        f"experiment = {config.experiment}",
        f"seed = {config.seed}",
        f"output_dir = {config.output_dir}",
    ]
    for section in SECTIONS:
        out.append("")
        for name, value in getattr(config, section).model_dump().items():
            out.append(f"{section}.{name} = {_format_value(value)}")
    return "\n".join(out) + "\n"
