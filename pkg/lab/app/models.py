import numpy as np
from pydantic import BaseModel, Field, field_serializer

from app.scaling import ScalingFit


class Curve(BaseModel):
    """Plot-ready (abscissa, ordinate) series, usually the data behind one fit."""

    name: str
    x_label: str
    y_label: str
    x: list[float]
    y: list[float]


class RunReport(BaseModel):
    """
    Result of one experiment run.

    Attributes:
        experiment: Experiment name, also the stem of every output file
        seed: Seed the run was made with
        config: Validated config as a plain dict
        columns: CSV header
        rows: One row per sample, aligned with columns
        fits: Log-log fits by quantity
        certificates: Named numbers backing the verdicts
        verdicts: Named pass/fail checks; the run passes when all of them do
        curves: Plot data
        details: Anything else worth keeping in the JSON
    """

    experiment: str
    seed: int
    config: dict
    columns: list[str]
    rows: list[list[bool | int | float | str | None]] = Field(default_factory=list)
    fits: dict[str, ScalingFit] = Field(default_factory=dict)
    certificates: dict[str, float | None] = Field(default_factory=dict)
    verdicts: dict[str, bool] = Field(default_factory=dict)
    curves: list[Curve] = Field(default_factory=list)
    details: dict = Field(default_factory=dict)
    passed: bool = True
    wall_clock: float = 0.0
    version: str = ""

    @field_serializer("rows", "certificates", "verdicts", "details")
    def _serialize_native(self, value):
        return to_native(value)

    def __repr__(self):
        return (
            f"<RunReport(experiment='{self.experiment}', rows={len(self.rows)}, "
            f"passed={self.passed})>"
        )


def all_passed(verdicts: dict[str, bool]) -> bool:
    """Overall verdict; an empty verdict set passes."""
    return bool(all(verdicts.values()))


def to_native(value):
    """Replace numpy scalars and arrays, at any depth, by Python numbers and lists."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {key: to_native(item) for key, item in value.items()}
    if isinstance(value, list | tuple):
        return [to_native(item) for item in value]
    return value
