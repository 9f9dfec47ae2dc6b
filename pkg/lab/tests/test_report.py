"""
Tests for the report module.
"""

import csv
import json
import math

import numpy as np
import pytest
from app.models import Curve, RunReport, all_passed, to_native
from app.report import emit, format_number, load_report
from app.scaling import fit_power_law


def make_report(rows=None) -> RunReport:
    return RunReport(
        experiment="resolvent",
        seed=3,
        config={"experiment": "resolvent", "seed": 3},
        columns=["h", "sigma_min", "snapped"],
        rows=rows if rows is not None else [],
        fits={"sigma_min": fit_power_law([0.1, 0.2, 0.4], [0.01, 0.04, 0.16])},
        certificates={"c": 1.0, "missing": None},
        verdicts={"certificate": True},
        curves=[Curve(name="sigma min", x_label="h", y_label="sigma", x=[0.1, 0.2], y=[1.0, 2.0])],
    )


class TestFormatNumber:
    """Test cases for number formatting."""

    def test_float_precision(self):
        """Test that floats keep 17 significant digits."""
        assert float(format_number(0.1)) == 0.1
        assert format_number(1 / 3) == "0.33333333333333331"

    def test_special_values(self):
        """Test formatting of non-finite floats, booleans and None."""
        assert format_number(math.nan) == "nan"
        assert format_number(-math.inf) == "-inf"
        assert format_number(True) == "true"
        assert format_number(None) == ""
        assert format_number(12) == "12"


class TestEmit:
    """Test cases for writing report files."""

    def test_headers_only_csv(self, tmp_path):
        """Test that an empty run still writes the header row."""
        paths = emit(make_report(), tmp_path, formats=("csv",))
        assert paths == [tmp_path / "resolvent.csv"]
        assert paths[0].read_text() == "h,sigma_min,snapped\n"

    def test_single_row(self, tmp_path):
        """Test one data row with a boolean column."""
        emit(make_report([[0.125, 0.5, True]]), tmp_path, formats=("csv",))
        with open(tmp_path / "resolvent.csv") as f:
            rows = list(csv.reader(f))
        assert rows == [["h", "sigma_min", "snapped"], ["0.125", "0.5", "true"]]

    def test_json_round_trip(self, tmp_path):
        """Test that the JSON summary re-parses to the same report."""
        report = make_report([[0.125, 0.5, True], [0.0625, 0.25, False]])
        emit(report, tmp_path, formats=("json",))
        path = tmp_path / "resolvent.json"
        data = json.loads(path.read_text())
        assert data["verdicts"] == {"certificate": True}
        assert data["fits"]["sigma_min"]["slope"] == pytest.approx(2.0)
        assert load_report(path) == report

    def test_json_with_numpy_scalars(self, tmp_path):
        """Test that numpy scalars assigned into verdicts and certificates still serialize."""
        report = make_report()
        report.rows.append([np.float64(0.125), np.float64(0.5), np.bool_(False)])
        report.certificates["drift"] = np.float64(1e-13) / np.float64(2.0)
        report.verdicts["conservation"] = np.float64(1e-13) < 1e-8
        report.details["energies"] = np.array([1.0, 0.5])
        emit(report, tmp_path, formats=("json", "csv"))
        data = json.loads((tmp_path / "resolvent.json").read_text())
        assert data["verdicts"]["conservation"] is True
        assert data["certificates"]["drift"] == pytest.approx(5e-14)
        assert data["details"]["energies"] == [1.0, 0.5]
        assert load_report(tmp_path / "resolvent.json").verdicts["conservation"]
        rows = list(csv.reader((tmp_path / "resolvent.csv").open()))
        assert rows[1] == ["0.125", "0.5", "false"]

    def test_curve_files(self, tmp_path):
        """Test two-column plot data with a header comment."""
        paths = emit(make_report(), tmp_path, formats=("dat",))
        assert paths == [tmp_path / "resolvent_sigma_min.dat"]
        lines = paths[0].read_text().splitlines()
        assert lines[0] == "# h sigma"
        assert lines[1:] == ["0.10000000000000001 1", "0.20000000000000001 2"]

    def test_creates_directory(self, tmp_path):
        """Test that a missing output directory is created."""
        target = tmp_path / "nested" / "out"
        paths = emit(make_report(), target)
        assert len(paths) == 3
        assert all(p.exists() for p in paths)

    def test_unknown_format(self, tmp_path):
        """Test that unknown formats are rejected."""
        with pytest.raises(ValueError):
            emit(make_report(), tmp_path, formats=("xml",))

    def test_unwritable_directory(self, tmp_path):
        """Test that write failures name the offending path."""
        blocker = tmp_path / "file"
        blocker.write_text("not a directory")
        with pytest.raises(OSError) as exc:
            emit(make_report(), blocker / "out")
        assert "file" in str(exc.value)


class TestModels:
    """Test cases for report records."""

    def test_all_passed(self):
        """Test the overall verdict."""
        assert all_passed({})
        assert all_passed({"a": True, "b": True})
        assert not all_passed({"a": True, "b": False})

    def test_repr(self):
        """Test the short report representation."""
        assert repr(make_report()) == "<RunReport(experiment='resolvent', rows=0, passed=True)>"

    def test_to_native(self):
        """Test that nested numpy values become plain Python values."""
        value = to_native({"a": [np.int64(2), (np.bool_(False),)], "b": np.zeros(2)})
        assert value == {"a": [2, [False]], "b": [0.0, 0.0]}
        assert type(value["a"][0]) is int
        assert type(value["a"][1][0]) is bool
