"""
Tests for the config module.
"""

import pytest
from app.config import ExperimentConfig, format_config, load_config, parse_config
from app.errors import ConfigError

SAMPLE = """
# resolvent sweep on S^2
experiment = resolvent
seed = 7

resolvent.h_grid = 0.125, 0.0625, 0.03125
resolvent.kappa = 1.5   # vanishing order
resolvent.snap = false
"""


class TestParseConfig:
    """Test cases for parsing config text."""

    def test_parse_sample(self):
        """Test that sections, lists, booleans and comments are parsed."""
        config = parse_config(SAMPLE)
        assert config.experiment == "resolvent"
        assert config.seed == 7
        assert config.resolvent.h_grid == [0.125, 0.0625, 0.03125]
        assert config.resolvent.kappa == 1.5
        assert config.resolvent.snap is False
        assert config.resolvent.damping == "surrogate"

    def test_defaults_fill_missing(self):
        """Test that defaults apply only to keys the text leaves unset."""
        config = parse_config("seed = 3\n", defaults={"experiment": "oscint", "seed": 9})
        assert config.experiment == "oscint"
        assert config.seed == 3

    def test_dampedwave_conservation_default(self):
        """Test that the undamped conservation run defaults to T = 100."""
        config = parse_config("experiment = dampedwave\n")
        assert config.dampedwave.conservation_horizon == 100.0
        off = parse_config("experiment = dampedwave\ndampedwave.conservation_horizon = 0\n")
        assert off.dampedwave.conservation_horizon == 0.0

    def test_none_value(self):
        """Test that 'none' clears an optional field."""
        config = parse_config("experiment = concentration\nconcentration.c_max = none\n")
        assert config.concentration.c_max is None

    def test_unknown_key_is_named(self):
        """Test that a misspelled key is reported with its name and line."""
        with pytest.raises(ConfigError) as exc:
            parse_config("experiment = concentration\nconcentration.alpa = 0.5\n")
        assert exc.value.line == 2
        assert exc.value.field == "concentration.alpa"
        assert "alpa" in str(exc.value)
        assert "line 2" in str(exc.value)

    def test_unknown_section(self):
        """Test that an unknown top-level section is rejected."""
        with pytest.raises(ConfigError) as exc:
            parse_config("experiment = oscint\nbogus.key = 1\n")
        assert exc.value.field == "bogus"
        assert exc.value.line is None or exc.value.line == 2

    def test_invalid_value(self):
        """Test that an out-of-range value names the field."""
        with pytest.raises(ConfigError) as exc:
            parse_config("experiment = concentration\nconcentration.alphas = 0.5, 1.5\n")
        assert exc.value.field == "concentration.alphas"
        assert exc.value.line == 2

    def test_missing_equals(self):
        """Test that a line without '=' reports its line number."""
        with pytest.raises(ConfigError) as exc:
            parse_config("experiment = oscint\n\noscint.dim 2\n")
        assert exc.value.line == 3

    def test_duplicate_key(self):
        """Test that a key set twice is rejected."""
        with pytest.raises(ConfigError) as exc:
            parse_config("experiment = oscint\nseed = 1\nseed = 2\n")
        assert exc.value.line == 3
        assert "line 2" in str(exc.value)

    def test_section_used_as_value(self):
        """Test that a section name cannot also be a plain key."""
        with pytest.raises(ConfigError):
            parse_config("oscint.dim = 2\noscint = 3\n")

    def test_invalid_patch(self):
        """Test that damping patches must be equator:K, poles:K or xI:K."""
        with pytest.raises(ConfigError) as exc:
            parse_config("experiment = dampedwave\ndampedwave.patches = x0:1, belt:2\n")
        assert exc.value.field == "dampedwave.patches"

    def test_missing_experiment(self):
        """Test that the experiment name is required."""
        with pytest.raises(ConfigError) as exc:
            parse_config("seed = 1\n")
        assert exc.value.field == "experiment"

    def test_seed_range(self):
        """Test that seeds must be unsigned 64-bit integers."""
        with pytest.raises(ConfigError):
            parse_config("experiment = selftest\nseed = -1\n")
        assert parse_config(f"experiment = selftest\nseed = {2**64 - 1}\n").seed == 2**64 - 1


class TestFormatConfig:
    """Test cases for writing configs back to text."""

    @pytest.mark.parametrize(
        "experiment", ["concentration", "projector", "resolvent", "dampedwave", "oscint"]
    )
    def test_defaults_round_trip(self, experiment):
        """Test that formatting then parsing reproduces the default config."""
        config = ExperimentConfig(experiment=experiment)
        assert parse_config(format_config(config)) == config

    def test_custom_round_trip(self):
        """Test a round trip with lists, masks and patches."""
        config = parse_config(
            "experiment = dampedwave\n"
            "manifold.kind = torus\n"
            "manifold.periods = 1.0, 2.5\n"
            "submanifold.kind = subtorus\n"
            "submanifold.mask = true, false\n"
            "dampedwave.patches = x0:1, x1:2.5\n"
        )
        assert parse_config(format_config(config)) == config
        assert config.submanifold.mask == [True, False]


class TestLoadConfig:
    """Test cases for reading config files."""

    def test_load_file(self, tmp_path):
        """Test reading a config from disk."""
        path = tmp_path / "run.conf"
        path.write_text(SAMPLE)
        assert load_config(str(path)).seed == 7

    def test_missing_file(self, tmp_path):
        """Test that an unreadable path raises ConfigError."""
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "absent.conf"))
