"""
Tests for the ablation grid
"""

import csv
import os

import pytest

from floss.ablation import AXIS_DEFAULTS, Ablation, apply_cell, cell_name, parse_axes
from floss.utils.exceptions import ConfigurationError


class TestParseAxes:
    """Test --axis parsing"""

    def test_full_axis(self):
        """Test that a bare name takes every value"""
        assert parse_axes(["loss"]) == {"loss": list(AXIS_DEFAULTS["loss"])}

    def test_restricted_axis(self):
        """Test name=value lists"""
        axes = parse_axes(["loss=raw, db", "schedule=single,linear:4"])
        assert axes == {"loss": ["raw", "db"], "schedule": ["single", "linear:4"]}

    @pytest.mark.parametrize("spec", ["depth", "loss=l1", "schedule=linear:0", "noise=pink"])
    def test_invalid(self, spec):
        """Test unknown axes and values"""
        with pytest.raises(ConfigurationError):
            parse_axes([spec])


class TestCells:
    """Test cell naming and configuration"""

    def test_cell_name(self):
        """Test directory names for cells"""
        assert cell_name({"loss": "raw", "noise": "envelope"}) == "loss-raw_noise-envelope"
        assert cell_name({}) == "base"

    def test_apply_cell(self, config, temp_dir):
        """Test that a cell overrides a copy of the config"""
        cfg = apply_cell(config, {"loss": "raw", "assignment": "ot", "noise": "constant"}, temp_dir)
        assert (cfg.loss.kind, cfg.train.assignment, cfg.noise.kind) == ("raw", "ot", "constant")
        assert cfg.train.output_dir == temp_dir
        assert config.loss.kind == "db"

    def test_infeasible_grid(self, config, temp_dir):
        """Test refusal of grids above the step budget"""
        axes = parse_axes(["loss", "time_weighting", "noise"])
        with pytest.raises(ConfigurationError, match="max_total_steps"):
            Ablation(config, axes, temp_dir).check_feasible()


class TestAblationRun:
    """Test a small end-to-end grid"""

    def test_run(self, config, temp_dir):
        """Test one row per (cell, schedule) plus the per-cell metrics files"""
        out = os.path.join(temp_dir, "ablation")
        axes = parse_axes(["loss=raw,db", "schedule=single,linear:2"])
        rows = Ablation(config, axes, out).run()
        assert len(rows) == 4
        assert {(r.loss, r.schedule) for r in rows} == {
            ("raw", "single"), ("raw", "linear:2"), ("db", "single"), ("db", "linear:2"),
        }
        assert {r.nfe for r in rows} == {1, 2}

        with open(os.path.join(out, "ablation.csv")) as fh:
            table = list(csv.DictReader(fh))
        assert len(table) == 4
        for loss in ("raw", "db"):
            cell_dir = os.path.join(out, f"loss-{loss}")
            assert os.path.exists(os.path.join(cell_dir, "model.floss"))
            assert os.path.exists(os.path.join(cell_dir, "metrics_single.csv"))
            assert os.path.exists(os.path.join(cell_dir, "metrics_linear2.csv"))
