#!/usr/bin/env python3
"""
Unit tests for the JSON codecs and CSV writers.
"""

import csv
import os
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add the project root to the path
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.detect import analyze_detectability
from core.errors import ModelFormatError, ScheduleError
from core.identify import build_residual_bank, calibrate_identification_thresholds, run_identification
from core.model import simulate
from core.serialization import (
    decode_array,
    encode_array,
    load_plan,
    load_schedule,
    report_to_dict,
    write_identification_csv,
    write_json,
    write_subspace_csv,
    write_trace_csv,
)
from core.subspace import Subspace
from tests.systems import escape_plant, two_axis_plant


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


class TestCodecs(unittest.TestCase):
    """Test cases for the JSON side."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test fixtures."""
        if os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir)

    def test_complex_arrays(self):
        """Test that complex arrays are stored as real and imaginary parts."""
        value = np.array([[1.0 + 2.0j, -0.5j]])
        encoded = encode_array(value)
        self.assertEqual(encoded, {"re": [[1.0, 0.0]], "im": [[2.0, -0.5]]})
        np.testing.assert_array_equal(decode_array(encoded), value)
        self.assertIsNone(encode_array(None))

    def test_one_based_schedule(self):
        """Test that one-based offsets are shifted on load."""
        path = os.path.join(self.temp_dir, "schedule.json")
        write_json(path, {"frame_period": 3, "samples": {"gps": [1, 3]}, "one_based": True,
                          "delays": {"gps": 1}})
        schedule = load_schedule(path)
        self.assertEqual(schedule.samples["gps"], (0, 2))
        self.assertEqual(schedule.delay_frames, 1)

    def test_schedule_errors(self):
        """Test unknown keys, missing keys and out-of-range offsets."""
        path = os.path.join(self.temp_dir, "schedule.json")
        write_json(path, {"frame_period": 2, "samples": {"gps": [0]}, "rate": 5})
        with self.assertRaises(ModelFormatError):
            load_schedule(path)
        write_json(path, {"samples": {"gps": [0]}})
        with self.assertRaises(ModelFormatError):
            load_schedule(path)
        write_json(path, {"frame_period": 2, "samples": {"gps": [2]}})
        with self.assertRaises(ScheduleError):
            load_schedule(path)

    def test_malformed_plan(self):
        """Test that a plan with missing fields is rejected."""
        path = os.path.join(self.temp_dir, "plan.json")
        write_json(path, {"kind": "eig-case1", "mode": "u"})
        with self.assertRaises(ModelFormatError):
            load_plan(path)
        write_json(path, {"kind": "teleport"})
        with self.assertRaises(ModelFormatError):
            load_plan(path)

    def test_report_dict(self):
        """Test the detectability report fields."""
        data = report_to_dict(analyze_detectability(escape_plant(), "u"))
        self.assertEqual(data["verdict"], "vulnerable")
        self.assertEqual(data["triggered_condition"], "iii")
        self.assertEqual(data["witness"]["kind"], "eigen-chain")
        self.assertAlmostEqual(data["witness"]["eigenvalue"]["re"], 1.2)
        self.assertIsNone(data["severity_bound"])


class TestCsvWriters(unittest.TestCase):
    """Test cases for the CSV artefacts."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.plant = two_axis_plant()

    def tearDown(self):
        """Clean up test fixtures."""
        if os.path.exists(self.temp_dir):
            shutil.rmtree(self.temp_dir)

    def test_trace_csv(self):
        """Test the trace header and one row per frame."""
        trace = simulate(self.plant, "a", attack=[[1.0]], noise=[[0.5, -0.25]], horizon=4)
        path = os.path.join(self.temp_dir, "out", "trace.csv")
        write_trace_csv(path, trace)
        rows = read_rows(path)
        self.assertEqual(rows[0], ["frame", "y_norm", "z_norm", "x0", "x1", "y0", "y1", "z0", "a0", "w0", "w1"])
        self.assertEqual(len(rows), 5)
        self.assertEqual(float(rows[2][1]), trace.y_norms[1])

    def test_trace_csv_states_and_noise(self):
        """Test that state and noise columns hold the recorded values."""
        trace = simulate(self.plant, "a", attack=[[1.0]], noise=[[0.5, -0.25]], horizon=3)
        path = os.path.join(self.temp_dir, "trace.csv")
        write_trace_csv(path, trace)
        rows = read_rows(path)
        header = rows[0]
        second = dict(zip(header, rows[2]))
        self.assertAlmostEqual(float(second["x0"]), trace.x[1, 0])
        self.assertAlmostEqual(float(second["x1"]), trace.x[1, 1])
        first = dict(zip(header, rows[1]))
        self.assertEqual(float(first["w0"]), 0.5)
        self.assertEqual(float(first["w1"]), -0.25)

    def test_trace_csv_labels(self):
        """Test that plant labels replace the default column names."""
        trace = simulate(self.plant, "a", horizon=2)
        path = os.path.join(self.temp_dir, "trace.csv")
        write_trace_csv(path, trace, self.plant.output_labels, self.plant.severity_labels)
        header = read_rows(path)[0]
        start = 3 + self.plant.n_states
        self.assertEqual(header[start:start + self.plant.n_outputs], list(self.plant.output_labels))

    def test_identification_csv(self):
        """Test one row per window with residuals and the estimate mask."""
        thresholds = calibrate_identification_thresholds(self.plant, ["a", "b"], noise_bound=0.0)
        bank = build_residual_bank(self.plant, ["a", "b"], thresholds)
        rng = np.random.default_rng(3)
        trace = simulate(self.plant, "a", attack=rng.standard_normal((10, 1)), horizon=10)
        history = run_identification(bank, trace)
        path = os.path.join(self.temp_dir, "residuals.csv")
        write_identification_csv(path, history)
        rows = read_rows(path)
        self.assertEqual(rows[0], ["frame", "r_a", "r_b", "estimate_mask"])
        self.assertEqual(len(rows), len(history.steps) + 1)
        self.assertEqual(rows[-1][-1], "1")

    def test_subspace_csv(self):
        """Test that a basis is written one ambient coordinate per row."""
        path = os.path.join(self.temp_dir, "v.csv")
        write_subspace_csv(path, Subspace.span(np.eye(3)[:, :2]))
        rows = read_rows(path)
        self.assertEqual(rows[0], ["v0", "v1"])
        self.assertEqual(len(rows), 4)


if __name__ == '__main__':
    unittest.main()
