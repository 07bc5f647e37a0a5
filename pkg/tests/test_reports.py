"""
Unit Tests for Report Writers
Tests that CSV and JSON artifacts share one exact float format
"""

import json

import numpy as np
import pandas as pd

from backend.reports import write_frame, write_json
from stochastics.processes import format_float


VALUES = [0.1, 1.0 / 3.0, -2.5e-17, 123456789.123456789, 1.0]


class TestFloatFormat:
    """Test the shared float policy."""

    def test_shortest_round_trip(self):
        """Test that format_float is the shortest text that reads back exactly."""
        assert format_float(0.1) == "0.1"
        assert format_float(np.float64(1.0) / 3.0) == "0.3333333333333333"
        for value in VALUES:
            assert float(format_float(value)) == value

    def test_csv_and_json_agree(self, tmp_path):
        """Test that a value is written with the same text in both files."""
        csv_path = write_frame(pd.DataFrame({"value": VALUES}), tmp_path / "values.csv")
        json_path = write_json({"value": VALUES}, tmp_path / "values.json")

        csv_lines = csv_path.read_text().splitlines()[1:]
        assert csv_lines == [format_float(v) for v in VALUES]
        with open(json_path) as f:
            text = f.read()
        for line in csv_lines:
            assert line in text

    def test_csv_reads_back_exactly(self, tmp_path):
        """Test bit-exact reload of the CSV with the round-trip parser."""
        draws = np.random.default_rng(1).standard_normal(500)
        path = write_frame(pd.DataFrame({"draw": draws}), tmp_path / "draws.csv")
        loaded = pd.read_csv(path, float_precision="round_trip")["draw"].to_numpy()
        np.testing.assert_array_equal(loaded, draws)
        with open(write_json({"draw": draws.tolist()}, tmp_path / "draws.json")) as f:
            np.testing.assert_array_equal(np.array(json.load(f)["draw"]), draws)

    def test_missing_values_stay_empty(self, tmp_path):
        """Test that NaN is written as an empty CSV field."""
        path = write_frame(pd.DataFrame({"a": [1.5, np.nan], "b": [2.0, 3.0]}), tmp_path / "nan.csv")
        assert path.read_text().splitlines() == ["a,b", "1.5,2.0", ",3.0"]
