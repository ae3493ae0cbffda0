"""Top-k metrics, report CSVs, and the SVG curve renderer."""

import re

import numpy as np
import pytest

from advlab import evaluation
from advlab.evaluation import EvalReport, ReportRow


def brute_force_top_k_error(log_probs, labels, k):
    """Independent oracle: explicit ranking with lower-index-first ties."""
    misses = 0
    for row, label in zip(log_probs, labels):
        order = sorted(range(len(row)), key=lambda c: (-row[c], c))
        if label not in order[:k]:
            misses += 1
    return misses / len(labels)


class TestTopKError:
    def test_k_equal_classes_is_zero(self):
        rng = np.random.default_rng(0)
        lp = rng.uniform(-3, 0, (20, 10))
        labels = rng.integers(0, 10, 20)
        assert evaluation.top_k_error(lp, labels, 10) == 0.0

    def test_third_ranked_class(self):
        lp = np.array([[0.5, 0.3, 0.4, 0.1]])
        # class 3 of this row ranks: 0 first, 2 second, 1 third
        assert evaluation.top_k_error(lp, [1], 2) == 1.0
        assert evaluation.top_k_error(lp, [1], 3) == 0.0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        lp = rng.uniform(-5, 0, (100, 10))
        labels = rng.integers(0, 10, 100)
        for k in (1, 2, 5, 9, 10):
            assert evaluation.top_k_error(lp, labels, k) == brute_force_top_k_error(
                lp, labels, k
            )

    def test_ties_prefer_lower_class_index(self):
        lp = np.array([[0.5, 0.5, 0.0]])
        assert evaluation.top_k_error(lp, [0], 1) == 0.0
        assert evaluation.top_k_error(lp, [1], 1) == 1.0
        # the oracle agrees on tied grids
        tied = np.tile(np.array([[0.1, 0.1, 0.1, 0.1]]), (4, 1))
        labels = np.arange(4)
        for k in (1, 2, 3, 4):
            assert evaluation.top_k_error(tied, labels, k) == brute_force_top_k_error(
                tied, labels, k
            )

    def test_non_increasing_in_k(self):
        rng = np.random.default_rng(9)
        lp = rng.uniform(-5, 0, (50, 10))
        labels = rng.integers(0, 10, 50)
        errors = [evaluation.top_k_error(lp, labels, k) for k in range(1, 11)]
        assert all(a >= b for a, b in zip(errors, errors[1:]))

    def test_k_out_of_range_rejected(self):
        lp = np.zeros((2, 10))
        for k in (0, 11, -1):
            with pytest.raises(ValueError, match="k must"):
                evaluation.top_k_error(lp, [0, 0], k)


class TestEvalReport:
    def test_accuracy_is_exact_ratio(self):
        row = ReportRow(0.1, 1, 3)
        assert row.accuracy == 1 / 3

    def test_bad_counts_rejected(self):
        report = EvalReport()
        with pytest.raises(ValueError):
            report.add(0.0, -1, 10)
        with pytest.raises(ValueError):
            report.add(0.0, 11, 10)


class TestWriteCsv:
    def test_golden_line(self, tmp_path):
        report = EvalReport()
        report.add(0.0, 9698, 10000)
        path = tmp_path / "r.csv"
        evaluation.write_csv(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epsilon,correct,total,accuracy"
        assert lines[1] == "0.000,9698,10000,0.9698"

    def test_empty_report_is_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        evaluation.write_csv(EvalReport(), path)
        assert path.read_text() == "epsilon,correct,total,accuracy\n"

    def test_round_trip_recovers_counts(self, tmp_path):
        report = EvalReport()
        report.add(0.007, 9650, 10000)
        report.add(0.3, 2727, 10000)
        path = tmp_path / "r.csv"
        evaluation.write_csv(report, path)
        back = evaluation.read_csv(path)
        assert [(r.setting, r.correct, r.total) for r in back.rows] == [
            (0.007, 9650, 10000),
            (0.3, 2727, 10000),
        ]

    def test_read_rejects_non_report(self, tmp_path):
        path = tmp_path / "other.csv"
        path.write_text("epoch,train_loss,val_loss,lr\n1,0.5,0.4,0.0001\n")
        with pytest.raises(ValueError):
            evaluation.read_csv(path)


class TestRenderCurve:
    @staticmethod
    def _report(points):
        report = EvalReport()
        for setting, correct, total in points:
            report.add(setting, correct, total)
        return report

    def test_two_point_report_has_exactly_two_markers(self, tmp_path):
        path = tmp_path / "curve.svg"
        evaluation.render_curve(self._report([(0.0, 95, 100), (0.3, 30, 100)]), path)
        svg = path.read_text()
        assert svg.count("<circle") == 2
        assert "accuracy" in svg and "epsilon" in svg

    def test_identical_bytes_for_identical_report(self, tmp_path):
        report = self._report([(0.0, 95, 100), (0.1, 70, 100), (0.3, 30, 100)])
        a, b = tmp_path / "a.svg", tmp_path / "b.svg"
        evaluation.render_curve(report, a)
        evaluation.render_curve(report, b)
        assert a.read_bytes() == b.read_bytes()

    def test_descending_accuracies_render_descending_markers(self, tmp_path):
        path = tmp_path / "mono.svg"
        evaluation.render_curve(
            self._report([(0.0, 90, 100), (0.1, 60, 100), (0.2, 40, 100), (0.3, 10, 100)]), path
        )
        cys = [float(m) for m in re.findall(r'<circle cx="[\d.]+" cy="([\d.]+)"', path.read_text())]
        assert len(cys) == 4
        # SVG y grows downward: descending accuracy means increasing cy
        assert all(a < b for a, b in zip(cys, cys[1:]))

    def test_fewer_than_two_rows_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="2 rows"):
            evaluation.render_curve(self._report([(0.0, 1, 2)]), tmp_path / "x.svg")

    def test_axis_label_follows_metadata(self, tmp_path):
        report = self._report([(6, 10, 100), (10, 60, 100)])
        report.metadata["setting"] = "patch size"
        path = tmp_path / "patch.svg"
        evaluation.render_curve(report, path)
        assert "patch size" in path.read_text()
