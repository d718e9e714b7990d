import math

import pytest

from scriptorium.errors import ValidationError
from scriptorium.metrics import MetricsReport
from scriptorium.report import RunSeries, render_report


def mk(map50, map5095=0.5, p=0.8, r=0.8, f1=0.8):
    return MetricsReport(map50, map5095, p, r, f1, {})


def series(label, values):
    return RunSeries(label=label, images=list(range(1, len(values) + 1)),
                     metrics=values)


class TestRenderReport:
    def test_nan_rendered_literally(self):
        s = series("AL", [mk(0.0, 0.0, 0.0, 0.0, float("nan"))])
        csv_text, aligned = render_report([s])
        assert "NaN" in csv_text and "NaN" in aligned

    def test_single_strategy_has_no_comparison(self):
        s = series("SL", [mk(0.5), mk(0.6)])
        csv_text, aligned = render_report([s])
        assert "best_" not in csv_text
        assert "*" not in aligned

    def test_best_marking(self):
        al = series("AL", [mk(0.773, 0.524, 0.807, 0.858, 0.832)])
        sl = series("SL", [mk(0.774, 0.533, 0.857, 0.881, 0.869)])
        csv_text, aligned = render_report([al, sl])
        header, row = csv_text.strip().splitlines()
        cols = dict(zip(header.split(","), row.split(",")))
        assert cols["AL_map50"] == "77.3"
        assert cols["SL_map50"] == "77.4"
        assert cols["best_map50"] == "SL"
        assert "77.4*" in aligned and "77.3*" not in aligned

    def test_tie_marks_both(self):
        al = series("AL", [mk(0.5)])
        sl = series("SL", [mk(0.5)])
        csv_text, _ = render_report([al, sl])
        assert "AL+SL" in csv_text

    def test_nan_never_best(self):
        al = series("AL", [mk(0.5, f1=float("nan"))])
        sl = series("SL", [mk(0.4, f1=0.0)])
        csv_text, _ = render_report([al, sl])
        row = csv_text.strip().splitlines()[1].split(",")
        header = csv_text.strip().splitlines()[0].split(",")
        assert dict(zip(header, row))["best_f1"] == "SL"

    def test_mismatched_round_counts_rejected(self):
        with pytest.raises(ValidationError):
            render_report([series("AL", [mk(0.5)]), series("SL", [mk(0.5), mk(0.6)])])

    def test_mismatched_schedules_rejected(self):
        al = series("AL", [mk(0.5)])
        sl = RunSeries(label="SL", images=[7], metrics=[mk(0.5)])
        with pytest.raises(ValidationError):
            render_report([al, sl])

    def test_duplicate_labels_disambiguated(self):
        a = series("AL", [mk(0.5)])
        b = series("AL", [mk(0.6)])
        csv_text, _ = render_report([a, b])
        assert "AL_map50" in csv_text and "AL2_map50" in csv_text
