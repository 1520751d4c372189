import csv
import io
import json
import math

import pytest

from leafarea.core import ValidationError
from leafarea.harness import REPORT_SCHEMA, ReportRow, SweepReport, best_rows, summarize
from leafarea.report import CSV_FIELDS, emit_report, load_report, report_from_dict, report_to_dict
from test_harness import make_ds


def _row(alg, param, model, r2v, maev, plan="stratified", **kw):
    base = dict(hyperparameters={"lam": 0.1}, cv_r2=0.5, bias=1.0, relative_mae=maev / 1000.0, n_train=7,
                n_test=3, selected=("height", "volume"), approx=False, n_failed=0, seed=1, refit=True,
                plant_ids=("P001", "P002", "P003"), layers=(0, 1, 0), actual=(900.0, 1000.0, 1100.0),
                predicted=(950.0, 990.0, 1200.0))
    base.update(kw)
    return ReportRow(alg, param, model, plan, r2=r2v, mae=maev, **base)


@pytest.fixture
def report():
    rows = [
        _row("alpha", "1", "GBT", 0.7, 120.0, importance={"volume": 0.75, "height": 0.25}),
        _row("alpha", "3", "GBT", 0.8, 100.0, importance={"volume": 0.6, "height": 0.4}),
        _row("alpha", "3", "Lasso", 0.6, 130.0),
        _row("poisson", "12", "Lasso", math.nan, math.nan, approx=True, error="all configurations failed"),
        _row("alpha", "3", "Lasso", 0.2, 300.0, plan="exp1_to_exp2"),
    ]
    rep = SweepReport(rows=rows, summary=summarize(make_ds([800, 900, 1000, 1100], [1, 1, 2, 2])),
                      config={"seed": 0}, failures=[{"plant_id": "P004", "layer": 2, "error": "crop: empty"}])
    rep.best = best_rows(rows)
    return rep


def test_json_round_trip_is_identity(report):
    data = emit_report(report, "json")
    back = load_report(data)
    assert emit_report(back, "json") == data
    assert report_to_dict(back)["rows"][3]["r2"] != report_to_dict(back)["rows"][3]["r2"]  # NaN survives
    assert json.loads(data)["schema"] == REPORT_SCHEMA


def test_schema_is_checked(report):
    doc = report_to_dict(report)
    doc["schema"] = "tla-report/0"
    with pytest.raises(ValidationError):
        report_from_dict(doc)
    with pytest.raises(ValidationError):
        load_report(b"not json")


def test_csv_flattens_rows(report):
    rows = list(csv.DictReader(io.StringIO(emit_report(report, "csv").decode())))
    assert tuple(rows[0]) == CSV_FIELDS
    assert len(rows) == 5
    assert rows[0]["selected"] == "height;volume"
    assert float(rows[1]["r2"]) == 0.8


def test_markdown_grid_one_row_per_algorithm_and_model(report):
    md = emit_report(report, "markdown").decode()
    section = md.split("## Best score per model (stratified)")[1].split("##")[0]
    body = [l for l in section.splitlines() if l.startswith("| ") and "Algorithm" not in l]
    assert [l.split("|")[1].strip() + "/" + l.split("|")[3].strip() for l in body] == [
        "Alpha shape/Lasso", "Alpha shape/GBT", "Poisson/Lasso"]
    assert "| Alpha shape | 3 | GBT | 0.800 | 100.0 | 10.0% |" in section
    assert "n/a" in body[2] and "(approx.)" in body[2]


def test_markdown_summary_block(report):
    md = emit_report(report, "markdown").decode()
    assert "| Dataset | n | Min | Max | Mean | Median | Std |" in md
    assert "| Exp. #1 | 2 | 800.0 | 900.0 | 850.0 | 850.0 | 70.7 |" in md
    assert md.index("| Exp. #2") < md.index("| Combined")


def test_markdown_importance_and_failures(report):
    md = emit_report(report, "markdown").decode()
    assert "### Gain importance, best GBT (Alpha shape, 3)" in md
    assert md.index("| volume | 0.6000 |") < md.index("| height | 0.4000 |")
    assert "- P004 layer 2: crop: empty" in md


def test_markdown_is_byte_stable(report):
    assert emit_report(report, "markdown") == emit_report(load_report(emit_report(report, "json")), "markdown")


def test_empty_report_is_valid():
    rep = SweepReport(rows=[], summary={}, config={})
    for fmt in ("json", "csv", "markdown"):
        assert emit_report(rep, fmt)
    assert load_report(emit_report(rep, "json")).rows == []


def test_unknown_format(report):
    with pytest.raises(ValidationError):
        emit_report(report, "xml")
