"""Report serialization: JSON (loss-free), flat CSV and a markdown summary.

All emitters are pure functions of the report, so reruns give identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math

from .core import ValidationError
from .harness import REPORT_SCHEMA, ReportRow, SweepReport, best_rows
from .mlkit import ModelKind
from .reconstruct import Algorithm

FORMATS = ("json", "csv", "markdown")

_ALG_TITLES = {
    Algorithm.ALPHA.value: "Alpha shape",
    Algorithm.MARCHING_CUBES.value: "Marching cubes",
    Algorithm.POISSON.value: "Poisson",
    Algorithm.BALL_PIVOTING.value: "Ball pivoting",
}
_ALG_ORDER = {a.value: i for i, a in enumerate(Algorithm)}
_MODEL_ORDER = {m.value: i for i, m in enumerate(ModelKind)}
_TUPLE_FIELDS = ("selected", "plant_ids", "layers", "actual", "predicted")


def _row_to_dict(r: ReportRow) -> dict:
    d = dataclasses.asdict(r)
    for k in _TUPLE_FIELDS:
        d[k] = list(d[k])
    return d


def _row_from_dict(d: dict) -> ReportRow:
    d = dict(d)
    for k in _TUPLE_FIELDS:
        d[k] = tuple(d[k])
    return ReportRow(**d)


def report_to_dict(report: SweepReport) -> dict:
    return {
        "schema": report.schema,
        "config": report.config,
        "summary": report.summary,
        "rows": [_row_to_dict(r) for r in report.rows],
        "best": [{"plan": r.plan, "algorithm": r.algorithm, "model": r.model, "parameter": r.parameter}
                 for r in report.best],
        "failures": report.failures,
        "selection": report.selection,
    }


def report_from_dict(doc: dict) -> SweepReport:
    if doc.get("schema") != REPORT_SCHEMA:
        raise ValidationError(f"unsupported report schema {doc.get('schema')!r}")
    rows = [_row_from_dict(r) for r in doc.get("rows", [])]
    rep = SweepReport(rows=rows, summary=doc.get("summary", {}), config=doc.get("config", {}),
                      failures=doc.get("failures", []), selection=doc.get("selection", {}))
    rep.best = best_rows(rows)
    return rep


def load_report(data: bytes) -> SweepReport:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"report is not valid JSON: {exc}") from None
    return report_from_dict(doc)


# --------------------------------------------------------------------- emitters


def _json(report: SweepReport) -> bytes:
    # non-finite metrics are kept as NaN/Infinity literals so the round trip is exact
    return (json.dumps(report_to_dict(report), sort_keys=True, indent=1) + "\n").encode("utf-8")


CSV_FIELDS = ("plan", "algorithm", "parameter", "model", "r2", "mae", "relative_mae", "bias", "cv_r2",
              "n_train", "n_test", "selected", "hyperparameters", "approx", "n_failed", "refit", "seed", "error")


def _csv(report: SweepReport) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in report.rows:
        d = _row_to_dict(r)
        d["selected"] = ";".join(r.selected)
        d["hyperparameters"] = json.dumps(r.hyperparameters, sort_keys=True)
        w.writerow([_cell(d[k]) for k in CSV_FIELDS])
    return buf.getvalue().encode("utf-8")


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _num(v, fmt):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "n/a"
    return format(v, fmt)


def _sort_key(r):
    return (_ALG_ORDER.get(r.algorithm, 99), r.algorithm, _MODEL_ORDER.get(r.model, 99), r.model)


def _markdown(report: SweepReport) -> bytes:
    out = ["# Total leaf area estimation report", ""]
    out += ["## Dataset summary (TLA, cm²)", ""]
    out += ["| Dataset | n | Min | Max | Mean | Median | Std |", "|---|---:|---:|---:|---:|---:|---:|"]
    for name, st in sorted(report.summary.items(), key=lambda kv: (kv[0] == "Combined", kv[0])):
        mark = " (single sample)" if st.get("degenerate") else ""
        out.append(f"| {name}{mark} | {st['n']} | " + " | ".join(
            _num(st[k], ".1f") for k in ("Min", "Max", "Mean", "Median", "Std")) + " |")
    out.append("")

    plans = sorted({r.plan for r in report.rows})
    for plan in plans:
        best = sorted((r for r in report.best if r.plan == plan), key=_sort_key)
        out += [f"## Best score per model ({plan})", ""]
        out += ["| Algorithm | Parameter | Model | R² | MAE (cm²) | Rel. MAE |", "|---|---|---|---:|---:|---:|"]
        for r in best:
            param = r.parameter + (" (approx.)" if r.approx else "")
            out.append(f"| {_ALG_TITLES.get(r.algorithm, r.algorithm)} | {param} | {r.model} | "
                       f"{_num(r.r2, '.3f')} | {_num(r.mae, '.1f')} | {_pct(r.relative_mae)} |")
        out.append("")
        gbt = [r for r in best if r.model == ModelKind.GBT.value and r.importance and math.isfinite(r.r2)]
        if gbt:
            top = max(gbt, key=lambda r: (r.r2, -r.mae))
            out += [f"### Gain importance, best GBT ({_ALG_TITLES.get(top.algorithm, top.algorithm)}, "
                    f"{top.parameter})", "", "| Feature | Importance |", "|---|---:|"]
            for name, v in sorted(top.importance.items(), key=lambda kv: (-kv[1], kv[0])):
                out.append(f"| {name} | {v:.4f} |")
            out.append("")

    if report.rows:
        out += ["## Appendix: all evaluated configurations", ""]
        out += ["| Plan | Algorithm | Parameter | Model | R² | MAE (cm²) | Rel. MAE | CV R² | Features | Note |",
                "|---|---|---|---|---:|---:|---:|---:|---|---|"]
        for r in sorted(report.rows, key=lambda r: (r.plan,) + _sort_key(r)):
            note = r.error or ("; ".join(filter(None, [
                "approx." if r.approx else "", f"{r.n_failed} failed stage(s)" if r.n_failed else ""])))
            out.append(f"| {r.plan} | {_ALG_TITLES.get(r.algorithm, r.algorithm)} | {r.parameter} | {r.model} | "
                       f"{_num(r.r2, '.3f')} | {_num(r.mae, '.1f')} | {_pct(r.relative_mae)} | "
                       f"{_num(r.cv_r2, '.3f')} | {len(r.selected)} | {note} |")
        out.append("")
    if report.failures:
        out += ["## Refinement failures", ""]
        out += [f"- {f['plant_id']} layer {f['layer']}: {f['error']}" for f in report.failures]
        out.append("")
    return "\n".join(out).encode("utf-8")


def _pct(v):
    return "n/a" if v is None or not math.isfinite(v) else f"{100.0 * v:.1f}%"


def emit_report(report: SweepReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        return _json(report)
    if fmt == "csv":
        return _csv(report)
    if fmt in ("markdown", "md"):
        return _markdown(report)
    raise ValidationError(f"unknown report format {fmt!r}; choose from {', '.join(FORMATS)}")
