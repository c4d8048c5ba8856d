"""Comparison tables and plot-series exports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from sdbox.errors import ParameterError
from sdbox.experiments.registry import ExperimentRecord

GAP = "[missing]"
MINUS = "−"


@dataclass(frozen=True)
class Layout:
    name: str
    title: str
    # (row label, method, with_key or None, extra fields that must match)
    rows: tuple
    # (column label, acc field, with_key or None)
    cols: tuple
    # acc field -> (method, with_key, extra) of the record each column's delta is taken against
    baselines: dict
    key_column: bool = False


def _row(label, method, with_key=None, **extra):
    return (label, method, with_key, extra)


T4 = {"temperature": 4.0}

LAYOUTS = {
    "table1": Layout(
        "table1", "Ablation study",
        (_row("Scratch", "Scratch"), _row("w/o KE", "w/o KE"), _row("w/o KDis", "w/o KDis"),
         _row("w/o KP", "w/o KP"), _row("SDB", "SDB")),
        (("Teacher w/o key", "teacher", False), ("Teacher w key", "teacher", True),
         ("Student w/o key", "student", False), ("Student w key", "student", True)),
        {"student": ("Scratch", False, {})},
    ),
    "table2": Layout(
        "table2", "Effect of knowledge augmentation",
        (_row("Aug ×", "Normal", False, **T4), _row("Aug ✓", "Aug", False, **T4)),
        (("ACC (Teacher)", "teacher", None), ("ACC (Student)", "student", None)),
        {"teacher": ("Normal", False, T4), "student": ("Normal", False, T4)},
    ),
    "table3": Layout(
        "table3", "Comparison of wrapping methods",
        (_row("Scratch", "Scratch", False),
         *(_row(m, m, k) for m in ("Normal", "Nasty-like", "KE", "SDB") for k in (False, True))),
        (("ACC (Teacher)", "teacher", None), ("ACC (Student)", "student", None)),
        {"teacher": ("Normal", False, {}), "student": ("Scratch", False, {})},
        key_column=True,
    ),
    "table5": Layout(
        "table5", "Random temperature attack",
        (_row("SDB (w key) T=4", "SDB", True, **T4),
         *(_row(f"SDB (w/o key) T={t:g}", "SDB", False, temperature=t) for t in (1.0, 4.0, 8.0, 16.0))),
        (("ACC (Student)", "student", None),),
        {"student": ("SDB", True, T4)},
    ),
    "table6": Layout(
        "table6", "Random key attack",
        (_row("Scratch", "Scratch", False), _row("SDB key", "SDB", True, **T4),
         *(_row(f"SDB random-{i}", "SDB random key", True, key_label=f"random-{i}") for i in (1, 2, 3))),
        (("ACC (Student)", "student", None),),
        {"student": ("Scratch", False, {})},
    ),
}


def format_delta(value: float, base: float) -> str:
    d = round(value - base, 2)
    sign = "+" if d >= 0 else MINUS
    return f"({sign}{abs(d):.2f})"


def _matches(rec: ExperimentRecord, method, with_key, extra) -> bool:
    if rec.method != method:
        return False
    # scratch students never see a key, so one record serves both key columns
    if with_key is not None and rec.with_key != with_key and rec.mode != "scratch":
        return False
    return all(rec.extra.get(k) == v for k, v in extra.items())


def _pick(records, method, with_key, extra, field):
    """Median record among candidates (lower median for even counts)."""
    cands = [r for r in records if _matches(r, method, with_key, extra) and r.acc.get(field) is not None]
    if not cands:
        return None
    cands.sort(key=lambda r: (r.acc[field], r.run_id))
    return cands[(len(cands) - 1) // 2]


def required_cells(layout: Layout) -> list[str]:
    out = []
    for label, _, row_key, _ in layout.rows:
        for col_label, _, col_key in layout.cols:
            wk = row_key if row_key is not None else col_key
            out.append(f"{label}{' ✓' if wk else ''} / {col_label}")
    return out


def render_report(records, layout: str = "table3") -> tuple[str, dict]:
    """Render ``records`` into a text table and a structured table.

    Cells without a matching record become explicit gap markers. Each value
    carries the run id of the single record it came from; with several
    seeds per cell the median record is shown.
    """
    if layout not in LAYOUTS:
        raise ParameterError(f"unknown layout {layout!r}; known: {sorted(LAYOUTS)}")
    lay = LAYOUTS[layout]
    records = list(records)
    if not records:
        raise ParameterError(f"no records; {layout} needs cells: " + "; ".join(required_cells(lay)))
    bases = {}
    for field, (m, k, extra) in lay.baselines.items():
        rec = _pick(records, m, k, extra, field)
        bases[field] = (rec.acc[field], rec.run_id) if rec is not None else None
    cells, gaps, text_rows = [], [], []
    for label, method, row_key, extra in lay.rows:
        rendered = []
        for col_label, field, col_key in lay.cols:
            with_key = row_key if row_key is not None else col_key
            rec = _pick(records, method, with_key, extra, field)
            if rec is None:
                gaps.append(f"{label}{' ✓' if with_key else ''} / {col_label}")
                rendered.append(GAP)
                cells.append({"row": label, "col": col_label, "with_key": with_key, "value": None,
                              "delta": None, "run_id": None})
                continue
            value = rec.acc[field]
            base = bases.get(field)
            delta = None if base is None or base[1] == rec.run_id else format_delta(value, base[0])
            rendered.append(f"{value:.2f}" + (f" {delta}" if delta else ""))
            cells.append({"row": label, "col": col_label, "with_key": with_key, "value": value,
                          "delta": delta, "run_id": rec.run_id})
        key_cell = (["✓" if row_key else "×"] if lay.key_column else [])
        text_rows.append([label, *key_cell, *rendered])
    header = ["Method", *(["with Key"] if lay.key_column else []), *[c[0] for c in lay.cols]]
    widths = [max(len(str(r[i])) for r in [header, *text_rows]) for i in range(len(header))]
    line = lambda r: " | ".join(str(v).ljust(w) for v, w in zip(r, widths)).rstrip()
    text = "\n".join([lay.title, line(header), "-+-".join("-" * w for w in widths), *map(line, text_rows)])
    if gaps:
        text += f"\n{len(gaps)} missing cell(s): " + "; ".join(gaps)
    table = {"layout": layout, "title": lay.title, "cells": cells, "gaps": gaps,
             "run_ids": sorted({c["run_id"] for c in cells if c["run_id"]})}
    return text, table


def write_report(records, layout: str, out_dir) -> dict[str, Path]:
    text, table = render_report(records, layout)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"text": out / f"{layout}.txt", "table": out / f"{layout}.json"}
    paths["text"].write_text(text + "\n")
    paths["table"].write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return paths


def soft_label_rows(normal_probs, closed_probs, open_probs) -> list[dict]:
    """One row per (sample, stream): Normal teacher, SDB clean stream, SDB proxy stream."""
    rows = []
    for stream, probs in (("Normal", normal_probs), ("Closed", closed_probs), ("Open", open_probs)):
        for i, p in enumerate(probs.tolist()):
            rows.append({"sample": i, "stream": stream, **{f"p{c}": v for c, v in enumerate(p)}})
    return rows


def write_soft_labels(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return path


def write_loss_curve(log_rows, path) -> Path:
    """Per-step series; ``neg_dis`` is the negated disturbance term."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["step", "cls", "neg_dis", "main", "aug", "kp", "total", "lr"]
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in log_rows:
            w.writerow({"step": r["step"], "cls": r.get("cls"), "neg_dis": -r["dis"] if "dis" in r else None,
                        "main": r.get("main"), "aug": r.get("aug"), "kp": r.get("kp"),
                        "total": r.get("total"), "lr": r.get("lr")})
    return path
