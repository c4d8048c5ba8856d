"""Resumable experiment suites that emit records for the report layouts.

A suite is a JSON file naming seeds, the layouts to fill and optional
overrides of the training and data configs. Each (seed, cell) is one node;
node results are memoized by the desk pipeline, so rerunning a finished
suite is a no-op and an interrupted suite picks up at the first missing
node. A failing node is reported without discarding completed records.
"""

from __future__ import annotations

import json
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path

from sdbox.errors import ParameterError
from sdbox.experiments.pipeline import DataConfig, DeskPipeline
from sdbox.experiments.registry import RecordStore, make_record
from sdbox.experiments.report import LAYOUTS, write_report
from sdbox.keying import key_fingerprint
from sdbox.training import TrainingConfig, student_spec, teacher_spec

log = logging.getLogger(__name__)

BUILTIN_SUITES = {
    "table1-desk": {"layouts": ["table1"]},
    "table2-desk": {"layouts": ["table2"]},
    "table3-desk": {"layouts": ["table3"]},
    "table5-desk": {"layouts": ["table5"]},
    "table6-desk": {"layouts": ["table6"]},
    "all-desk": {"layouts": ["table1", "table2", "table3", "table5", "table6"]},
}

# table method label -> (record mode, teacher variant name in the pipeline)
METHODS = {
    "Normal": ("normal", "teacher"),
    "Nasty-like": ("nasty_like", "nasty_like"),
    "KE": ("ke", "ke"),
    "SDB": ("sdb", "sdb"),
    "w/o KE": ("ablation", "wo_ke"),
    "w/o KDis": ("ablation", "wo_kdis"),
    "w/o KP": ("ablation", "wo_kp"),
    "Aug": ("aug", "aug"),
}


@dataclass
class SuiteConfig:
    name: str
    layouts: list
    seeds: list = field(default_factory=lambda: [0])
    training: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    @classmethod
    def load(cls, source) -> "SuiteConfig":
        """``source`` is a builtin suite name, a path to a JSON file or a dict."""
        if isinstance(source, dict):
            raw = dict(source)
        elif str(source) in BUILTIN_SUITES:
            raw = {"name": str(source), **BUILTIN_SUITES[str(source)]}
        else:
            path = Path(source)
            if not path.exists():
                raise ParameterError(f"unknown suite {source!r}; builtin: {sorted(BUILTIN_SUITES)}")
            raw = json.loads(path.read_text())
        raw.setdefault("name", Path(str(source)).stem if not isinstance(source, dict) else "suite")
        unknown = [l for l in raw.get("layouts", []) if l not in LAYOUTS]
        if unknown or not raw.get("layouts"):
            raise ParameterError(f"suite needs layouts from {sorted(LAYOUTS)}; got {raw.get('layouts')}")
        return cls(**raw)

    def training_config(self) -> TrainingConfig:
        base = TrainingConfig().to_dict()
        for k, v in self.training.items():
            if isinstance(v, dict) and isinstance(base.get(k), dict):
                base[k] = {**base[k], **v}
            else:
                base[k] = v
        return TrainingConfig.from_dict(base)


@dataclass
class SuiteResult:
    records: list
    failures: dict
    reports: dict

    @property
    def ok(self) -> bool:
        return not self.failures


def _nodes(layouts) -> list[tuple]:
    """Unique (method, with_key, temperature, key_label) cells required by the layouts."""
    out = []
    for name in layouts:
        lay = LAYOUTS[name]
        for _, method, row_key, extra in lay.rows:
            keys = [row_key] if row_key is not None else sorted({c[2] for c in lay.cols if c[2] is not None}) or [False]
            for wk in keys:
                if method == "Scratch":
                    wk = False
                node = (method, wk, float(extra.get("temperature", 4.0)), extra.get("key_label"))
                if node not in out:
                    out.append(node)
    return out


def _record(pipe: DeskPipeline, node: tuple):
    method, with_key, T, key_label = node
    cfg = pipe.cfg
    seeds = {"data": cfg.data_seed, "model": cfg.model_seed, "key": cfg.key_seed + pipe.seed}
    config = {"training": cfg.to_dict(), "data": pipe.data_cfg.__dict__ | {"shape": list(pipe.data_cfg.shape)}}
    extra = {"temperature": T, "seed": pipe.seed}
    sspec = student_spec(cfg, pipe.train).to_dict()
    if method == "Scratch":
        acc = {"teacher": pipe.teacher_acc("teacher")["acc_plain"], "student": pipe.student_acc(None)}
        return make_record("scratch", method, with_key, config, acc, student_spec=sspec, seeds=seeds,
                           extra={"seed": pipe.seed})
    if method == "SDB random key":
        key = pipe.wrong_keys[int(key_label.split("-")[1]) - 1]
        acc = {"student": pipe.student_acc("sdb", f"wrong-{key_label.split('-')[1]}", T)}
        return make_record("attack", method, True, config, acc, teacher_spec=teacher_spec(cfg, pipe.train).to_dict(),
                           student_spec=sspec, key_fingerprint=key_fingerprint(key), seeds=seeds,
                           extra=extra | {"key_label": key_label})
    if method not in METHODS:
        raise ParameterError(f"no pipeline recipe for method {method!r}")
    mode, variant = METHODS[method]
    tacc = pipe.teacher_acc(variant)
    acc = {"teacher": tacc["acc_with_key" if with_key else "acc_plain"],
           "student": pipe.student_acc(variant, "true" if with_key else "none", T)}
    return make_record(mode, method, with_key, config, acc, teacher_spec=teacher_spec(cfg, pipe.train).to_dict(),
                       student_spec=sspec, key_fingerprint=key_fingerprint(pipe.key) if with_key else None,
                       seeds=seeds, extra=extra)


def run_suite(source, root=None, *, cache_dir=None) -> SuiteResult:
    """Run every node of a suite, append its records and write the reports."""
    suite = SuiteConfig.load(source)
    store = RecordStore(root)
    cfg = suite.training_config()
    data_cfg = DataConfig(**suite.data)
    cache = Path(cache_dir) if cache_dir else store.root / "cache"
    records, failures = [], {}
    for seed in suite.seeds:
        pipe = DeskPipeline(seed, cfg, data_cfg, cache_dir=cache)
        for node in _nodes(suite.layouts):
            label = f"seed{seed}:{node[0]}:{'key' if node[1] else 'nokey'}:T{node[2]:g}" + (f":{node[3]}" if node[3] else "")
            try:
                rec = _record(pipe, node)
            except Exception as exc:  # keep going; completed nodes stay memoized
                failures[label] = f"{type(exc).__name__}: {exc}"
                log.error("node %s failed\n%s", label, traceback.format_exc())
                continue
            store.append(rec)
            records.append(rec)
    reports = {}
    if records:
        out = store.root / "reports" / suite.name
        for layout in suite.layouts:
            reports[layout] = write_report(records, layout, out)
    return SuiteResult(records, failures, reports)
