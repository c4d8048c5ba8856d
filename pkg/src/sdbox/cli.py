"""Command-line entry point: ``sdbox <subcommand> ...``.

Every training subcommand writes a checkpoint, a ``.metrics.jsonl`` step log
next to it and a ``.json`` summary, and appends an experiment record to the
store under ``--root`` (or ``$SDB_ROOT``). Exit status is 0 on success, 1 on
a failed run (with the error category on stderr) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from sdbox.errors import ParameterError, SdbError
from sdbox.kd import DistillConfig
from sdbox.keying import generate_key, key_fingerprint, load_key, save_key
from sdbox.models import load_checkpoint, save_checkpoint
from sdbox.sdb_losses import SdbLossWeights
from sdbox.training import (
    TrainingConfig,
    evaluate,
    pretrain_teacher,
    student_spec,
    teacher_spec,
    train_aug_teacher,
    train_sdb,
    train_student,
    with_seed,
)

log = logging.getLogger("sdbox")

ABLATIONS = {"ke": ("disable_ke", "w/o KE"), "kdis": ("disable_kdis", "w/o KDis"), "kp": ("disable_kp", "w/o KP")}


# helpers ------------------------------------------------------------------

def _set_determinism(seed: int, deterministic: bool) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _config(args) -> TrainingConfig:
    cfg = TrainingConfig.from_dict(json.loads(Path(args.config).read_text())) if args.config else TrainingConfig()
    cfg = with_seed(cfg, args.seed)
    over = {}
    for name in ("epochs", "student_epochs", "batch_size", "lr", "student_lr"):
        if getattr(args, name, None) is not None:
            over[name] = getattr(args, name)
    if args.deterministic:
        over["deterministic"] = True
    return replace(cfg, **over)


def _data(args):
    from sdbox.data import load_image_dataset, make_synthetic

    if args.data:
        return load_image_dataset(args.data, split="train"), load_image_dataset(args.data, split="test")
    return make_synthetic(args.seed, noise=0.2, nuisance=0.1)


def _store(args):
    from sdbox.experiments.registry import RecordStore

    return RecordStore(args.root)


def _write_outputs(model, out, log_rows, summary, extra) -> None:
    out = Path(out)
    save_checkpoint(model, out, step=len(log_rows), extra=extra)
    with out.with_suffix(".metrics.jsonl").open("w") as f:
        for row in log_rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    out.with_suffix(".json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")


def _record(args, cfg, train, mode, method, with_key, acc, key=None, extra=None):
    from sdbox.experiments.registry import make_record

    config = {"training": cfg.to_dict(), "data": args.data or f"synthetic:{args.seed}"}
    rec = make_record(mode, method, with_key, config, acc, teacher_spec=teacher_spec(cfg, train).to_dict(),
                      student_spec=student_spec(cfg, train).to_dict(),
                      key_fingerprint=key_fingerprint(key) if key is not None else None,
                      seeds={"model": cfg.model_seed, "data": cfg.data_seed}, extra=extra or {})
    _store(args).append(rec)
    print(f"record {rec.run_id}")
    return rec


def _sdb_weights(args, cfg) -> TrainingConfig:
    w = cfg.sdb
    over = {k: getattr(args, k) for k in ("omega", "eta", "t_dis", "t_aug") if getattr(args, k, None) is not None}
    return replace(cfg, sdb=SdbLossWeights(**{**w.__dict__, **over})) if over else cfg


# subcommands --------------------------------------------------------------

def cmd_gen_key(args):
    shape = tuple(int(s) for s in args.shape.split(","))
    seed = args.key_seed if args.key_seed is not None else args.seed
    key = generate_key(seed, shape, args.lam)
    save_key(key, args.out)
    print(f"key {key_fingerprint(key)} -> {args.out}")


def cmd_make_data(args):
    from sdbox.data import export_dataset, make_synthetic

    train, test = make_synthetic(args.seed, args.num_classes, args.per_class, test_per_class=args.test_per_class,
                                 noise=args.noise, nuisance=args.nuisance, max_shift=args.max_shift)
    export_dataset([train, test], args.out)
    print(f"dataset {train.checksum()[:16]} train={len(train)} test={len(test)} -> {args.out}")


def cmd_import_data(args):
    from sdbox.data import export_dataset, load_image_dataset

    splits = [load_image_dataset(args.path, args.format, s) for s in args.splits]
    for h in splits:
        print(f"{h.split}: {len(h)} samples, {h.num_classes} classes, shape {h.shape}, sha {h.checksum()[:16]}")
    if args.out:
        export_dataset(splits, args.out)


def cmd_pretrain(args):
    cfg = _config(args)
    train, test = _data(args)
    rows: list = []
    model = pretrain_teacher(cfg, train, rows)
    acc = evaluate(model, test)
    _write_outputs(model, args.out, rows, {"acc": acc, "config_hash": cfg.config_hash()},
                   {"method": "Normal", "config_hash": cfg.config_hash()})
    print(f"teacher acc {acc['acc_plain']:.2f}")


def _train_wrapped(args, cfg, method, mode):
    train, test = _data(args)
    teacher, _ = load_checkpoint(args.teacher)
    key = load_key(args.key)
    rows: list = []
    model = train_sdb(cfg, teacher, key, train, rows)
    acc = evaluate(model, test, key)
    _write_outputs(model, args.out, rows, {"acc": acc, "config_hash": cfg.config_hash()},
                   {"method": method, "mode": mode, "config_hash": cfg.config_hash(),
                    "key_fingerprint": key_fingerprint(key)})
    print(f"{method} teacher acc {acc['acc_plain']:.2f} with key {acc['acc_with_key']:.2f}")
    return model, key, acc, train, test


def cmd_train_sdb(args):
    cfg = _sdb_weights(args, _config(args))
    _train_wrapped(args, cfg, "SDB", "sdb")


def cmd_train_aug(args):
    cfg = _sdb_weights(args, _config(args))
    train, test = _data(args)
    teacher, _ = load_checkpoint(args.teacher)
    rows: list = []
    model = train_aug_teacher(cfg, teacher, train, rows)
    acc = evaluate(model, test)
    _write_outputs(model, args.out, rows, {"acc": acc, "config_hash": cfg.config_hash()},
                   {"method": "Aug", "mode": "aug", "config_hash": cfg.config_hash()})
    print(f"aug teacher acc {acc['acc_plain']:.2f}")


def _distill(args, cfg, train, test, teacher, key, T):
    if teacher is None:
        d = DistillConfig(mode="scratch")
    elif key is None:
        d = DistillConfig(alpha=cfg.distill.alpha, temperature=T, mode="kd_plain")
    else:
        d = DistillConfig(alpha=cfg.distill.alpha, temperature=T, mode="kd_with_key",
                          key_fingerprint=key_fingerprint(key))
    rows: list = []
    student = train_student(cfg, train, teacher, key, d, rows)
    return student, rows, evaluate(student, test)["acc_plain"]


def cmd_distill(args):
    from sdbox.experiments.suite import METHODS

    cfg = _config(args)
    train, test = _data(args)
    T = args.temperature if args.temperature is not None else cfg.distill.temperature
    if args.mode == "scratch":
        teacher, header, key, method = None, {}, None, "Scratch"
    else:
        if not args.teacher:
            raise ParameterError("--teacher is required for --mode kd")
        teacher, header = load_checkpoint(args.teacher)
        method = header.get("extra", {}).get("method", "Normal")
        if args.no_key == bool(args.key):
            raise ParameterError("pass exactly one of --key or --no-key")
        key = load_key(args.key) if args.key else None
    student, rows, s_acc = _distill(args, cfg, train, test, teacher, key, T)
    t_acc = None
    if teacher is not None:
        ev = evaluate(teacher, test, key)
        t_acc = ev["acc_with_key" if key is not None else "acc_plain"]
    acc = {"student": s_acc} | ({"teacher": t_acc} if t_acc is not None else {})
    _write_outputs(student, args.out, rows, {"acc": acc, "config_hash": cfg.config_hash(), "temperature": T},
                   {"method": f"student:{method}", "config_hash": cfg.config_hash()})
    mode = "scratch" if teacher is None else METHODS.get(method, ("normal",))[0]
    extra = {"seed": args.seed} if teacher is None else {"temperature": float(T), "seed": args.seed}
    _record(args, cfg, train, mode, method, key is not None, acc, key, extra)
    print(f"student acc {s_acc:.2f}" + (f" (teacher {t_acc:.2f})" if t_acc is not None else ""))


def cmd_attack(args):
    from sdbox.attacks import random_key_attack, temperature_attack

    cfg = _config(args)
    train, test = _data(args)
    sdb, _ = load_checkpoint(args.sdb)
    key = load_key(args.key)
    if args.kind == "temperature":
        temps = [float(t) for t in args.temps.split(",")]
        report = temperature_attack(sdb, temps, train, test, cfg, key)
    else:
        report = random_key_attack(sdb, args.n_keys, args.attacker_seed, train, test, cfg, key)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_table(), indent=1, sort_keys=True) + "\n")
    print(report.to_text())


def cmd_ablate(args):
    field, method = ABLATIONS[args.disable]
    cfg = replace(_sdb_weights(args, _config(args)), **{field: True})
    model, key, acc, train, test = _train_wrapped(args, cfg, method, "ablation")
    T = cfg.distill.temperature
    _, _, unauth = _distill(args, cfg, train, test, model, None, T)
    _, _, auth = _distill(args, cfg, train, test, model, key, T)
    extra = {"temperature": float(T), "seed": args.seed}
    _record(args, cfg, train, "ablation", method, False, {"teacher": acc["acc_plain"], "student": unauth}, None, extra)
    _record(args, cfg, train, "ablation", method, True, {"teacher": acc["acc_with_key"], "student": auth}, key, extra)
    print(f"{method}: student w/o key {unauth:.2f}, with key {auth:.2f}")


def cmd_report(args):
    from sdbox.experiments.report import render_report, write_report

    store = _store(args)
    records = store.get(args.runs) if args.runs else store.all()
    text, _ = render_report(records, args.layout)
    print(text)
    write_report(records, args.layout, args.out or store.root / "reports")


def cmd_suite(args):
    from sdbox.experiments.suite import run_suite

    result = run_suite(args.suite, args.root)
    for layout, paths in result.reports.items():
        print(Path(paths["text"]).read_text())
    for node, err in result.failures.items():
        print(f"FAILED {node}: {err}", file=sys.stderr)
    if not result.ok:
        raise SdbError(f"{len(result.failures)} suite node(s) failed")


# parser -------------------------------------------------------------------

def _train_flags(p, teacher=False, key=False, weights=False):
    p.add_argument("--data", help="dataset directory from make-data (default: synthetic desk data)")
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int)
    p.add_argument("--student-epochs", dest="student_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--student-lr", dest="student_lr", type=float)
    if teacher:
        p.add_argument("--teacher", required=True, help="pretrained teacher checkpoint")
    if key:
        p.add_argument("--key", required=True, help="key file from gen-key")
    if weights:
        p.add_argument("--omega", type=float)
        p.add_argument("--eta", type=float)
        p.add_argument("--t-dis", dest="t_dis", type=float)
        p.add_argument("--t-aug", dest="t_aug", type=float, help="omit for the infinite-temperature mode")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sdbox", description="Key-gated distillation protection on desk-scale data.")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--deterministic", action="store_true", help="force deterministic kernels")
    ap.add_argument("--root", default=os.environ.get("SDB_ROOT", "runs"), help="record/report root ($SDB_ROOT)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-key", help="generate and save a secret key")
    p.add_argument("--seed", dest="key_seed", type=int)
    p.add_argument("--shape", default="8,8,3", help="H,W,C")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_key)

    p = sub.add_parser("make-data", help="write the synthetic desk dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=500)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--nuisance", type=float, default=0.1)
    p.add_argument("--max-shift", type=int, default=2)
    p.set_defaults(fn=cmd_make_data)

    p = sub.add_parser("import-data", help="validate a dataset directory, optionally re-export it")
    p.add_argument("--path", required=True)
    p.add_argument("--format", default="sdb-images")
    p.add_argument("--splits", nargs="+", default=["train", "test"])
    p.add_argument("--out")
    p.set_defaults(fn=cmd_import_data)

    p = sub.add_parser("pretrain", help="train the reference teacher")
    _train_flags(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("train-sdb", help="wrap a teacher with a key")
    _train_flags(p, teacher=True, key=True, weights=True)
    p.set_defaults(fn=cmd_train_sdb)

    p = sub.add_parser("train-aug", help="fine-tune a teacher with knowledge augmentation only")
    _train_flags(p, teacher=True, weights=True)
    p.set_defaults(fn=cmd_train_aug)

    p = sub.add_parser("distill", help="train a student (scratch or KD)")
    _train_flags(p)
    p.add_argument("--mode", choices=["scratch", "kd"], default="kd")
    p.add_argument("--teacher")
    p.add_argument("--key")
    p.add_argument("--no-key", action="store_true")
    p.add_argument("--temperature", type=float)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("attack", help="temperature or random-key attack on a wrapped teacher")
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--student-epochs", dest="student_epochs", type=int)
    p.add_argument("--sdb", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--kind", choices=["temperature", "random-key"], default="temperature")
    p.add_argument("--temps", default="1,4,8,16")
    p.add_argument("--n-keys", type=int, default=3)
    p.add_argument("--attacker-seed", type=int, default=10_000)
    p.add_argument("--out", required=True, help="attack table (JSON)")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("ablate", help="train an SDB variant with one term disabled and distill from it")
    _train_flags(p, teacher=True, key=True, weights=True)
    p.add_argument("--disable", choices=sorted(ABLATIONS), required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="render stored records into a table layout")
    p.add_argument("--runs", nargs="*", help="run ids (default: all records)")
    p.add_argument("--layout", default="table3")
    p.add_argument("--out", help="report directory (default: <root>/reports)")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("suite", help="run a resumable experiment suite")
    p.add_argument("suite", help="builtin suite name or JSON suite file")
    p.set_defaults(fn=cmd_suite)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _set_determinism(args.seed, args.deterministic)
    try:
        args.fn(args)
    except SdbError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
