"""Per-seed desk pipeline with on-disk memoization.

Every trained artifact (teachers, wrapped teachers, student accuracies) is
computed at most once per (seed, config) and cached under ``cache_dir``, so
the acceptance suite, the experiment suite and the scripts share work and
an interrupted run resumes where it stopped.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from sdbox.data import DatasetHandle, make_synthetic
from sdbox.kd import DistillConfig
from sdbox.keying import Key, generate_key, key_fingerprint
from sdbox.models import load_checkpoint, save_checkpoint, state_checksum
from sdbox.attacks import attacker_keys
from sdbox.training import (
    TrainingConfig,
    canonical_hash,
    evaluate,
    pretrain_teacher,
    random_reference,
    train_aug_teacher,
    train_sdb,
    train_student,
    with_seed,
)

# wrapped-teacher variants: name -> ablation switches
TEACHER_VARIANTS = {
    "sdb": {},
    "wo_kdis": {"disable_kdis": True},
    "wo_kp": {"disable_kp": True},
    "wo_ke": {"disable_ke": True},
    "ke": {"disable_kdis": True, "disable_kp": True},
    "nasty_like": {"disable_ke": True, "disable_kp": True},
}


@dataclass
class DataConfig:
    num_classes: int = 10
    per_class: int = 500
    test_per_class: int = 100
    shape: tuple = (8, 8, 3)
    noise: float = 0.2
    nuisance: float = 0.1
    max_shift: int = 2

    def make(self, seed: int) -> tuple[DatasetHandle, DatasetHandle]:
        return make_synthetic(seed, self.num_classes, self.per_class, self.shape,
                              test_per_class=self.test_per_class, noise=self.noise,
                              nuisance=self.nuisance, max_shift=self.max_shift)


class DeskPipeline:
    def __init__(self, seed: int, cfg: TrainingConfig | None = None, data_cfg: DataConfig | None = None,
                 cache_dir=None, lam: float = 0.5, n_wrong_keys: int = 3):
        self.seed = seed
        self.cfg = with_seed(cfg or TrainingConfig(), seed)
        self.data_cfg = data_cfg or DataConfig()
        self.train, self.test = self.data_cfg.make(seed)
        self.key = generate_key(self.cfg.key_seed + seed, self.train.shape, lam)
        self.wrong_keys = attacker_keys(self.key, n_wrong_keys, attacker_seed=10_000 + seed)
        tag = canonical_hash({"cfg": self.cfg.to_dict(), "data": self.data_cfg.__dict__, "lam": lam})
        self.dir = Path(cache_dir or "runs/cache") / f"seed{seed}-{tag}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self._models = {}
        self._results_path = self.dir / "results.json"
        self.results = json.loads(self._results_path.read_text()) if self._results_path.exists() else {}
        self.logs: dict[str, list] = {}

    # bookkeeping -----------------------------------------------------------
    def _save_results(self):
        self._results_path.write_text(json.dumps(self.results, indent=1, sort_keys=True))

    def _memo(self, name: str, fn):
        if name not in self.results:
            t0 = time.perf_counter()
            value = fn()
            self.results[name] = {"value": value, "seconds": time.perf_counter() - t0}
            self._save_results()
        return self.results[name]["value"]

    def seconds(self, *names: str) -> float:
        return sum(self.results.get(n, {}).get("seconds", 0.0) for n in names)

    def _model(self, name: str, build):
        if name in self._models:
            return self._models[name]
        path = self.dir / f"{name}.ckpt"
        if path.exists():
            model, _ = load_checkpoint(path)
        else:
            t0 = time.perf_counter()
            log: list = []
            model = build(log)
            save_checkpoint(model, path, step=len(log))
            if log:
                with (self.dir / f"{name}.metrics.jsonl").open("w") as f:
                    for row in log:
                        f.write(json.dumps(row, sort_keys=True) + "\n")
            self.results[f"train:{name}"] = {"value": state_checksum(model),
                                             "seconds": time.perf_counter() - t0}
            self._save_results()
        self._models[name] = model
        return model

    def read_log(self, name: str) -> list[dict]:
        path = self.dir / f"{name}.metrics.jsonl"
        return [json.loads(l) for l in path.read_text().splitlines()] if path.exists() else []

    # teachers ----------------------------------------------------------------
    def teacher(self):
        return self._model("teacher", lambda log: pretrain_teacher(self.cfg, self.train, log))

    def wrapped(self, variant: str = "sdb"):
        switches = TEACHER_VARIANTS[variant]
        cfg = replace(self.cfg, **switches)
        return self._model(variant, lambda log: train_sdb(cfg, self.teacher(), self.key, self.train, log))

    def aug_teacher(self):
        return self._model("aug", lambda log: train_aug_teacher(self.cfg, self.teacher(), self.train, log))

    def teacher_model(self, name: str):
        if name == "teacher":
            return self.teacher()
        if name == "aug":
            return self.aug_teacher()
        return self.wrapped(name)

    def training_cost(self, *names: str) -> float:
        """Seconds spent training the named models plus their prerequisites."""
        deps = set(names)
        if deps & (set(TEACHER_VARIANTS) | {"aug"}):
            deps.add("teacher")
        return self.seconds(*(f"train:{n}" for n in deps))

    # evaluations -----------------------------------------------------------
    def teacher_acc(self, name: str) -> dict:
        if f"eval:{name}" not in self.results:
            self.teacher_model(name)  # train outside the eval timer
        return self._memo(f"eval:{name}", lambda: evaluate(self.teacher_model(name), self.test, self.key))

    def _key(self, which: str) -> Key | None:
        if which == "none":
            return None
        if which == "true":
            return self.key
        return self.wrong_keys[int(which.split("-")[1]) - 1]

    def student_acc(self, teacher: str | None = None, key: str = "none", T: float | None = None) -> float:
        """Accuracy (percent) of a distilled student; ``teacher=None`` means scratch.

        ``key`` is ``none`` (unauthorized), ``true`` or ``wrong-<i>``.
        """
        T = self.cfg.distill.temperature if T is None else float(T)
        name = f"student:{teacher or 'scratch'}:{key}:T{T:g}"
        if teacher is not None and name not in self.results:
            self.teacher_model(teacher)  # train outside the student timer

        def run():
            k = self._key(key)
            if teacher is None:
                d = DistillConfig(mode="scratch")
                model = None
            else:
                mode = "kd_plain" if k is None else "kd_with_key"
                d = DistillConfig(alpha=self.cfg.distill.alpha, temperature=T, mode=mode,
                                  key_fingerprint=key_fingerprint(k) if k is not None else None)
                model = self.teacher_model(teacher)
            student = train_student(self.cfg, self.train, model, k, d)
            return evaluate(student, self.test)["acc_plain"]

        return self._memo(name, run)

    def student_cost(self, teacher: str | None = None, key: str = "none", T: float | None = None) -> float:
        T = self.cfg.distill.temperature if T is None else float(T)
        return self.seconds(f"student:{teacher or 'scratch'}:{key}:T{T:g}")
