"""Robustness probes against a wrapped teacher: temperature sweeps and
random-key distillation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from sdbox.data import DatasetHandle
from sdbox.errors import ParameterError, SdbError
from sdbox.kd import DistillConfig
from sdbox.keying import Key, generate_key, key_fingerprint
from sdbox.models import snapshot_frozen
from sdbox.training import TrainingConfig, evaluate, train_student


class KeyCollisionError(SdbError):
    """An attack key equals the true key."""

    category = "key_collision"


@dataclass(frozen=True)
class AttackRow:
    label: str
    value: str
    acc: float
    seed: int
    config_hash: str


@dataclass(frozen=True)
class AttackReport:
    kind: str
    rows: tuple[AttackRow, ...]
    scratch_acc: float
    authorized_acc: float
    seed: int
    config_hash: str
    sdb_checksum: str = ""
    extra: dict = field(default_factory=dict)

    def attack_accs(self) -> list[float]:
        return [r.acc for r in self.rows]

    def to_table(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "sdb_checksum": self.sdb_checksum,
            "scratch": self.scratch_acc,
            "authorized": self.authorized_acc,
            "rows": [r.__dict__ for r in self.rows],
        }

    def to_text(self) -> str:
        if self.kind == "temperature":
            heads = [r.value for r in self.rows]
            lines = ["Method        | " + " | ".join(f"T={h:>5}" for h in heads),
                     "SDB (w/o key) | " + " | ".join(f"{r.acc:7.2f}" for r in self.rows)]
            lines.append(f"SDB (w key)   | {self.authorized_acc:7.2f} (T={self.extra.get('authorized_T', '')})")
        else:
            heads = ["key"] + [r.label for r in self.rows]
            lines = ["Method  | " + " | ".join(f"{h:>9}" for h in heads),
                     "Scratch | " + " | ".join(f"{self.scratch_acc:9.2f}" for _ in heads),
                     "SDB     | " + " | ".join(f"{a:9.2f}" for a in [self.authorized_acc] + self.attack_accs())]
        lines.append(f"scratch baseline: {self.scratch_acc:.2f}  seed={self.seed}  config={self.config_hash}")
        return "\n".join(lines)


def _check_untouched(frozen, before: str) -> None:
    if frozen.checksum() != before:
        raise SdbError("attack run modified the SDB model")


def _student_acc(cfg, train, test, teacher, key, distill) -> float:
    student = train_student(cfg, train, teacher, key, distill)
    return evaluate(student, test)["acc_plain"]


def _baselines(cfg, train, test, sdb, key, baselines):
    if baselines is not None:
        return baselines["scratch"], baselines["authorized"]
    scratch = _student_acc(cfg, train, test, None, None, DistillConfig(mode="scratch"))
    auth_cfg = replace(cfg.distill, mode="kd_with_key", key_fingerprint=key_fingerprint(key))
    authorized = _student_acc(cfg, train, test, sdb, key, auth_cfg)
    return scratch, authorized


def temperature_attack(sdb, temps, train: DatasetHandle, test: DatasetHandle, cfg: TrainingConfig,
                       key: Key, baselines: dict | None = None) -> AttackReport:
    """Unauthorized distillation at each temperature in ``temps``."""
    temps = list(temps)
    if not temps:
        raise ParameterError("temperature sweep is empty")
    if any(not t > 0 for t in temps):
        raise ParameterError("temperatures must be > 0")
    frozen = snapshot_frozen(sdb)
    before = frozen.checksum()
    h = cfg.config_hash()
    rows = []
    for T in sorted(temps):
        d = DistillConfig(alpha=cfg.distill.alpha, temperature=float(T), mode="kd_plain")
        rows.append(AttackRow(f"T={T:g}", f"{T:g}", _student_acc(cfg, train, test, frozen, None, d),
                              cfg.model_seed, h))
    scratch, authorized = _baselines(cfg, train, test, frozen, key, baselines)
    _check_untouched(frozen, before)
    return AttackReport("temperature", tuple(rows), scratch, authorized, cfg.model_seed, h, before,
                        {"authorized_T": cfg.distill.temperature})


def attacker_keys(true_key: Key, n_keys: int, attacker_seed: int) -> list[Key]:
    """Keys sharing the true key's lambda and shape, seeds disjoint from it."""
    if n_keys < 1:
        raise ParameterError("n_keys must be >= 1")
    rng = np.random.default_rng(attacker_seed)
    keys: list[Key] = []
    while len(keys) < n_keys:
        seed = int(rng.integers(0, 2**63))
        if seed != true_key.seed:
            keys.append(generate_key(seed, true_key.shape, true_key.lam))
    return keys


def random_key_attack(sdb, n_keys: int, attacker_seed: int, train: DatasetHandle, test: DatasetHandle,
                      cfg: TrainingConfig, true_key: Key, keys: list[Key] | None = None,
                      baselines: dict | None = None) -> AttackReport:
    """Authorized-style distillation with wrong keys."""
    keys = list(keys) if keys is not None else attacker_keys(true_key, n_keys, attacker_seed)
    true_fp = key_fingerprint(true_key)
    for k in keys:
        if key_fingerprint(k) == true_fp:
            raise KeyCollisionError("the true key was supplied as an attack key")
    frozen = snapshot_frozen(sdb)
    before = frozen.checksum()
    h = cfg.config_hash()
    rows = []
    for i, k in enumerate(keys, 1):
        d = replace(cfg.distill, mode="kd_with_key", key_fingerprint=key_fingerprint(k))
        rows.append(AttackRow(f"random-{i}", key_fingerprint(k), _student_acc(cfg, train, test, frozen, k, d),
                              cfg.model_seed, h))
    scratch, authorized = _baselines(cfg, train, test, frozen, true_key, baselines)
    _check_untouched(frozen, before)
    return AttackReport("random_key", tuple(rows), scratch, authorized, cfg.model_seed, h, before,
                        {"true_key": true_fp, "attacker_seed": attacker_seed})
