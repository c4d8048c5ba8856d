"""Append-only experiment record store (line-delimited JSON)."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from sdbox.errors import IntegrityError, ParameterError
from sdbox.training import canonical_hash

ROOT_ENV = "SDB_ROOT"
RECORD_FILE = "records.jsonl"

MODES = ("scratch", "normal", "nasty_like", "ke", "sdb", "aug", "ablation", "attack")


def default_root() -> Path:
    return Path(os.environ.get(ROOT_ENV, "runs"))


@dataclass(frozen=True)
class ExperimentRecord:
    run_id: str
    mode: str
    method: str
    with_key: bool
    teacher_spec: dict | None
    student_spec: dict | None
    key_fingerprint: str | None
    acc: dict
    seeds: dict
    config: dict
    config_hash: str
    timestamp: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown record mode {self.mode!r}")
        if canonical_hash(self.config) != self.config_hash:
            raise IntegrityError(f"record {self.run_id}: config hash does not match stored config")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "ExperimentRecord":
        return cls(**json.loads(line))


def make_record(mode: str, method: str, with_key: bool, config: dict, acc: dict, *, teacher_spec=None,
                student_spec=None, key_fingerprint=None, seeds=None, extra=None) -> ExperimentRecord:
    """Build a record whose run id is a digest of everything except the outcome."""
    chash = canonical_hash(config)
    ident = {"mode": mode, "method": method, "with_key": with_key, "config": chash,
             "key": key_fingerprint, "extra": extra or {}}
    run_id = f"{method.lower().replace(' ', '_')}-{canonical_hash(ident)[:10]}"
    return ExperimentRecord(
        run_id=run_id, mode=mode, method=method, with_key=with_key, teacher_spec=teacher_spec,
        student_spec=student_spec, key_fingerprint=key_fingerprint, acc=dict(acc), seeds=dict(seeds or {}),
        config=config, config_hash=chash, timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        extra=dict(extra or {}),
    )


class RecordStore:
    """Records are only ever appended; a run id is written at most once."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_root()
        self.root.mkdir(parents=True, exist_ok=True)
        self.path = self.root / RECORD_FILE
        self._lock = threading.Lock()

    def all(self) -> list[ExperimentRecord]:
        if not self.path.exists():
            return []
        return [ExperimentRecord.from_json(l) for l in self.path.read_text().splitlines() if l.strip()]

    def ids(self) -> set[str]:
        return {r.run_id for r in self.all()}

    def get(self, run_ids) -> list[ExperimentRecord]:
        by_id = {r.run_id: r for r in self.all()}
        missing = [i for i in run_ids if i not in by_id]
        if missing:
            raise ParameterError(f"unknown run ids: {missing}")
        return [by_id[i] for i in run_ids]

    def append(self, record: ExperimentRecord) -> bool:
        """Write ``record`` unless its run id already exists. Returns True if written."""
        with self._lock:
            if record.run_id in self.ids():
                return False
            with self.path.open("a") as f:
                f.write(record.to_json() + "\n")
            return True
