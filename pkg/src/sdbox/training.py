"""Training procedures: teacher pretraining, SDB wrapping, augmentation-only
teachers, student distillation and evaluation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
from torch import nn

from sdbox.data import DatasetHandle, dual_stream_batches, num_batches
from sdbox.errors import ParameterError, ShapeError, TrainingDivergedError
from sdbox.kd import DistillConfig, student_loss
from sdbox.keying import Key, embed_key
from sdbox.models import FrozenModel, ModelSpec, build_model, snapshot_frozen
from sdbox.sdb_losses import LossBreakdown, SdbLossWeights, total_sdb_loss

torch.set_num_threads(1)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    cosine: bool = True
    teacher_model: str = "resnet_teacher"
    student_model: str = "mlp_student"
    student_epochs: int = 30
    student_lr: float = 0.05
    sdb: SdbLossWeights = field(default_factory=SdbLossWeights)
    distill: DistillConfig = field(default_factory=DistillConfig)
    model_seed: int = 0
    data_seed: int = 0
    key_seed: int = 1234
    deterministic: bool = True
    disable_ke: bool = False
    disable_kdis: bool = False
    disable_kp: bool = False
    sdb_from_scratch: bool = False
    # input fed to the frozen references inside the augmentation term
    aug_reference_input: str = "x"
    augment: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.student_epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.aug_reference_input not in ("x", "x_tilde"):
            raise ParameterError("aug_reference_input must be 'x' or 'x_tilde'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        if isinstance(d.get("sdb"), dict):
            d["sdb"] = SdbLossWeights(**d["sdb"])
        if isinstance(d.get("distill"), dict):
            d["distill"] = DistillConfig(**d["distill"])
        return cls(**d)

    def config_hash(self) -> str:
        return canonical_hash(self.to_dict())


def canonical_json(obj) -> str:
    """Sorted keys, floats in repr form: stable across runs."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def canonical_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]


def teacher_spec(cfg: TrainingConfig, data: DatasetHandle, seed_offset: int = 0) -> ModelSpec:
    return ModelSpec(cfg.teacher_model, tuple(data.shape), data.num_classes, cfg.model_seed + seed_offset)


def student_spec(cfg: TrainingConfig, data: DatasetHandle, seed_offset: int = 100) -> ModelSpec:
    return ModelSpec(cfg.student_model, tuple(data.shape), data.num_classes, cfg.model_seed + seed_offset)


def _optimizer(model: nn.Module, lr: float, cfg: TrainingConfig, total_steps: int):
    opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    if cfg.cosine and total_steps > 0:
        sched = torch.optim.lr_scheduler.LambdaLR(
            opt, lambda s: 0.5 * (1.0 + math.cos(math.pi * min(s, total_steps) / total_steps)))
    else:
        sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: 1.0)
    return opt, sched


def _epoch_seed(cfg: TrainingConfig, epoch: int, salt: int = 0) -> int:
    return (cfg.data_seed * 1_000_003 + salt * 7919 + epoch) % (2**63)


def _check_finite(loss: torch.Tensor, step: int, terms: dict | None = None):
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"loss became non-finite at step {step}; terms={terms}")


def _run(model, cfg, data, key, epochs, lr, salt, step_fn, log):
    """Shared SGD loop. ``step_fn(batch) -> (loss, terms_dict)``."""
    total = epochs * num_batches(data, cfg.batch_size)
    opt, sched = _optimizer(model, lr, cfg, total)
    step = 0
    for epoch in range(epochs):
        model.train()
        for batch in dual_stream_batches(data, key, cfg.batch_size, _epoch_seed(cfg, epoch, salt),
                                         cfg.deterministic, augment=cfg.augment, normalize=False):
            loss, terms = step_fn(batch)
            _check_finite(loss, step, terms)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            if log is not None:
                log.append({"step": step, "epoch": epoch, **terms, "lr": sched.get_last_lr()[0],
                            "seed": cfg.data_seed})
            sched.step()
            step += 1
    return model.eval()


def pretrain_teacher(cfg: TrainingConfig, train: DatasetHandle, log: list | None = None, spec=None):
    """Plain cross-entropy training of the reference teacher."""
    model = build_model(spec or teacher_spec(cfg, train))
    norm = train.normalizer()

    def step(b):
        loss = nn.functional.cross_entropy(model(norm(b.x)), b.y)
        return loss, {"cls": float(loss.detach()), "total": float(loss.detach())}

    return _run(model, cfg, train, None, cfg.epochs, cfg.lr, 1, step, log)


def random_reference(cfg: TrainingConfig, train: DatasetHandle) -> FrozenModel:
    """Frozen random-init network sharing the teacher's architecture."""
    return snapshot_frozen(build_model(teacher_spec(cfg, train, seed_offset=1)))


def sdb_step_loss(sdb, teacher, rand_ref, batch, y, cfg: TrainingConfig, norm) -> LossBreakdown:
    """One SDB objective evaluation on a raw-pixel batch ``(x, x_tilde)``."""
    x, xt = norm(batch[0]), norm(batch[1])
    need_proxy = not (cfg.disable_ke and cfg.disable_kdis and cfg.disable_kp)
    if need_proxy:
        z = sdb(torch.cat([x, xt]))
        z_x, z_xt = z[: len(x)], z[len(x):]
    else:
        z_x, z_xt = sdb(x), None
    z_pre, z_rand = teacher(x), rand_ref(x)
    z_pre_aug = z_rand_aug = None
    if cfg.aug_reference_input == "x_tilde" and need_proxy:
        z_pre_aug, z_rand_aug = teacher(xt), rand_ref(xt)
    return total_sdb_loss(
        z_x, z_xt, y, z_pre, z_rand, cfg.sdb,
        z_pre_aug=z_pre_aug, z_rand_aug=z_rand_aug,
        use_proxy_cls=not cfg.disable_ke, use_dis=not cfg.disable_kdis, use_kp=not cfg.disable_kp,
    )


def train_sdb(cfg: TrainingConfig, teacher, key: Key | None, train: DatasetHandle,
              log: list | None = None, rand_ref: FrozenModel | None = None):
    """Wrap ``teacher`` into an SDB model keyed by ``key``."""
    if key is None:
        raise ParameterError("SDB training needs a key")
    if tuple(key.shape) != tuple(train.shape):
        raise ShapeError(f"key shape {key.shape} != dataset shape {train.shape}")
    frozen_t = snapshot_frozen(teacher)
    if frozen_t.spec is not None and tuple(frozen_t.spec.input_shape) != tuple(train.shape):
        raise ShapeError("teacher input shape does not match the dataset")
    rand_ref = rand_ref or random_reference(cfg, train)
    sdb = build_model(teacher_spec(cfg, train, seed_offset=2))
    if not cfg.sdb_from_scratch:
        sdb.load_state_dict(frozen_t.state_dict())
    norm = train.normalizer()

    def step(b):
        bd = sdb_step_loss(sdb, frozen_t, rand_ref, (b.x, b.x_tilde), b.y, cfg, norm)
        return bd.total, bd.as_dict()

    return _run(sdb, cfg, train, key, cfg.epochs, cfg.lr, 2, step, log)


def train_aug_teacher(cfg: TrainingConfig, teacher, train: DatasetHandle, log: list | None = None,
                      rand_ref: FrozenModel | None = None):
    """Fine-tune with CE + maintain + eta * aug on the clean stream only."""
    frozen_t = snapshot_frozen(teacher)
    rand_ref = rand_ref or random_reference(cfg, train)
    model = build_model(teacher_spec(cfg, train, seed_offset=3))
    model.load_state_dict(frozen_t.state_dict())
    norm = train.normalizer()

    def step(b):
        x = norm(b.x)
        bd = total_sdb_loss(model(x), None, b.y, frozen_t(x), rand_ref(x), cfg.sdb, use_dis=False)
        return bd.total, bd.as_dict()

    return _run(model, cfg, train, None, cfg.epochs, cfg.lr, 3, step, log)


def train_student(cfg: TrainingConfig, train: DatasetHandle, teacher=None, key: Key | None = None,
                  distill: DistillConfig | None = None, log: list | None = None, spec=None):
    """Train a student under ``distill.mode`` (scratch / kd_plain / kd_with_key)."""
    distill = distill or cfg.distill
    student = build_model(spec or student_spec(cfg, train))
    frozen_t = snapshot_frozen(teacher) if teacher is not None else None
    if distill.mode == "scratch":
        frozen_t = None
    norm = train.normalizer()

    def step(b):
        loss = student_loss(b.x, b.y, student, frozen_t, key, distill, norm)
        return loss, {"total": float(loss.detach())}

    return _run(student, cfg, train, None, cfg.student_epochs, cfg.student_lr, 4, step, log)


@torch.no_grad()
def predict(model, data: DatasetHandle, key: Key | None = None, batch_size: int = 1000) -> np.ndarray:
    if isinstance(model, nn.Module):
        model.eval()
    norm = data.normalizer()
    preds = []
    for start in range(0, len(data), batch_size):
        x = torch.from_numpy(data.images[start:start + batch_size])
        if key is not None:
            x = embed_key(x, key)
        preds.append(model(norm(x)).argmax(-1).numpy())
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def evaluate(model, data: DatasetHandle, key: Key | None = None) -> dict:
    """Top-1 accuracy (percent) on clean inputs and, with a key, on proxy inputs."""
    spec = getattr(model, "spec", None)
    if spec is not None and tuple(spec.input_shape) != tuple(data.shape):
        raise ShapeError(f"model input {spec.input_shape} != dataset shape {data.shape}")
    out = {"acc_plain": 100.0 * float((predict(model, data) == data.labels).mean())}
    if key is not None:
        out["acc_with_key"] = 100.0 * float((predict(model, data, key) == data.labels).mean())
    return out


@torch.no_grad()
def soft_labels(model, data: DatasetHandle, key: Key | None = None, T: float = 4.0, n: int = 1000):
    """Tempered soft labels on the first ``n`` samples (clean or proxy)."""
    x = torch.from_numpy(data.images[:n])
    if key is not None:
        x = embed_key(x, key)
    return torch.softmax(model(data.normalizer()(x)) / T, dim=-1)


def with_seed(cfg: TrainingConfig, seed: int) -> TrainingConfig:
    return replace(cfg, model_seed=seed, data_seed=seed)
