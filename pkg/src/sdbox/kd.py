"""Student objectives: scratch, unauthorized KD and key-authorized KD."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import torch

from sdbox.errors import ParameterError
from sdbox.keying import Key, embed_key, key_fingerprint
from sdbox.softops import cross_entropy_logits, kd_divergence

DistillMode = Literal["scratch", "kd_plain", "kd_with_key"]
MODES = ("scratch", "kd_plain", "kd_with_key")


@dataclass(frozen=True)
class DistillConfig:
    alpha: float = 0.9
    temperature: float = 4.0
    mode: DistillMode = "kd_plain"
    key_fingerprint: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown distillation mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if self.mode == "kd_with_key" and not self.key_fingerprint:
            raise ParameterError("kd_with_key needs a key fingerprint")


# T=4 / T=20 mirror the small- and many-class settings
SMALL_IMAGE_PROFILE = DistillConfig(alpha=0.9, temperature=4.0)
MANY_CLASS_PROFILE = DistillConfig(alpha=0.9, temperature=20.0)


def _kd_objective(z_s, z_t, y, cfg: DistillConfig) -> torch.Tensor:
    ce = cross_entropy_logits(z_s, y)
    if cfg.alpha == 0.0:
        return ce
    return (1.0 - cfg.alpha) * ce + cfg.alpha * kd_divergence(z_s, z_t.detach(), cfg.temperature)


def kd_loss_unauthorized(z_student_x, z_teacher_x_frozen, y, cfg: DistillConfig) -> torch.Tensor:
    return _kd_objective(z_student_x, z_teacher_x_frozen, y, cfg)


def kd_loss_authorized(z_student_x, z_teacher_xtilde_frozen, y, cfg: DistillConfig) -> torch.Tensor:
    """Same form as the unauthorized loss; the teacher logits must come from proxy inputs."""
    if cfg.mode != "kd_with_key" or not cfg.key_fingerprint:
        raise ParameterError("authorized distillation requires mode 'kd_with_key' and a key")
    return _kd_objective(z_student_x, z_teacher_xtilde_frozen, y, cfg)


def student_loss(x_raw, y, student, teacher, key: Key | None, cfg: DistillConfig, normalize=None):
    """Loss of one batch under ``cfg.mode``. ``x_raw`` is in pixel space.

    The teacher sees ``embed_key(x_raw)`` in authorized mode; the student
    always sees clean inputs.
    """
    norm = normalize or (lambda t: t)
    z_s = student(norm(x_raw))
    if cfg.mode == "scratch":
        return cross_entropy_logits(z_s, y)
    if teacher is None:
        raise ParameterError(f"mode {cfg.mode!r} needs a teacher")
    if cfg.mode == "kd_plain":
        with torch.no_grad():
            z_t = teacher(norm(x_raw))
        return kd_loss_unauthorized(z_s, z_t, y, cfg)
    if key is None:
        raise ParameterError("mode 'kd_with_key' needs a key")
    if key_fingerprint(key) != cfg.key_fingerprint:
        raise ParameterError("key does not match the configured fingerprint")
    with torch.no_grad():
        z_t = teacher(norm(embed_key(x_raw, key)))
    return kd_loss_authorized(z_s, z_t, y, cfg)


def student_step(batch, student, optimizer, teacher=None, key: Key | None = None,
                 cfg: DistillConfig = SMALL_IMAGE_PROFILE, normalize=None) -> float:
    """One optimizer step on ``student``; the teacher is only read."""
    x, y = (batch.x, batch.y) if hasattr(batch, "x") else (batch[0], batch[-1])
    student.train()
    loss = student_loss(x, y, student, teacher, key, cfg, normalize)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())
