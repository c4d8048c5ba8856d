"""SDB objective terms and their composition.

Naming: ``z_x`` / ``z_xt`` are the SDB model's logits on the clean and the
key-embedded (proxy) stream; ``z_pre`` comes from the frozen pretrained
teacher and ``z_rand`` from the frozen random-init network. Every argument
documented as frozen is detached here, so callers cannot leak gradient into
it by accident.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import torch

from sdbox.errors import ParameterError, SdbError
from sdbox.softops import cross_entropy_logits, kd_divergence, logit_mse, soft_mse

AugMode = Literal["finite_T", "infinite_T"]


@dataclass(frozen=True)
class SdbLossWeights:
    omega: float = 0.005
    eta: float = 3e-4
    t_dis: float = 4.0
    # None means the T_aug -> inf limit (logit matching)
    t_aug: float | None = None
    # compare zero-mean logits in the limit mode; softmax ignores a per-row shift
    center_aug_logits: bool = True

    def __post_init__(self):
        for name in ("omega", "eta"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and >= 0, got {v}")
        if not self.t_dis > 0:
            raise ParameterError(f"t_dis must be > 0, got {self.t_dis}")
        if self.t_aug is not None and not self.t_aug > 0:
            raise ParameterError(f"t_aug must be > 0, got {self.t_aug}")

    @property
    def aug_mode(self) -> AugMode:
        return "infinite_T" if self.t_aug is None else "finite_T"


@dataclass(frozen=True)
class StreamBatch:
    x: torch.Tensor
    x_tilde: torch.Tensor | None
    y: torch.Tensor


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term values of one SDB step. ``total`` keeps its autograd graph."""

    cls: torch.Tensor
    dis: torch.Tensor
    main: torch.Tensor
    aug: torch.Tensor
    kp: torch.Tensor
    total: torch.Tensor

    def as_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("cls", "dis", "main", "aug", "kp", "total")}


class LossTermError(SdbError):
    """Wraps a failure inside one named loss term."""

    def __init__(self, term: str, cause: Exception):
        super().__init__(f"{term}: {cause}")
        self.term = term
        self.category = getattr(cause, "category", "error")


def classification_loss(z_x: torch.Tensor, z_xt: torch.Tensor | None, y: torch.Tensor) -> torch.Tensor:
    loss = cross_entropy_logits(z_x, y)
    if z_xt is not None:
        loss = loss + cross_entropy_logits(z_xt, y)
    return loss


def disturbance_loss(
    z_x: torch.Tensor,
    z_xt_frozen: torch.Tensor,
    z_pre_frozen: torch.Tensor,
    w: SdbLossWeights,
) -> torch.Tensor:
    """Push clean-stream soft labels away from the pretrained teacher.

    The second KL is taken at T=1 without T^2 scaling and only the clean
    stream receives gradient.
    """
    if w.omega < 0:
        raise ParameterError("omega must be >= 0")
    away = kd_divergence(z_x, z_pre_frozen.detach(), w.t_dis, scale_T2=True)
    toward_proxy = kd_divergence(z_x, z_xt_frozen.detach(), 1.0, scale_T2=False)
    return w.omega * (toward_proxy - away)


def maintain_loss(z_xt: torch.Tensor, z_pre_frozen: torch.Tensor, t_dis: float) -> torch.Tensor:
    return soft_mse(z_xt, z_pre_frozen.detach(), t_dis)


def _center(z: torch.Tensor) -> torch.Tensor:
    return z - z.mean(dim=-1, keepdim=True)


def augmentation_loss(
    z_xt: torch.Tensor,
    z_pre_frozen: torch.Tensor,
    z_rand_frozen: torch.Tensor,
    w: SdbLossWeights,
    mode: AugMode | None = None,
) -> torch.Tensor:
    """Move away from the pretrained teacher, stay near the random network."""
    mode = mode or w.aug_mode
    z_pre, z_rand = z_pre_frozen.detach(), z_rand_frozen.detach()
    if mode == "infinite_T":
        if w.center_aug_logits:
            z_xt, z_pre, z_rand = _center(z_xt), _center(z_pre), _center(z_rand)
        return logit_mse(z_xt, z_rand) - logit_mse(z_xt, z_pre)
    if mode == "finite_T":
        if w.t_aug is None:
            raise ParameterError("finite_T augmentation needs t_aug")
        return kd_divergence(z_xt, z_rand, w.t_aug) - kd_divergence(z_xt, z_pre, w.t_aug)
    raise ParameterError(f"unknown augmentation mode {mode!r}")


def _term(name, fn, *args):
    try:
        return fn(*args)
    except SdbError as exc:
        raise LossTermError(name, exc) from exc
    except (ValueError, RuntimeError) as exc:
        raise LossTermError(name, exc) from exc


def total_sdb_loss(
    z_x: torch.Tensor,
    z_xt: torch.Tensor | None,
    y: torch.Tensor,
    z_pre: torch.Tensor,
    z_rand: torch.Tensor,
    w: SdbLossWeights,
    *,
    z_pre_aug: torch.Tensor | None = None,
    z_rand_aug: torch.Tensor | None = None,
    use_proxy_cls: bool = True,
    use_dis: bool = True,
    use_kp: bool = True,
) -> LossBreakdown:
    """Compose cls + dis + (main + eta * aug).

    ``z_pre``/``z_rand`` are the frozen references on the clean input.
    ``z_pre_aug``/``z_rand_aug`` override the references fed to the
    augmentation term (e.g. evaluated on the proxy input instead).
    With ``z_xt=None`` (no proxy stream) the knowledge preservation terms act
    on the clean stream and the disturbance term is unavailable.
    """
    zero = z_x.new_zeros(())
    cls = _term("cls", classification_loss, z_x, z_xt if use_proxy_cls else None, y)
    if use_dis:
        if z_xt is None:
            raise LossTermError("dis", ParameterError("disturbance needs the proxy stream"))
        dis = _term("dis", disturbance_loss, z_x, z_xt, z_pre, w)
    else:
        dis = zero
    if use_kp:
        target = z_x if z_xt is None else z_xt
        main = _term("main", maintain_loss, target, z_pre, w.t_dis)
        aug = _term(
            "aug",
            augmentation_loss,
            target,
            z_pre if z_pre_aug is None else z_pre_aug,
            z_rand if z_rand_aug is None else z_rand_aug,
            w,
        )
    else:
        main = aug = zero
    kp = main + w.eta * aug
    return LossBreakdown(cls=cls, dis=dis, main=main, aug=aug, kp=kp, total=cls + dis + kp)
