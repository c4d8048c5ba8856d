"""Numeric primitives shared by every loss.

All reductions are arithmetic means over the batch (first) dimension; class
sums happen along the last dimension.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from sdbox.errors import NumericError, ParameterError, ShapeError

PROB_FLOOR = 1e-12


def _check_logits(z: torch.Tensor, name: str = "logits") -> None:
    if z.dim() != 2 or z.shape[1] < 2:
        raise ShapeError(f"{name} must be (batch, K>=2), got {tuple(z.shape)}")
    if not torch.isfinite(z).all():
        raise NumericError(f"{name} contain NaN or Inf")


def _check_temperature(T: float) -> float:
    T = float(T)
    if not T > 0.0 or T == float("inf"):
        raise ParameterError(f"temperature must be a positive finite number, got {T}")
    return T


def _same_shape(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def tempered_softmax(z: torch.Tensor, T: float = 1.0) -> torch.Tensor:
    _check_logits(z)
    T = _check_temperature(T)
    # torch subtracts the row max internally
    return torch.softmax(z / T, dim=-1)


def cross_entropy(probs: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean of ``-log probs[i, y_i]`` with the log argument floored at 1e-12."""
    y = torch.as_tensor(y, dtype=torch.long)
    K = probs.shape[-1]
    if y.numel() and (y.min() < 0 or y.max() >= K):
        raise ParameterError(f"labels must lie in [0, {K})")
    picked = probs.gather(-1, y.view(-1, 1)).squeeze(-1)
    return -torch.log(picked.clamp_min(PROB_FLOOR)).mean()


def cross_entropy_logits(z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of ``softmax(z)``, evaluated through log-softmax."""
    _check_logits(z)
    y = torch.as_tensor(y, dtype=torch.long)
    K = z.shape[-1]
    if y.numel() and (y.min() < 0 or y.max() >= K):
        raise ParameterError(f"labels must lie in [0, {K})")
    return F.cross_entropy(z, y)


def kd_divergence(
    z_a: torch.Tensor,
    z_target: torch.Tensor,
    T: float = 1.0,
    scale_T2: bool = True,
) -> torch.Tensor:
    """KL(softmax(z_target/T) || softmax(z_a/T)), batch-averaged.

    ``z_target`` is a constant: no gradient reaches it.
    """
    _same_shape(z_a, z_target)
    _check_logits(z_a, "z_a")
    _check_logits(z_target, "z_target")
    T = _check_temperature(T)
    log_q = F.log_softmax(z_a / T, dim=-1)
    log_p = F.log_softmax(z_target.detach() / T, dim=-1)
    kl = (log_p.exp() * (log_p - log_q)).sum(-1).mean()
    return kl * (T * T) if scale_T2 else kl


def soft_mse(z_a: torch.Tensor, z_b: torch.Tensor, T: float = 1.0) -> torch.Tensor:
    """Squared L2 distance between tempered soft labels, batch-averaged."""
    _same_shape(z_a, z_b)
    diff = tempered_softmax(z_a, T) - tempered_softmax(z_b, T)
    return diff.pow(2).sum(-1).mean()


def logit_mse(z_a: torch.Tensor, z_b: torch.Tensor) -> torch.Tensor:
    """``0.5 * ||z_a - z_b||^2`` per row, batch-averaged."""
    _same_shape(z_a, z_b)
    _check_logits(z_a, "z_a")
    _check_logits(z_b, "z_b")
    return 0.5 * (z_a - z_b).pow(2).sum(-1).mean()
