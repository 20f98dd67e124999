"""Language, adaptive-gate and spatial-attention losses and their weighted sum.

Each term is a sum over steps and over the sequences it is given; the
trainer divides by the batch size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .attention import ContractError
from .numerics import Tensor

EPS = 1e-12


class ConfigurationError(ValueError):
    pass


@dataclass
class LossBreakdown:
    lang: float
    spat: float
    adapt: float
    total: float
    lambda_spat: float
    lambda_adapt: float


def _safe_log(x: Tensor) -> Tensor:
    return nx.log(nx.clamp_min(x, EPS))


def _steps(x) -> list:
    return list(x) if isinstance(x, (list, tuple)) else [x[:, t] for t in range(x.shape[1])]


def language_loss(probs: Sequence[Tensor], targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """``-sum log p_t(target_t)`` over unmasked steps.

    ``probs[t]`` is ``B x K``; ``targets`` and ``mask`` are ``B x L``.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    mask = np.ones(targets.shape) if mask is None else np.atleast_2d(np.asarray(mask, dtype=np.float64))
    total = Tensor(0.0)
    for t, p in enumerate(probs):
        if not mask[:, t].any():
            continue
        total = total - nx.tsum(_safe_log(nx.pick(p, targets[:, t])) * mask[:, t])
    return total


def adaptive_loss(betas: Sequence[Tensor], targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Binary cross-entropy between gate values ``betas[t]`` (``B``) and 0/1 targets."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    mask = np.ones(targets.shape) if mask is None else np.atleast_2d(np.asarray(mask, dtype=np.float64))
    total = Tensor(0.0)
    for t, beta in enumerate(betas):
        w = mask[:, t]
        if not w.any():
            continue
        y = targets[:, t]
        bce = y * _safe_log(beta) + (1.0 - y) * _safe_log(1.0 - beta)
        total = total - nx.tsum(bce * w)
    return total


def spatial_loss(
    alphas: Sequence[Tensor],
    alpha_target: np.ndarray,
    supervised: np.ndarray,
    n_y: np.ndarray,
    frame_mask: np.ndarray | None = None,
) -> Tensor:
    """Part-attention BCE on supervised words, normalised per caption by its word count.

    ``alphas[t]`` is ``B x T x a``; ``alpha_target`` is ``B x L x a`` and is
    applied to every real frame; ``supervised`` is ``B x L``; ``n_y`` is
    ``B``. Captions without supervised words must be filtered out first.
    """
    n_y = np.atleast_1d(np.asarray(n_y, dtype=np.float64))
    if np.any(n_y < 1):
        raise ContractError("spatial loss called for a caption without supervised words")
    supervised = np.atleast_2d(np.asarray(supervised, dtype=np.float64))
    alpha_target = np.asarray(alpha_target, dtype=np.float64)
    if alpha_target.ndim == 2:
        alpha_target = alpha_target[None]
    b, t_x = alphas[0].shape[:2]
    frame_mask = np.ones((b, t_x)) if frame_mask is None else np.asarray(frame_mask, dtype=np.float64)
    total = Tensor(0.0)
    for t, alpha in enumerate(alphas):
        w = supervised[:, t] / n_y
        if not w.any():
            continue
        coef = (w[:, None] * frame_mask)[:, :, None]  # B x T x 1
        y = alpha_target[:, t][:, None, :]  # B x 1 x a
        bce = y * _safe_log(alpha) + (1.0 - y) * _safe_log(1.0 - alpha)
        total = total - nx.tsum(bce * coef)
    return total


def global_loss(lang, spat, adapt, lambda_spat: float, lambda_adapt: float):
    """``lang + lambda_spat * spat + lambda_adapt * adapt``; works on floats or Tensors."""
    if lambda_spat < 0 or lambda_adapt < 0:
        raise ConfigurationError("loss weights must be non-negative")
    return lang + lambda_spat * spat + lambda_adapt * adapt


def breakdown(lang, spat, adapt, lambda_spat: float, lambda_adapt: float) -> LossBreakdown:
    vals = [float(getattr(x, "data", x)) for x in (lang, spat, adapt)]
    return LossBreakdown(*vals, global_loss(*vals, lambda_spat, lambda_adapt), lambda_spat, lambda_adapt)
