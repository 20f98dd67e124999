"""Temporal attention with Gaussian refit, part-wise spatial attention, adaptive gate.

All functions work on batches: ``P`` is ``B x T x a x h_enc``, decoder states
are ``B x h_dec``, and a frame mask ``B x T`` marks real (1) vs padded (0)
frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .layers import linear, make_linear, uniform_fan_in
from .numerics import DimensionError, Tensor

NEG_INF = -1e30


class ContractError(ValueError):
    pass


def init_attention(
    params: dict, h_enc: int, h_dec: int, d_att: int, d_emb: int, d_ctx: int, rng: np.random.Generator
) -> None:
    def w(name, n_in, n_out):
        params[name] = Tensor(uniform_fan_in(rng, n_in, (n_in, n_out)), True, name)

    for block in ("temporal", "spatial"):
        w(f"att.{block}.wp", h_enc, d_att)
        w(f"att.{block}.wh", h_dec, d_att)
        w(f"att.{block}.v", d_att, 1)
    w("gate.wh", h_dec, 1)
    w("gate.we", d_emb, 1)
    make_linear(params, "ctx.motion", h_enc, d_ctx, rng)
    make_linear(params, "ctx.language", h_dec, d_ctx, rng)


@dataclass
class MotionMemory:
    """Encoded motion plus the hidden-state-independent halves of both attention scores."""

    P: Tensor
    proj_temporal: Tensor
    proj_spatial: Tensor
    frame_mask: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.P.shape[1]


@dataclass
class AttentionState:
    gamma: Tensor  # B x T raw temporal weights
    m: Tensor  # B
    sigma: Tensor  # B
    Gamma: Tensor  # B x T Gaussian window
    alpha: Tensor  # B x T x a
    beta: Tensor  # B
    c: Tensor
    e: Tensor
    r: Tensor
    cbar: Tensor


def project_motion(params: dict, P: Tensor, frame_mask: np.ndarray | None = None) -> MotionMemory:
    if P.ndim != 4:
        raise DimensionError(f"P must be B x T x a x h_enc, got {P.shape}")
    if frame_mask is None:
        frame_mask = np.ones(P.shape[:2])
    frame_mask = np.asarray(frame_mask, dtype=np.float64)
    if frame_mask.shape != P.shape[:2]:
        raise DimensionError(f"frame mask {frame_mask.shape} does not match P {P.shape[:2]}")
    return MotionMemory(
        P,
        nx.matmul(P, params["att.temporal.wp"]),
        nx.matmul(P, params["att.spatial.wp"]),
        frame_mask,
    )


def _scores(params: dict, block: str, proj: Tensor, h: Tensor) -> Tensor:
    wh = params[f"att.{block}.wh"]
    if h.ndim != 2 or h.shape[1] != wh.shape[0]:
        raise DimensionError(f"hidden state {h.shape} does not match {wh.shape[0]}")
    b, _, _, d = proj.shape
    expanded = nx.reshape(nx.matmul(h, wh), (b, 1, 1, d))
    u = nx.tanh(proj + expanded)
    return nx.reshape(nx.matmul(u, params[f"att.{block}.v"]), proj.shape[:3])


def temporal_attention(params: dict, mem: MotionMemory, h: Tensor) -> Tensor:
    """Per-frame weights; scores are averaged over parts before the frame softmax."""
    z = nx.mean(_scores(params, "temporal", mem.proj_temporal, h), axis=2)
    if not mem.frame_mask.all():
        z = z + (1.0 - mem.frame_mask) * NEG_INF
    return nx.softmax(z, axis=-1)


def gaussian_refit(gamma, sigma_min: float = 0.5, frame_mask: np.ndarray | None = None):
    """Mean / spread of ``gamma`` over frame indices and the matching Gaussian window.

    Works along the last axis. ``sigma = max(sigma_min, std)``; the window
    is unnormalised and peaks at 1.
    """
    gamma = nx.as_tensor(gamma)
    total = gamma.data.sum(axis=-1)
    if np.any(np.abs(total - 1.0) > 1e-6):
        raise ContractError(f"temporal weights must sum to 1, got {total}")
    if sigma_min <= 0:
        raise ValueError("sigma_min must be positive")
    k = np.arange(gamma.shape[-1], dtype=np.float64)
    m = nx.tsum(gamma * k, axis=-1, keepdims=True)
    offset = nx.square(k - m)
    var = nx.maximum(nx.tsum(gamma * offset, axis=-1, keepdims=True), sigma_min**2)
    window = nx.exp(nx.neg(offset) / (2.0 * var))
    if frame_mask is not None:
        window = window * frame_mask
    lead = gamma.shape[:-1]
    return nx.reshape(m, lead), nx.reshape(nx.sqrt(var), lead), window


def spatial_attention(params: dict, mem: MotionMemory, h: Tensor, axis: str = "part") -> Tensor:
    """Spatial weights ``B x T x a``.

    ``axis="part"`` normalises over the parts of each frame; ``"joint"``
    normalises over all (frame, part) pairs of the sequence.
    """
    s = _scores(params, "spatial", mem.proj_spatial, h)
    if axis == "part":
        return nx.softmax(s, axis=-1)
    if axis == "joint":
        b, t, a = s.shape
        s = s + ((1.0 - mem.frame_mask) * NEG_INF)[:, :, None]
        return nx.reshape(nx.softmax(nx.reshape(s, (b, t * a)), axis=-1), (b, t, a))
    raise ValueError(f"unknown spatial softmax axis {axis!r}")


def adaptive_gate(params: dict, h: Tensor, prev_embedding: Tensor) -> Tensor:
    logit = nx.matmul(h, params["gate.wh"]) + nx.matmul(prev_embedding, params["gate.we"])
    return nx.reshape(nx.sigmoid(logit), (h.shape[0],))


def context_vector(window, alpha, P) -> Tensor:
    """``c[b] = sum_k sum_i window[b,k] * alpha[b,k,i] * P[b,k,i]``."""
    window, alpha, P = nx.as_tensor(window), nx.as_tensor(alpha), nx.as_tensor(P)
    b, t, a, h = P.shape
    if window.shape != (b, t) or alpha.shape != (b, t, a):
        raise DimensionError(f"window {window.shape} / alpha {alpha.shape} vs P {P.shape}")
    weights = nx.reshape(nx.reshape(window, (b, t, 1)) * alpha, (b, 1, t * a))
    return nx.reshape(nx.matmul(weights, nx.reshape(P, (b, t * a, h))), (b, h))


def blend(e, r, beta) -> Tensor:
    """``beta * e + (1 - beta) * r`` with one gate value per row."""
    e, r, beta = nx.as_tensor(e), nx.as_tensor(r), nx.as_tensor(beta)
    if e.shape != r.shape:
        raise DimensionError(f"e {e.shape} and r {r.shape} differ")
    beta = nx.reshape(beta, beta.shape + (1,) * (e.ndim - beta.ndim))
    return beta * e + (1.0 - beta) * r


def adaptive_context(params: dict, c: Tensor, hbar: Tensor, beta: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Embed motion context and language state into one space and blend them."""
    e = nx.tanh(linear(params, "ctx.motion", c))
    r = nx.tanh(linear(params, "ctx.language", hbar))
    return blend(e, r, beta), e, r
