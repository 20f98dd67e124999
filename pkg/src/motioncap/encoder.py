"""Frame-wise part encoder: two tanh layers per part and stream, position|velocity concat."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import numerics as nx
from .layers import linear, make_linear
from .numerics import DimensionError, Tensor
from .skeleton import PARTS

STREAMS = ("pos", "vel")


def init_encoder(params: dict, in_widths: Sequence[int], h1: int, h2: int, rng: np.random.Generator) -> None:
    if len(in_widths) != len(PARTS):
        raise DimensionError(f"expected {len(PARTS)} part widths, got {len(in_widths)}")
    for part, width in zip(PARTS, in_widths):
        for stream in STREAMS:
            prefix = f"enc.{part}.{stream}"
            make_linear(params, f"{prefix}.fc1", width, h1, rng)
            make_linear(params, f"{prefix}.fc2", h1, h2, rng)


def _stack2(params: dict, prefix: str, x) -> Tensor:
    x = nx.as_tensor(x)
    width = params[f"{prefix}.fc1.w"].shape[0]
    if x.shape[-1] != width:
        raise DimensionError(f"{prefix}: input width {x.shape[-1]} != {width}")
    return nx.tanh(linear(params, f"{prefix}.fc2", nx.tanh(linear(params, f"{prefix}.fc1", x))))


def encode(params: dict, xs: Sequence, vs: Sequence) -> Tensor:
    """Part embeddings ``P`` with shape ``(..., T, a, h_enc)``.

    ``xs[i]`` / ``vs[i]`` hold part ``i`` positions / velocities, shaped
    ``(..., T, width_i)``. Every frame is encoded on its own.
    """
    if len(xs) != len(PARTS) or len(vs) != len(PARTS):
        raise DimensionError(f"encode expects {len(PARTS)} parts per stream")
    frames = {np.shape(getattr(x, "data", x))[:-1] for x in list(xs) + list(vs)}
    if len(frames) != 1:
        raise DimensionError(f"part arrays disagree on leading dims: {sorted(frames)}")
    per_part = []
    for part, x, v in zip(PARTS, xs, vs):
        pos = _stack2(params, f"enc.{part}.pos", x)
        vel = _stack2(params, f"enc.{part}.vel", v)
        per_part.append(nx.concat([pos, vel], axis=-1))
    return nx.stack(per_part, axis=-2)
