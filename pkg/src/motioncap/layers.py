"""Parameter initialisation and the two composite layers the model needs."""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import Tensor


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def make_linear(params: dict, prefix: str, n_in: int, n_out: int, rng, bias: bool = True) -> None:
    params[f"{prefix}.w"] = Tensor(uniform_fan_in(rng, n_in, (n_in, n_out)), True, f"{prefix}.w")
    if bias:
        params[f"{prefix}.b"] = Tensor(np.zeros(n_out), True, f"{prefix}.b")


def linear(params: dict, prefix: str, x: Tensor) -> Tensor:
    out = nx.matmul(x, params[f"{prefix}.w"])
    b = params.get(f"{prefix}.b")
    return out if b is None else out + b


def make_lstm(params: dict, prefix: str, n_in: int, n_hidden: int, rng) -> None:
    # gate order: input, forget, cell, output
    params[f"{prefix}.wx"] = Tensor(uniform_fan_in(rng, n_hidden, (n_in, 4 * n_hidden)), True, f"{prefix}.wx")
    params[f"{prefix}.wh"] = Tensor(uniform_fan_in(rng, n_hidden, (n_hidden, 4 * n_hidden)), True, f"{prefix}.wh")
    params[f"{prefix}.b"] = Tensor(np.zeros(4 * n_hidden), True, f"{prefix}.b")


def lstm_cell(params: dict, prefix: str, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    n = h.shape[-1]
    z = nx.matmul(x, params[f"{prefix}.wx"]) + nx.matmul(h, params[f"{prefix}.wh"]) + params[f"{prefix}.b"]
    i = nx.sigmoid(z[:, 0:n])
    f = nx.sigmoid(z[:, n : 2 * n])
    g = nx.tanh(z[:, 2 * n : 3 * n])
    o = nx.sigmoid(z[:, 3 * n : 4 * n])
    c_new = f * c + i * g
    return o * nx.tanh(c_new), c_new
