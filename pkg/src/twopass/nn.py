"""Parameter construction and recurrent layer runners shared by both passes."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Params = dict  # name -> Tensor, insertion-ordered


def uniform(rng: np.random.Generator, shape, scale: float, name: str) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)


def add_linear(p: Params, rng, name: str, d_in: int, d_out: int, scale: float,
               bias: bool = True) -> None:
    p[f"{name}.W"] = uniform(rng, (d_in, d_out), scale, f"{name}.W")
    if bias:
        p[f"{name}.b"] = uniform(rng, (d_out,), scale, f"{name}.b")


def add_lstm(p: Params, rng, name: str, d_in: int, d_hidden: int, scale: float) -> None:
    p[f"{name}.W"] = uniform(rng, (d_in, 4 * d_hidden), scale, f"{name}.W")
    p[f"{name}.U"] = uniform(rng, (d_hidden, 4 * d_hidden), scale, f"{name}.U")
    p[f"{name}.b"] = uniform(rng, (4 * d_hidden,), scale, f"{name}.b")


def linear(p: Params, name: str, x: Tensor) -> Tensor:
    return ad.affine(x, p[f"{name}.W"], p[f"{name}.b"])


def zeros_state(batch: int, d: int) -> tuple[Tensor, Tensor]:
    return Tensor(np.zeros((batch, d))), Tensor(np.zeros((batch, d)))


def lstm_sequence(p: Params, name: str, xs: Tensor, reverse: bool = False) -> Tensor:
    """Run one LSTM layer over ``xs`` of shape (B, T, d_in) -> (B, T, d)."""
    U = p[f"{name}.U"]
    d = U.shape[0]
    B, T = xs.shape[0], xs.shape[1]
    zx = ad.unstack(ad.affine(xs, p[f"{name}.W"], p[f"{name}.b"]), axis=1)
    h, c = zeros_state(B, d)
    outs: list[Tensor | None] = [None] * T
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        h, c = ad.lstm_cell(zx[t], h, c, U)
        outs[t] = h
    return ad.stack(outs, axis=1)


def lstm_step_layers(p: Params, names: list[str], x: Tensor,
                     state: list[tuple[Tensor, Tensor]]) -> tuple[Tensor, list]:
    """Advance a stack of LSTM layers by one step; returns top output and states."""
    new_state = []
    for name, (h, c) in zip(names, state):
        h, c = ad.lstm_cell(ad.affine(x, p[f"{name}.W"], p[f"{name}.b"]), h, c,
                            p[f"{name}.U"])
        new_state.append((h, c))
        x = h
    return x, new_state


def param_count(p: Params, prefix: str = "") -> int:
    return int(sum(t.size for k, t in p.items() if k.startswith(prefix)))
