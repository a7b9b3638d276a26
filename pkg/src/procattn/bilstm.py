"""LSTM cell and bidirectional sequence layer over masked, left-padded batches.

The recurrence runs as a single fused tape operation: the forward pass caches
the gate activations per timestep and the backward pass is hand-written
backpropagation through time.  Gate order in the packed weights is
(input, forget, cell, output).

At masked timesteps the state is carried over unchanged and the emitted
hidden vector is zero, so padding never leaks into real positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, _result, _sigmoid, concat_last_axis, glorot_uniform

FORGET_BIAS = 1.0


@dataclass
class LstmParams:
    w_input: Tensor  # [input_size, 4 * hidden]
    w_hidden: Tensor  # [hidden, 4 * hidden]
    bias: Tensor  # [4 * hidden]

    @property
    def hidden_size(self):
        return self.w_hidden.shape[0]

    @property
    def input_size(self):
        return self.w_input.shape[0]

    @classmethod
    def init(cls, rng, input_size, hidden_size, prefix="lstm"):
        w_input = glorot_uniform(rng, (input_size, 4 * hidden_size), f"{prefix}.w_input")
        w_hidden = glorot_uniform(rng, (hidden_size, 4 * hidden_size), f"{prefix}.w_hidden")
        b = np.zeros(4 * hidden_size)
        b[hidden_size : 2 * hidden_size] = FORGET_BIAS
        bias = Tensor(b, requires_grad=True, name=f"{prefix}.bias")
        return cls(w_input, w_hidden, bias)

    def tensors(self):
        return [self.w_input, self.w_hidden, self.bias]


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams

    @classmethod
    def init(cls, rng, input_size, hidden_size, prefix="bilstm"):
        return cls(
            LstmParams.init(rng, input_size, hidden_size, f"{prefix}.fwd"),
            LstmParams.init(rng, input_size, hidden_size, f"{prefix}.bwd"),
        )

    @property
    def hidden_size(self):
        return self.forward.hidden_size

    def tensors(self):
        return self.forward.tensors() + self.backward.tensors()


def _check_inputs(params, x, mask):
    if x.ndim != 3:
        raise ValueError(f"lstm: inputs must be [batch, L, features], got {x.shape}")
    if x.shape[2] != params.input_size:
        raise ValueError(
            f"lstm: input width {x.shape[2]} does not match weights {params.w_input.shape}"
        )
    if mask.shape != x.shape[:2]:
        raise ValueError(f"lstm: mask shape {mask.shape} does not match inputs {x.shape}")


def lstm_forward(params, inputs, mask, reverse=False):
    """Run one LSTM direction; returns hidden outputs ``[batch, L, hidden]``.

    With ``reverse`` the sequence is consumed from the last position to the
    first, and outputs are written back at their original positions.
    """
    x = inputs
    mask = np.asarray(mask, dtype=bool)
    _check_inputs(params, x, mask)
    wx, wh, b = params.w_input.data, params.w_hidden.data, params.bias.data
    n, steps, _ = x.shape
    hid = params.hidden_size
    order = range(steps - 1, -1, -1) if reverse else range(steps)

    h = np.zeros((n, hid))
    c = np.zeros((n, hid))
    out = np.zeros((n, steps, hid))
    # per-step cache: (t, m, h_prev, c_prev, i, f, g, o, tanh(c_new))
    cache = []
    proj = x.data @ wx + b
    maskf = mask.astype(np.float64)[:, :, None]
    keep = mask[:, :, None]
    for t in order:
        m = maskf[:, t]
        z = proj[:, t] + h @ wh
        s = _sigmoid(z)
        i = s[:, :hid]
        f = s[:, hid : 2 * hid]
        g = np.tanh(z[:, 2 * hid : 3 * hid])
        o = s[:, 3 * hid :]
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((t, m, h, c, i, f, g, o, tc))
        out[:, t] = m * h_new
        # masked steps carry the previous state forward
        h = np.where(keep[:, t], h_new, h)
        c = np.where(keep[:, t], c_new, c)

    def backward(dout):
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros_like(b)
        dx = np.zeros(x.shape) if x.requires_grad else None
        dh = np.zeros((n, hid))
        dc = np.zeros((n, hid))
        for t, m, h_prev, c_prev, i, f, g, o, tc in reversed(cache):
            dh_new = m * (dh + dout[:, t])
            dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc_new * g * i * (1.0 - i),
                    dc_new * c_prev * f * (1.0 - f),
                    dc_new * i * (1.0 - g * g),
                    dh_new * tc * o * (1.0 - o),
                ],
                axis=1,
            )
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            if dx is not None:
                dx[:, t] = dz @ wx.T
            dwx += x.data[:, t].T @ dz
            dh = (1.0 - m) * dh + dz @ wh.T
            dc = (1.0 - m) * dc + dc_new * f
        if params.w_input.requires_grad:
            params.w_input.grad += dwx
        if params.w_hidden.requires_grad:
            params.w_hidden.grad += dwh
        if params.bias.requires_grad:
            params.bias.grad += db
        if dx is not None:
            x.grad += dx

    parents = (x, params.w_input, params.w_hidden, params.bias)
    return _result(out, parents, backward)


def bilstm_forward(params, inputs, mask):
    """Concatenate forward and reverse-direction hidden states per timestep."""
    if params.forward.hidden_size != params.backward.hidden_size:
        raise ValueError("bilstm: directions must share hidden_size")
    fwd = lstm_forward(params.forward, inputs, mask)
    bwd = lstm_forward(params.backward, inputs, mask, reverse=True)
    return concat_last_axis(fwd, bwd)
