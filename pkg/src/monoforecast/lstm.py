"""Trainable time-series embedding: stacked LSTM, final hidden state out.

Gate order in the stacked weight matrices is (input, forget, cell, output).
Backward is explicit backpropagation through time over the cached states.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .numerics import ParameterBlock


@dataclass
class LstmConfig:
    input_features: int
    hidden_size: int = 128
    num_layers: int = 2
    window: int = 96

    def __post_init__(self):
        for f in ("input_features", "hidden_size", "num_layers", "window"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Lstm:
    """Stacked LSTM; forward returns the top layer's last hidden state."""

    def __init__(self, cfg: LstmConfig, rng: np.random.Generator,
                 name: str = "lstm"):
        self.cfg = cfg
        H = cfg.hidden_size
        scale = 1.0 / np.sqrt(H)
        self.blocks: List[ParameterBlock] = []
        self._layers = []
        for layer in range(cfg.num_layers):
            fin = cfg.input_features if layer == 0 else H
            w = ParameterBlock(f"{name}.{layer}.w",
                               rng.uniform(-scale, scale, (4 * H, fin)))
            u = ParameterBlock(f"{name}.{layer}.u",
                               rng.uniform(-scale, scale, (4 * H, H)))
            bias = np.zeros(4 * H)
            bias[H:2 * H] = 1.0  # forget gate bias
            b = ParameterBlock(f"{name}.{layer}.b", bias)
            self._layers.append((w, u, b))
            self.blocks.extend((w, u, b))

    @property
    def params(self):
        return list(self.blocks)

    def forward(self, x: np.ndarray):
        """x: (N, w, F) -> embedding (N, H) plus BPTT cache."""
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in LSTM input")
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1] != cfg.window or x.shape[2] != cfg.input_features:
            raise ValueError(
                f"window shape {x.shape[1:]} != "
                f"({cfg.window}, {cfg.input_features})")
        N, W, _ = x.shape
        H = cfg.hidden_size
        seq = x
        cache = []
        for (w, u, b) in self._layers:
            h = np.zeros((N, H))
            c = np.zeros((N, H))
            steps = []
            hs = np.empty((N, W, H))
            for t in range(W):
                xt = seq[:, t, :]
                z = xt @ w.values.T + h @ u.values.T + b.values
                i = _sigmoid(z[:, :H])
                f = _sigmoid(z[:, H:2 * H])
                g = np.tanh(z[:, 2 * H:3 * H])
                o = _sigmoid(z[:, 3 * H:])
                c_new = f * c + i * g
                tanh_c = np.tanh(c_new)
                h_new = o * tanh_c
                steps.append((xt, h, c, i, f, g, o, c_new, tanh_c))
                h, c = h_new, c_new
                hs[:, t, :] = h
            cache.append((seq, steps))
            seq = hs
        return seq[:, -1, :], cache

    def backward(self, cache, g_emb: np.ndarray):
        """Accumulate parameter gradients from the upstream gradient on
        the embedding; cache comes from the matching forward call."""
        if cache is None:
            raise ValueError("missing forward cache")
        cfg = self.cfg
        H = cfg.hidden_size
        N = g_emb.shape[0]
        W = cfg.window
        # gradient on each layer's output sequence; top layer only gets a
        # gradient at the last step
        g_seq = None
        g_last = g_emb
        for layer in range(cfg.num_layers - 1, -1, -1):
            w, u, b = self._layers[layer]
            seq_in, steps = cache[layer]
            g_in = np.zeros_like(seq_in)
            dh_next = np.zeros((N, H))
            dc_next = np.zeros((N, H))
            for t in range(W - 1, -1, -1):
                xt, h_prev, c_prev, i, f, g, o, c_new, tanh_c = steps[t]
                dh = dh_next.copy()
                if g_seq is not None:
                    dh += g_seq[:, t, :]
                elif t == W - 1:
                    dh += g_last
                dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
                do = dh * tanh_c
                di = dc * g
                df = dc * c_prev
                dg = dc * i
                dz = np.concatenate([
                    di * i * (1.0 - i),
                    df * f * (1.0 - f),
                    dg * (1.0 - g ** 2),
                    do * o * (1.0 - o),
                ], axis=1)
                w.grad += dz.T @ xt
                u.grad += dz.T @ h_prev
                b.grad += dz.sum(axis=0)
                g_in[:, t, :] = dz @ w.values
                dh_next = dz @ u.values
                dc_next = dc * f
            g_seq = g_in
            g_last = None
        return g_seq  # gradient w.r.t. the original window, (N, w, F)
