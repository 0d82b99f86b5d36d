"""Output models mapping (embedding, quantile level) to a horizon of
forecasts: the constrained lattice head plus the comparison heads (linear,
constrained linear, MLP, fixed-grid quantile regression, point).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .layers import (Calibrator, CalibratorBank, ConstrainedLinear, Lattice,
                     LatticeEnsemble, linear_ramp_theta, partition_features)
from .numerics import ParameterBlock

EVAL_TAUS = np.linspace(0.025, 0.975, 11)

HEAD_KINDS = ("dln", "linear", "constrained-linear", "mlp",
              "fixed-quantile-qr", "point")


@dataclass
class DlnHeadConfig:
    feature_calib_keypoints: int = 61
    quantile_calib_keypoints: int = 11
    lattice_keypoints: int = 21
    output_calib_keypoints: int = 61
    lattice_input_size: int = 2
    horizon: int = 36
    # output calibrator input domain; slightly wider than [0, 1] so the
    # constrained linear output does not start saturated
    output_domain: tuple = (-0.25, 1.25)

    def __post_init__(self):
        for f in ("feature_calib_keypoints", "quantile_calib_keypoints",
                  "lattice_keypoints", "output_calib_keypoints", "horizon"):
            if getattr(self, f) < 2:
                raise ValueError(f"{f} must be >= 2")
        if self.lattice_input_size < 1:
            raise ValueError("lattice_input_size must be >= 1")


class DlnHead:
    """Calibrated lattice-ensemble head, monotone in the quantile input.

    Pipeline: per-feature input calibrators squash the embedding into
    [0, 1]; a monotone calibrator maps tau; every lattice in the ensemble
    receives its feature group plus tau in a monotone trailing dimension;
    a nonnegative-weight linear layer maps lattice outputs to the horizon;
    a shared monotone output calibrator rescales.
    """

    kind = "dln"
    takes_tau = True

    def __init__(self, cfg: DlnHeadConfig, num_features: int,
                 rng: np.random.Generator,
                 feature_keypoints: Optional[np.ndarray] = None):
        self.cfg = cfg
        self.num_features = num_features
        E = num_features
        kc = cfg.feature_calib_keypoints
        if feature_keypoints is None:
            # LSTM hidden states are tanh-bounded, so [-1, 1] covers the
            # embedding without edge clamping
            feature_keypoints = np.tile(np.linspace(-1.0, 1.0, kc), (E, 1))
        feature_keypoints = np.asarray(feature_keypoints, dtype=np.float64)
        if feature_keypoints.shape != (E, kc):
            raise ValueError("feature_keypoints must be (E, kc)")
        # identity-like init into [0, 1]
        self.input_cal = CalibratorBank(
            "head.input_cal", feature_keypoints,
            np.tile(np.linspace(0.0, 1.0, kc), (E, 1)))
        kq = cfg.quantile_calib_keypoints
        self.quantile_cal = Calibrator(
            "head.quantile_cal", np.linspace(0.0, 1.0, kq),
            np.linspace(0.0, 1.0, kq), monotone=True)
        groups = partition_features(E, cfg.lattice_input_size, rng)
        k = cfg.lattice_keypoints
        lattices = []
        for i, grp in enumerate(groups):
            dims = len(grp) + 1
            theta = linear_ramp_theta(dims, k, (dims - 1,), rng)
            lattices.append(Lattice(f"head.lattice.{i}", dims, k, theta,
                                    monotone_dims=(dims - 1,)))
        self.ensemble = LatticeEnsemble(lattices, groups, E)
        L = len(lattices)
        h = cfg.horizon
        self.out_linear = ConstrainedLinear(
            "head.out_linear", np.full((h, L), 1.0 / L),
            np.empty((h, 0)), np.zeros(h))
        ko = cfg.output_calib_keypoints
        lo, hi = cfg.output_domain
        self.output_cal = Calibrator(
            "head.output_cal", np.linspace(lo, hi, ko),
            np.linspace(lo, hi, ko), monotone=True)

    @property
    def params(self):
        return (self.input_cal.params + self.quantile_cal.params
                + self.ensemble.params + self.out_linear.params
                + self.output_cal.params)

    def monotone_path_blocks(self):
        """Every parameter block on the tau -> output path, in order."""
        return (self.quantile_cal.params + self.ensemble.params
                + [self.out_linear.wq] + self.output_cal.params)

    def forward(self, embedding, tau):
        embedding = np.atleast_2d(np.asarray(embedding, dtype=np.float64))
        N = embedding.shape[0]
        h = self.cfg.horizon
        tau_arr = np.clip(np.broadcast_to(
            np.asarray(tau, dtype=np.float64), (N,)), 0.0, 1.0)
        xc, c_in = self.input_cal.forward(embedding)
        tq, c_q = self.quantile_cal.forward(tau_arr)
        lat, c_ens = self.ensemble.forward(xc, tq)
        lin, c_lin = self.out_linear.forward(lat)
        y_flat, c_out = self.output_cal.forward(lin.reshape(-1))
        return y_flat.reshape(N, h), (c_in, c_q, c_ens, c_lin, c_out, (N, h))

    def backward(self, cache, gy):
        """Returns the gradient w.r.t. the embedding; tau is an input, so
        only its calibrator's parameter gradients are accumulated."""
        c_in, c_q, c_ens, c_lin, c_out, shape = cache
        g_lin = self.output_cal.backward(c_out, gy.reshape(-1)).reshape(shape)
        g_lat, _ = self.out_linear.backward(c_lin, g_lin)
        g_xc, g_tq = self.ensemble.backward(c_ens, g_lat)
        self.quantile_cal.backward(c_q, g_tq)
        return self.input_cal.backward(c_in, g_xc)

    def __call__(self, embedding, tau):
        return self.forward(embedding, tau)[0]


def _uniform_init(rng, shape, fan_in):
    s = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-s, s, shape)


class MlpHead:
    """Two linear layers with one ReLU on [embedding || tau]; no
    monotonicity constraints, so quantile crossovers are possible."""

    kind = "mlp"
    takes_tau = True

    def __init__(self, num_features: int, horizon: int, width: int,
                 rng: np.random.Generator):
        self.num_features = num_features
        self.horizon = horizon
        fin = num_features + 1
        self.w1 = ParameterBlock("head.w1", _uniform_init(rng, (width, fin), fin))
        self.b1 = ParameterBlock("head.b1", np.zeros(width))
        self.w2 = ParameterBlock("head.w2",
                                 _uniform_init(rng, (horizon, width), width))
        self.b2 = ParameterBlock("head.b2", np.zeros(horizon))

    @property
    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, embedding, tau):
        embedding = np.atleast_2d(np.asarray(embedding, dtype=np.float64))
        N = embedding.shape[0]
        tau_col = np.broadcast_to(np.asarray(tau, dtype=np.float64),
                                  (N,)).reshape(N, 1)
        x = np.concatenate([embedding, tau_col], axis=1)
        z1 = x @ self.w1.values.T + self.b1.values
        a = np.maximum(z1, 0.0)
        y = a @ self.w2.values.T + self.b2.values
        return y, (x, z1, a)

    def backward(self, cache, gy):
        x, z1, a = cache
        self.w2.grad += gy.T @ a
        self.b2.grad += gy.sum(axis=0)
        da = gy @ self.w2.values
        dz1 = da * (z1 > 0)
        self.w1.grad += dz1.T @ x
        self.b1.grad += dz1.sum(axis=0)
        gx = dz1 @ self.w1.values
        return gx[:, :-1]

    def __call__(self, embedding, tau):
        return self.forward(embedding, tau)[0]


class LinearHead:
    """Single affine map of [embedding || tau]. The constrained variant
    routes tau through a nonnegative weight column, guaranteeing
    monotonicity in the quantile level."""

    takes_tau = True

    def __init__(self, num_features: int, horizon: int,
                 rng: np.random.Generator, constrained: bool):
        self.num_features = num_features
        self.horizon = horizon
        self.constrained = constrained
        self.kind = "constrained-linear" if constrained else "linear"
        fin = num_features + 1
        if constrained:
            self.layer = ConstrainedLinear(
                "head.linear",
                np.abs(_uniform_init(rng, (horizon, 1), fin)),
                _uniform_init(rng, (horizon, num_features), fin),
                np.zeros(horizon))
        else:
            self.w = ParameterBlock("head.w",
                                    _uniform_init(rng, (horizon, fin), fin))
            self.b = ParameterBlock("head.b", np.zeros(horizon))

    @property
    def params(self):
        if self.constrained:
            return self.layer.params
        return [self.w, self.b]

    def forward(self, embedding, tau):
        embedding = np.atleast_2d(np.asarray(embedding, dtype=np.float64))
        N = embedding.shape[0]
        tau_col = np.broadcast_to(np.asarray(tau, dtype=np.float64),
                                  (N,)).reshape(N, 1)
        if self.constrained:
            y, cache = self.layer.forward(tau_col, embedding)
            return y, cache
        x = np.concatenate([embedding, tau_col], axis=1)
        return x @ self.w.values.T + self.b.values, x

    def backward(self, cache, gy):
        if self.constrained:
            _, g_emb = self.layer.backward(cache, gy)
            return g_emb
        x = cache
        self.w.grad += gy.T @ x
        self.b.grad += gy.sum(axis=0)
        return (gy @ self.w.values)[:, :-1]

    def __call__(self, embedding, tau):
        return self.forward(embedding, tau)[0]


class FixedQuantileQrHead:
    """Linear map to horizon x Q outputs for a fixed quantile grid."""

    kind = "fixed-quantile-qr"
    takes_tau = False

    def __init__(self, num_features: int, horizon: int,
                 rng: np.random.Generator, taus=None):
        self.num_features = num_features
        self.horizon = horizon
        self.taus = np.asarray(EVAL_TAUS if taus is None else taus,
                               dtype=np.float64)
        Q = self.taus.size
        self.w = ParameterBlock(
            "head.w", _uniform_init(rng, (horizon * Q, num_features),
                                    num_features))
        self.b = ParameterBlock("head.b", np.zeros(horizon * Q))

    @property
    def params(self):
        return [self.w, self.b]

    def forward_grid(self, embedding):
        embedding = np.atleast_2d(np.asarray(embedding, dtype=np.float64))
        N = embedding.shape[0]
        y = embedding @ self.w.values.T + self.b.values
        return y.reshape(N, self.horizon, self.taus.size), embedding

    def backward_grid(self, cache, gy):
        x = cache
        g = gy.reshape(gy.shape[0], -1)
        self.w.grad += g.T @ x
        self.b.grad += g.sum(axis=0)
        return g @ self.w.values

    def forward(self, embedding, tau):
        # nearest trained quantile column; the evaluation grid is the
        # training grid, so this is exact in practice
        y, cache = self.forward_grid(embedding)
        j = int(np.argmin(np.abs(self.taus - float(np.asarray(tau).ravel()[0]))))
        return y[:, :, j], (cache, j)

    def backward(self, cache, gy):
        inner, j = cache
        full = np.zeros(gy.shape + (self.taus.size,))
        full[:, :, j] = gy
        return self.backward_grid(inner, full)

    def __call__(self, embedding, tau):
        return self.forward(embedding, tau)[0]


class PointHead:
    """Linear point predictor; ignores the quantile input."""

    kind = "point"
    takes_tau = False

    def __init__(self, num_features: int, horizon: int,
                 rng: np.random.Generator):
        self.num_features = num_features
        self.horizon = horizon
        self.w = ParameterBlock(
            "head.w", _uniform_init(rng, (horizon, num_features),
                                    num_features))
        self.b = ParameterBlock("head.b", np.zeros(horizon))

    @property
    def params(self):
        return [self.w, self.b]

    def forward(self, embedding, tau=None):
        embedding = np.atleast_2d(np.asarray(embedding, dtype=np.float64))
        return embedding @ self.w.values.T + self.b.values, embedding

    def backward(self, cache, gy):
        self.w.grad += gy.T @ cache
        self.b.grad += gy.sum(axis=0)
        return gy @ self.w.values

    def __call__(self, embedding, tau=None):
        return self.forward(embedding, tau)[0]


def make_head(kind: str, num_features: int, horizon: int,
              rng: np.random.Generator, dln_cfg: DlnHeadConfig = None,
              mlp_width: int = None, feature_keypoints=None, qr_taus=None):
    if kind == "dln":
        cfg = dln_cfg or DlnHeadConfig(horizon=horizon)
        return DlnHead(cfg, num_features, rng,
                       feature_keypoints=feature_keypoints)
    if kind == "mlp":
        return MlpHead(num_features, horizon,
                       mlp_width or num_features, rng)
    if kind == "linear":
        return LinearHead(num_features, horizon, rng, constrained=False)
    if kind == "constrained-linear":
        return LinearHead(num_features, horizon, rng, constrained=True)
    if kind == "fixed-quantile-qr":
        return FixedQuantileQrHead(num_features, horizon, rng, taus=qr_taus)
    if kind == "point":
        return PointHead(num_features, horizon, rng)
    raise ValueError(f"unknown head kind {kind!r}")
