"""Monotonically constrainable layers: calibrators, multilinear lattices,
lattice ensembles, constrained linear maps, and the projections that keep
their constraints satisfied.

Every layer exposes a batched forward and a hand-derived backward that
accumulates into the ParameterBlock grad buffers and returns the gradient
with respect to the layer input.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .numerics import ParameterBlock


# ---------------------------------------------------------------------------
# isotonic projection
# ---------------------------------------------------------------------------

def pava(y: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """L2 isotonic regression (nondecreasing) via pool-adjacent-violators."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if w is None:
        w = np.ones(n)
    # blocks as (mean, weight) with lazy merging
    means = np.empty(n)
    weights = np.empty(n)
    ends = np.empty(n, dtype=np.intp)  # exclusive end index of each block
    k = 0
    for i in range(n):
        means[k] = y[i]
        weights[k] = w[i]
        ends[k] = i + 1
        k += 1
        while k > 1 and means[k - 2] > means[k - 1]:
            tot = weights[k - 2] + weights[k - 1]
            means[k - 2] = (means[k - 2] * weights[k - 2]
                            + means[k - 1] * weights[k - 1]) / tot
            weights[k - 2] = tot
            ends[k - 2] = ends[k - 1]
            k -= 1
    out = np.empty(n)
    start = 0
    for j in range(k):
        out[start:ends[j]] = means[j]
        start = ends[j]
    return out


def _isotonic_along_axis(values: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1]).copy()
    for r in range(flat.shape[0]):
        flat[r] = pava(flat[r])
    return np.moveaxis(flat.reshape(moved.shape), -1, axis)


def project_monotone(block: ParameterBlock, tol: float = 1e-9,
                     max_sweeps: int = 100) -> ParameterBlock:
    """Project block values onto their constraint set, in place.

    nonnegative -> elementwise clip at 0. monotone -> Euclidean projection
    onto the cone of arrays nondecreasing along every flagged dimension,
    via Dykstra's alternating projections over per-dimension chains (each
    chain projection is exact isotonic regression). A single flagged
    dimension needs one exact pass.
    """
    if block.constraint == "none":
        return block
    if block.constraint == "nonnegative":
        np.maximum(block.values, 0.0, out=block.values)
        return block
    dims = block.monotone_dims
    if len(dims) == 0:
        return block
    if len(dims) == 1:
        block.values[...] = _isotonic_along_axis(block.values, dims[0])
        return block
    x = block.values
    increments = {d: np.zeros_like(x) for d in dims}
    for _ in range(max_sweeps):
        x_prev = x.copy()
        for d in dims:
            y = x + increments[d]
            x = _isotonic_along_axis(y, d)
            increments[d] = y - x
        if np.max(np.abs(x - x_prev)) < tol:
            break
    block.values[...] = x
    return block


def apply_constraints(params: Sequence[ParameterBlock]):
    for p in params:
        project_monotone(p)


# ---------------------------------------------------------------------------
# calibrators
# ---------------------------------------------------------------------------

class Calibrator:
    """One-dimensional piecewise-linear lookup: keypoints `a` (fixed,
    strictly increasing) mapped to trainable outputs `b`. Out-of-range
    inputs clamp to the end values."""

    def __init__(self, name: str, keypoints: np.ndarray,
                 outputs: np.ndarray, monotone: bool = False):
        a = np.asarray(keypoints, dtype=np.float64)
        if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
            raise ValueError("keypoints must be 1-D and strictly increasing")
        self.a = a
        self.block = ParameterBlock(
            name=name, values=np.asarray(outputs, dtype=np.float64),
            constraint="monotone" if monotone else "none",
            monotone_dims=(0,) if monotone else ())
        if self.block.values.shape != a.shape:
            raise ValueError("outputs shape must match keypoints")

    @property
    def params(self):
        return [self.block]

    def _locate(self, x):
        a = self.a
        xc = np.clip(x, a[0], a[-1])
        idx = np.clip(np.searchsorted(a, xc, side="right") - 1, 0, a.size - 2)
        t = (xc - a[idx]) / (a[idx + 1] - a[idx])
        return xc, idx, t

    def forward(self, x):
        xc, idx, t = self._locate(x)
        b = self.block.values
        out = (1.0 - t) * b[idx] + t * b[idx + 1]
        cache = (x, idx, t)
        return out, cache

    def backward(self, cache, gy):
        x, idx, t = cache
        b = self.block.values
        np.add.at(self.block.grad, idx, gy * (1.0 - t))
        np.add.at(self.block.grad, idx + 1, gy * t)
        slope = (b[idx + 1] - b[idx]) / (self.a[idx + 1] - self.a[idx])
        inside = (x >= self.a[0]) & (x <= self.a[-1])
        return gy * slope * inside

    def __call__(self, x):
        return self.forward(x)[0]


class CalibratorBank:
    """E parallel calibrators sharing one (E, k) parameter block; applies
    per-feature piecewise-linear maps to an (N, E) batch."""

    def __init__(self, name: str, keypoints: np.ndarray, outputs: np.ndarray,
                 monotone: bool = False):
        a = np.asarray(keypoints, dtype=np.float64)
        if a.ndim != 2 or np.any(np.diff(a, axis=1) <= 0):
            raise ValueError("keypoints must be (E, k) with strictly "
                             "increasing rows")
        self.a = a
        self.block = ParameterBlock(
            name=name, values=np.asarray(outputs, dtype=np.float64),
            constraint="monotone" if monotone else "none",
            monotone_dims=(1,) if monotone else ())
        if self.block.values.shape != a.shape:
            raise ValueError("outputs shape must match keypoints")

    @property
    def params(self):
        return [self.block]

    def forward(self, x):
        # x: (N, E)
        a = self.a
        E, k = a.shape
        lo = a[:, 0]
        hi = a[:, -1]
        xc = np.clip(x, lo, hi)
        idx = np.empty_like(x, dtype=np.intp)
        for e in range(E):
            idx[:, e] = np.searchsorted(a[e], xc[:, e], side="right") - 1
        idx = np.clip(idx, 0, k - 2)
        cols = np.arange(E)[None, :]
        a_lo = a[cols, idx]
        a_hi = a[cols, idx + 1]
        t = (xc - a_lo) / (a_hi - a_lo)
        b = self.block.values
        out = (1.0 - t) * b[cols, idx] + t * b[cols, idx + 1]
        return out, (x, idx, t, cols)

    def backward(self, cache, gy):
        x, idx, t, cols = cache
        b = self.block.values
        np.add.at(self.block.grad, (cols.repeat(len(x), 0), idx), gy * (1 - t))
        np.add.at(self.block.grad, (cols.repeat(len(x), 0), idx + 1), gy * t)
        a = self.a
        slope = (b[cols, idx + 1] - b[cols, idx]) / (a[cols, idx + 1] - a[cols, idx])
        inside = (x >= a[:, 0]) & (x <= a[:, -1])
        return gy * slope * inside


# ---------------------------------------------------------------------------
# lattices
# ---------------------------------------------------------------------------

class Lattice:
    """k^D multilinear lattice on [0,1]^D with uniform keypoints.

    theta has shape (k,)*D; monotone_dims flags dimensions constrained to
    be nondecreasing. Inputs are clamped into the unit hypercube.
    """

    def __init__(self, name: str, dims: int, keypoints: int,
                 theta: np.ndarray, monotone_dims: Sequence[int] = ()):
        if dims < 1 or keypoints < 2:
            raise ValueError("need dims >= 1 and keypoints >= 2")
        self.dims = dims
        self.keypoints = keypoints
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (keypoints,) * dims:
            raise ValueError(
                f"theta shape {theta.shape} != {(keypoints,) * dims}")
        mono = tuple(sorted(int(d) for d in monotone_dims))
        self.theta = ParameterBlock(
            name=name, values=theta,
            constraint="monotone" if mono else "none", monotone_dims=mono)
        self._corners = list(itertools.product((0, 1), repeat=dims))

    @property
    def params(self):
        return [self.theta]

    def _cell(self, x):
        if x.shape[-1] != self.dims:
            raise ValueError(
                f"input has {x.shape[-1]} dims, lattice expects {self.dims}")
        k = self.keypoints
        xc = np.clip(x, 0.0, 1.0)
        scaled = xc * (k - 1)
        cell = np.minimum(scaled.astype(np.intp), k - 2)
        frac = scaled - cell
        return xc, cell, frac

    def forward(self, x):
        # x: (N, D) -> (N,)
        x = np.asarray(x, dtype=np.float64)
        xc, cell, frac = self._cell(x)
        theta = self.theta.values
        out = np.zeros(x.shape[0])
        for corner in self._corners:
            w = np.ones(x.shape[0])
            for d, bit in enumerate(corner):
                w *= frac[:, d] if bit else (1.0 - frac[:, d])
            idx = tuple((cell[:, d] + corner[d]) for d in range(self.dims))
            out += theta[idx] * w
        return out, (x, cell, frac)

    def backward(self, cache, gy):
        # gy: (N,) -> grad wrt x (N, D); theta grads accumulated
        x, cell, frac = cache
        N = x.shape[0]
        theta = self.theta.values
        gx = np.zeros_like(x)
        k = self.keypoints
        for corner in self._corners:
            w_parts = [frac[:, d] if bit else (1.0 - frac[:, d])
                       for d, bit in enumerate(corner)]
            w = np.ones(N)
            for p in w_parts:
                w *= p
            idx = tuple((cell[:, d] + corner[d]) for d in range(self.dims))
            np.add.at(self.theta.grad, idx, gy * w)
            tv = theta[idx]
            for d, bit in enumerate(corner):
                w_other = np.ones(N)
                for d2, p in enumerate(w_parts):
                    if d2 != d:
                        w_other *= p
                sign = 1.0 if bit else -1.0
                gx[:, d] += gy * tv * sign * w_other
        # chain through cell rescaling; clamped coordinates get zero grad
        inside = (x >= 0.0) & (x <= 1.0)
        gx *= (k - 1) * inside
        return gx


def interpolation_weights(x: np.ndarray, keypoints: int = 2):
    """Multilinear weights of a point over its containing cell's corners.

    Returns (cell, weights) with weights of shape (N, 2^D) ordered by the
    binary corner enumeration of itertools.product((0, 1), repeat=D).
    Weights are a convex combination (sum to 1).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    D = x.shape[-1]
    xc = np.clip(x, 0.0, 1.0)
    scaled = xc * (keypoints - 1)
    cell = np.minimum(scaled.astype(np.intp), keypoints - 2)
    frac = scaled - cell
    corners = list(itertools.product((0, 1), repeat=D))
    w = np.empty((x.shape[0], len(corners)))
    for j, corner in enumerate(corners):
        wj = np.ones(x.shape[0])
        for d, bit in enumerate(corner):
            wj *= frac[:, d] if bit else (1.0 - frac[:, d])
        w[:, j] = wj
    return cell, w


def linear_ramp_theta(dims: int, keypoints: int,
                      monotone_dims: Sequence[int],
                      rng: np.random.Generator,
                      noise: float = 0.01) -> np.ndarray:
    """Feasible initialization: mean of linear ramps (0 -> 1) along each
    monotone dimension, small zero-mean noise elsewhere."""
    shape = (keypoints,) * dims
    mono = tuple(monotone_dims)
    if mono:
        theta = np.zeros(shape)
        ramp = np.linspace(0.0, 1.0, keypoints)
        for d in mono:
            view = [None] * dims
            view[d] = slice(None)
            theta += ramp[tuple(view)]
        theta /= len(mono)
    else:
        theta = np.full(shape, 0.5)
    theta += noise * rng.standard_normal(shape)
    return theta


class LatticeEnsemble:
    """Lattices over a disjoint partition of embedding features, each with
    one extra trailing dimension reserved for the quantile input."""

    def __init__(self, lattices: Sequence[Lattice],
                 feature_assignment: Sequence[Sequence[int]],
                 num_features: int):
        if len(lattices) != len(feature_assignment):
            raise ValueError("one feature group per lattice required")
        seen = sorted(i for grp in feature_assignment for i in grp)
        if seen != list(range(num_features)):
            raise ValueError("feature_assignment must be a disjoint "
                             "partition of all embedding features")
        for lat, grp in zip(lattices, feature_assignment):
            if lat.dims != len(grp) + 1:
                raise ValueError("lattice dims must be group size + 1 (tau)")
            if lat.theta.monotone_dims != (lat.dims - 1,):
                raise ValueError("quantile dimension (last) must be the "
                                 "monotone dimension")
        self.lattices = list(lattices)
        self.feature_assignment = [list(g) for g in feature_assignment]
        self.num_features = num_features

    @property
    def params(self):
        return [lat.theta for lat in self.lattices]

    def forward(self, embedding, tau):
        # embedding: (N, E); tau: scalar or (N,) -> (N, L)
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape[1] != self.num_features:
            raise ValueError(
                f"embedding has {embedding.shape[1]} features, "
                f"ensemble expects {self.num_features}")
        N = embedding.shape[0]
        tau_col = np.broadcast_to(np.asarray(tau, dtype=np.float64),
                                  (N,)).reshape(N, 1)
        outs = np.empty((N, len(self.lattices)))
        caches = []
        for i, (lat, grp) in enumerate(zip(self.lattices,
                                           self.feature_assignment)):
            xin = np.concatenate([embedding[:, grp], tau_col], axis=1)
            outs[:, i], cache = lat.forward(xin)
            caches.append(cache)
        return outs, caches

    def backward(self, caches, gy):
        # gy: (N, L) -> (grad wrt embedding (N, E), grad wrt tau (N,))
        N = gy.shape[0]
        g_emb = np.zeros((N, self.num_features))
        g_tau = np.zeros(N)
        for i, (lat, grp) in enumerate(zip(self.lattices,
                                           self.feature_assignment)):
            gx = lat.backward(caches[i], gy[:, i])
            g_emb[:, grp] += gx[:, :-1]
            g_tau += gx[:, -1]
        return g_emb, g_tau


def partition_features(num_features: int, group_size: int,
                       rng: np.random.Generator):
    """Seeded shuffle, then contiguous groups of `group_size` (last group
    may be smaller when sizes do not divide evenly)."""
    order = rng.permutation(num_features)
    return [sorted(order[i:i + group_size].tolist())
            for i in range(0, num_features, group_size)]


# ---------------------------------------------------------------------------
# constrained linear
# ---------------------------------------------------------------------------

class ConstrainedLinear:
    """Affine map with nonnegative weights on monotone inputs:
    y = M @ Wq.T + F @ Wm.T + b."""

    def __init__(self, name: str, monotone_weights: np.ndarray,
                 free_weights: np.ndarray, bias: np.ndarray):
        self.wq = ParameterBlock(f"{name}.wq",
                                 np.asarray(monotone_weights, dtype=np.float64),
                                 constraint="nonnegative")
        self.wm = ParameterBlock(f"{name}.wm",
                                 np.asarray(free_weights, dtype=np.float64))
        self.b = ParameterBlock(f"{name}.b",
                                np.asarray(bias, dtype=np.float64))
        out = self.b.values.shape[0]
        if self.wq.values.shape[0] != out or (
                self.wm.values.size and self.wm.values.shape[0] != out):
            raise ValueError("weight/bias output sizes disagree")

    @property
    def params(self):
        blocks = [self.wq, self.b]
        if self.wm.values.size:
            blocks.insert(1, self.wm)
        return blocks

    def forward(self, monotone_in, free_in=None):
        m = np.atleast_2d(np.asarray(monotone_in, dtype=np.float64))
        if m.shape[1] != self.wq.values.shape[1]:
            raise ValueError("monotone input width mismatch")
        out = m @ self.wq.values.T + self.b.values
        f = None
        if self.wm.values.size:
            f = np.atleast_2d(np.asarray(free_in, dtype=np.float64))
            if f.shape[1] != self.wm.values.shape[1]:
                raise ValueError("free input width mismatch")
            out = out + f @ self.wm.values.T
        elif free_in is not None and np.size(free_in):
            raise ValueError("layer has no free weights")
        return out, (m, f)

    def backward(self, cache, gy):
        m, f = cache
        self.wq.grad += gy.T @ m
        self.b.grad += gy.sum(axis=0)
        g_free = None
        if f is not None:
            self.wm.grad += gy.T @ f
            g_free = gy @ self.wm.values
        return gy @ self.wq.values, g_free
