"""Parameter storage, Adam, LR schedulers, RNG and checkpoint I/O.

All arithmetic is float64. Gradients are hand-derived per layer and
validated with the finite-difference checker below.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"MFCK0001"


@dataclass
class ParameterBlock:
    """Named float64 array with a gradient buffer and a constraint tag.

    constraint is one of "none", "nonnegative", "monotone"; monotone_dims
    lists the array dimensions along which values must be nondecreasing
    after projection.
    """

    name: str
    values: np.ndarray
    constraint: str = "none"
    monotone_dims: tuple = ()
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        else:
            self.grad = np.asarray(self.grad, dtype=np.float64)
        if self.grad.shape != self.values.shape:
            raise ValueError(
                f"grad shape {self.grad.shape} != values shape "
                f"{self.values.shape} for block {self.name!r}"
            )
        if self.constraint not in ("none", "nonnegative", "monotone"):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        self.monotone_dims = tuple(int(d) for d in self.monotone_dims)

    def zero_grad(self):
        self.grad.fill(0.0)

    @property
    def size(self) -> int:
        return self.values.size


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic counter-based generator; no global state."""
    return np.random.Generator(np.random.Philox(int(seed)))


class Adam:
    """Standard Adam over a list of ParameterBlocks.

    Constraint projection is not part of the step; callers project
    separately after each update.
    """

    def __init__(self, learning_rate=1e-3, beta1=0.9, beta2=0.999,
                 epsilon=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self._m = {}
        self._v = {}

    def step(self, params: Sequence[ParameterBlock]):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for p in params:
            if p.grad.shape != p.values.shape:
                raise ValueError(f"grad/value shape mismatch in {p.name!r}")
            m = self._m.setdefault(p.name, np.zeros_like(p.values))
            v = self._v.setdefault(p.name, np.zeros_like(p.values))
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad ** 2
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            p.values -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)


@dataclass
class StepAtEpochs:
    """Multiply the base LR by `factor` once per listed epoch reached."""

    epochs: tuple
    factor: float

    def accumulated_factor(self, epoch: int, crps_history) -> float:
        n = sum(1 for e in self.epochs if epoch >= e)
        return self.factor ** n


@dataclass
class StepOnIncrease:
    """Multiply by `factor` whenever validation CRPS increased for
    `patience` consecutive epochs (history is oldest-first)."""

    patience: int
    factor: float

    def accumulated_factor(self, epoch: int, crps_history) -> float:
        fires = 0
        run = 0
        hist = list(crps_history)
        for prev, cur in zip(hist, hist[1:]):
            if cur > prev:
                run += 1
                if run >= self.patience:
                    fires += 1
                    run = 0
            else:
                run = 0
        return self.factor ** fires


def schedule_lr(schedulers, base_lr: float, epoch: int,
                crps_history: Sequence[float]) -> float:
    """Current learning rate: base_lr times every scheduler's factors.

    Appendix-style combined rules ("step at epoch ... and if CRPS
    increases") are expressed as a list of schedulers.
    """
    lr = float(base_lr)
    for s in schedulers:
        lr *= s.accumulated_factor(epoch, crps_history)
    return lr


def finite_difference_check(loss_fn: Callable[[], float],
                            params: Sequence[ParameterBlock],
                            h: float = 1e-5) -> float:
    """Max relative error between block gradients and central differences.

    Gradients must already be populated (run the model's backward pass
    first); loss_fn re-evaluates the loss at the current parameter values.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    worst = 0.0
    for p in params:
        flat = p.values.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(
                    f"non-finite loss while checking {p.name!r}")
            num = (lp - lm) / (2.0 * h)
            err = abs(gflat[i] - num) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst


def save_checkpoint(path, blocks: Sequence[ParameterBlock], meta=None):
    """JSON header + little-endian float64 payload, one file.

    Header lists each block's name, shape, constraint and payload offset
    (in elements); the payload is all block values concatenated.
    """
    header = {
        "format": "monoforecast-checkpoint",
        "version": 1,
        "meta": meta or {},
        "blocks": [],
    }
    offset = 0
    for b in blocks:
        header["blocks"].append({
            "name": b.name,
            "shape": list(b.values.shape),
            "constraint": b.constraint,
            "monotone_dims": list(b.monotone_dims),
            "offset": offset,
        })
        offset += b.size
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.concatenate(
        [b.values.reshape(-1) for b in blocks]
        or [np.empty(0)]).astype("<f8").tobytes()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        f.write(payload)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (blocks, meta)."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a monoforecast checkpoint")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = np.frombuffer(f.read(), dtype="<f8")
    blocks = []
    for spec in header["blocks"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        vals = payload[spec["offset"]:spec["offset"] + n].reshape(spec["shape"]).copy()
        blocks.append(ParameterBlock(
            name=spec["name"], values=vals,
            constraint=spec["constraint"],
            monotone_dims=tuple(spec["monotone_dims"])))
    return blocks, header.get("meta", {})
