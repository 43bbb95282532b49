"""Classifier head, loss, Adam, and the end-to-end train/evaluate loops.

Training runs in two phases when the solver mode is implicit_warmup: first
``warmup_steps`` optimizer steps on a shallow explicit unroll, then implicit
training (fixed-point solve forward, implicit-function-theorem backward).
Warm-up steps count toward the fixed epoch total. Direct modes unroll a fixed
number of weight-tied layers throughout.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .deqsolve import (
    BroydenConfig,
    direct_unroll_batch,
    forward_fixed_point_batch,
    implicit_backward_batch,
    jacobian_frobenius_batch,
    unroll_backward_batch,
)
from .errors import ConfigError, DataFormatError, DimensionError, SolverDivergedError, TrainingAborted
from .qmodel import QuantumModel, build_default_model
from .seeding import substream

IMPLICIT = "implicit"
IMPLICIT_WARMUP = "implicit_warmup"
DIRECT = "direct"

# dataset name -> (num_qubits, input_dim, num_classes)
DATASET_SHAPES = {
    "mnist4": (4, 16, 4),
    "mnist10": (10, 100, 10),
    "fashionmnist10": (10, 100, 10),
    "cifar10": (10, 100, 10),
}


@dataclass(frozen=True)
class SolverMode:
    kind: str
    depth: int = 0  # direct-unroll layer count

    @classmethod
    def parse(cls, text: str) -> "SolverMode":
        if text == IMPLICIT:
            return cls(IMPLICIT)
        if text == IMPLICIT_WARMUP:
            return cls(IMPLICIT_WARMUP)
        if text.startswith("direct_"):
            try:
                depth = int(text.split("_", 1)[1])
            except ValueError:
                depth = 0
            if depth >= 1:
                return cls(DIRECT, depth)
        raise ConfigError(
            f"unknown solver_mode {text!r}; expected implicit, implicit_warmup or direct_<L>"
        )

    @property
    def implicit_family(self) -> bool:
        return self.kind in (IMPLICIT, IMPLICIT_WARMUP)


@dataclass
class TrainConfig:
    dataset: str
    solver_mode: str
    learning_rate: float
    encoding: str = "amplitude"
    epochs: int = 100
    batch_size: int = 256
    warmup_steps: int = 0
    warmup_depth: int = 1
    jac_loss_weight: float = 0.0
    jac_loss_freq: float = 0.0
    jac_probes: int = 1
    dropout_p: float = 0.1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.dataset not in DATASET_SHAPES:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.encoding not in ("amplitude", "angle"):
            raise ConfigError(f"unknown encoding {self.encoding!r}")
        if self.encoding == "angle" and self.dataset != "mnist4":
            raise ConfigError("angle encoding is only wired for the 4-qubit mnist4 setup")
        SolverMode.parse(self.solver_mode)
        if not 0.0 <= self.jac_loss_freq <= 1.0:
            raise ConfigError("jac_loss_freq must lie in [0, 1]")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be >= 0")
        if self.warmup_depth < 1:
            raise ConfigError("warmup_depth must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.jac_probes < 1:
            raise ConfigError("epochs, batch_size and jac_probes must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}")
        missing = [k for k in ("dataset", "solver_mode", "learning_rate") if k not in raw]
        if missing:
            raise ConfigError(f"missing required config keys {missing}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def shape(self):
        return DATASET_SHAPES[self.dataset]


@dataclass
class ClassifierHead:
    weight: np.ndarray  # (C, n)
    bias: np.ndarray  # (C,)
    dropout_p: float = 0.0

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.weight.shape[0] != self.bias.shape[0]:
            raise DimensionError("head weight must be (C, n) with matching bias")
        if not (np.isfinite(self.weight).all() and np.isfinite(self.bias).all()):
            raise DimensionError("head parameters must be finite")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")


def init_head(num_classes: int, input_dim: int, dropout_p: float, rng) -> ClassifierHead:
    bound = 1.0 / math.sqrt(input_dim)
    return ClassifierHead(
        weight=rng.uniform(-bound, bound, size=(num_classes, input_dim)),
        bias=np.zeros(num_classes),
        dropout_p=dropout_p,
    )


def head_forward_batch(head: ClassifierHead, Z: np.ndarray, train_mode: bool, rng=None):
    """Logits plus the dropout multiplier actually applied (ones in eval mode)."""
    if train_mode and head.dropout_p > 0.0:
        keep = rng.random(Z.shape) >= head.dropout_p
        mask = keep / (1.0 - head.dropout_p)
    else:
        mask = np.ones_like(Z)
    hidden = Z * mask
    return hidden @ head.weight.T + head.bias, mask


def head_forward(head: ClassifierHead, z_star, train_mode: bool, rng=None) -> np.ndarray:
    logits, _ = head_forward_batch(head, np.atleast_2d(z_star), train_mode, rng)
    return logits[0]


def cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """(mean loss, dloss/dlogits already divided by the batch size)."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    log_probs = shifted - np.log(exp.sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def cross_entropy(logits, label: int) -> float:
    if label >= np.asarray(logits).reshape(-1).shape[0]:
        raise DimensionError("label outside logit range")
    loss, _ = cross_entropy_batch(np.atleast_2d(logits), np.array([label]))
    return loss


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    skipped: int = 0

    @classmethod
    def init(cls, params: list) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(params: list, grads: list, state: AdamState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update in place; a non-finite gradient skips the step."""
    for g in grads:
        if not np.isfinite(g).all():
            state.skipped += 1
            return
    state.t += 1
    bc1 = 1.0 - cfg.adam_beta1**state.t
    bc2 = 1.0 - cfg.adam_beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= cfg.adam_beta1
        m += (1.0 - cfg.adam_beta1) * g
        v *= cfg.adam_beta2
        v += (1.0 - cfg.adam_beta2) * g * g
        p -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


@dataclass
class RunMetrics:
    epochs: list = field(default_factory=list)  # dicts: epoch, phase, train_loss, train_acc, val_acc, mean_residual
    test_acc: float = 0.0
    test_residual: float = 0.0
    wall_time_seconds: float = 0.0


@dataclass
class DataBundle:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def build_from_config(cfg: TrainConfig):
    """(model, head) with all randomness drawn from the config seed substreams."""
    num_qubits, input_dim, num_classes = cfg.shape
    model = build_default_model(cfg.encoding, num_qubits, input_dim, cfg.seed)
    head = init_head(num_classes, input_dim, cfg.dropout_p, substream(cfg.seed, "head"))
    return model, head


_RESIDUAL_EPS = 1e-9


def _direct_residual(model: QuantumModel, X, iterates) -> np.ndarray:
    """Relative residual for explicit unrolls (extra forward when depth is 1)."""
    if len(iterates) >= 3:
        z_last, z_prev = iterates[-1], iterates[-2]
    else:
        z_prev = iterates[-1]
        z_last = model.forward_batch(z_prev, X)
    diff = np.linalg.norm(z_last - z_prev, axis=1)
    return diff / (np.linalg.norm(z_last, axis=1) + _RESIDUAL_EPS)


def evaluate(
    model: QuantumModel,
    head: ClassifierHead,
    X: np.ndarray,
    y: np.ndarray,
    mode: SolverMode,
    broyden: BroydenConfig = BroydenConfig(),
    batch_size: int = 256,
):
    """(accuracy %, mean relative residual) over a dataset split."""
    correct = 0
    residuals = []
    for start in range(0, X.shape[0], batch_size):
        xb = X[start : start + batch_size]
        if mode.implicit_family:
            fp = forward_fixed_point_batch(model, xb, broyden)
            z = fp.z_star
            residuals.append(fp.residual)
        else:
            iterates, _ = direct_unroll_batch(model, xb, mode.depth)
            z = iterates[-1]
            residuals.append(_direct_residual(model, xb, iterates))
        logits, _ = head_forward_batch(head, z, train_mode=False)
        correct += int((logits.argmax(axis=1) == y[start : start + batch_size]).sum())
    accuracy = 100.0 * correct / X.shape[0]
    return accuracy, float(np.concatenate(residuals).mean())


def _jacobian_penalty_grad(model, Z, X, probes, weight, fd_step=1e-4):
    """Finite-difference theta-gradient of the Hutchinson penalty (probes frozen)."""
    grad = np.zeros(model.num_params)
    theta = model.theta
    for j in range(theta.shape[0]):
        orig = theta[j]
        theta[j] = orig + fd_step
        up = jacobian_frobenius_batch(model, Z, X, probes).mean()
        theta[j] = orig - fd_step
        down = jacobian_frobenius_batch(model, Z, X, probes).mean()
        theta[j] = orig
        grad[j] = (up - down) / (2.0 * fd_step)
    return weight * grad


def train(bundle: DataBundle, model: QuantumModel, head: ClassifierHead, cfg: TrainConfig,
          broyden: BroydenConfig = BroydenConfig(), log=None):
    """Run the full optimization; returns (RunMetrics, AdamState).

    Aborts with TrainingAborted when more than 10% of an epoch's batches
    diverge in the fixed-point solver.
    """
    mode = SolverMode.parse(cfg.solver_mode)
    params = [model.theta, head.weight, head.bias]
    adam = AdamState.init(params)
    metrics = RunMetrics()
    n_train = bundle.x_train.shape[0]
    steps_per_epoch = math.ceil(n_train / cfg.batch_size)
    max_diverged = 0.1 * steps_per_epoch
    step = 0
    t0 = time.time()

    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, "batch-order", epoch).permutation(n_train)
        losses = []
        residuals = []
        correct = 0
        diverged = 0
        epoch_phase = None
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = bundle.x_train[idx]
            yb = bundle.y_train[idx]
            warm = mode.kind == IMPLICIT_WARMUP and step < cfg.warmup_steps
            phase = "warmup" if warm else (IMPLICIT if mode.implicit_family else DIRECT)
            epoch_phase = phase if epoch_phase in (None, phase) else "mixed"
            dropout_rng = substream(cfg.seed, "dropout", step)
            try:
                if phase == IMPLICIT:
                    fp = forward_fixed_point_batch(model, xb, broyden)
                    z = fp.z_star
                    residuals.append(fp.residual)
                    logits, mask = head_forward_batch(head, z, train_mode=True, rng=dropout_rng)
                    loss, dlogits = cross_entropy_batch(logits, yb)
                    dz = (dlogits @ head.weight) * mask
                    dtheta, _ = implicit_backward_batch(model, xb, z, dz, broyden)
                else:
                    depth = cfg.warmup_depth if warm else mode.depth
                    iterates, _ = direct_unroll_batch(model, xb, depth)
                    z = iterates[-1]
                    residuals.append(_direct_residual(model, xb, iterates))
                    logits, mask = head_forward_batch(head, z, train_mode=True, rng=dropout_rng)
                    loss, dlogits = cross_entropy_batch(logits, yb)
                    dz = (dlogits @ head.weight) * mask
                    dtheta = unroll_backward_batch(model, xb, iterates, dz)
                if (
                    phase == IMPLICIT
                    and cfg.jac_loss_weight > 0.0
                    and substream(cfg.seed, "jac-gate", step).random() < cfg.jac_loss_freq
                ):
                    probes = (
                        substream(cfg.seed, "jac-probes", step).integers(
                            0, 2, size=(cfg.jac_probes, xb.shape[0], xb.shape[1])
                        )
                        * 2.0
                        - 1.0
                    )
                    penalty = jacobian_frobenius_batch(model, z, xb, probes).mean()
                    loss += cfg.jac_loss_weight * float(penalty)
                    dtheta = dtheta + _jacobian_penalty_grad(model, z, xb, probes, cfg.jac_loss_weight)
            except SolverDivergedError:
                diverged += 1
                if diverged > max_diverged:
                    raise TrainingAborted(
                        f"{diverged} diverged batches in epoch {epoch}",
                        diagnostics={"epoch": epoch, "diverged_batches": diverged, "step": step},
                    )
                step += 1
                continue

            dweight = dlogits.T @ (z * mask)
            dbias = dlogits.sum(axis=0)
            adam_step(params, [dtheta, dweight, dbias], adam, cfg)
            step += 1
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == yb).sum())

        val_acc, _ = evaluate(model, head, bundle.x_val, bundle.y_val, mode, broyden, cfg.batch_size)
        row = {
            "epoch": epoch,
            "phase": epoch_phase or "n/a",
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "train_acc": 100.0 * correct / n_train,
            "val_acc": val_acc,
            "mean_residual": float(np.concatenate(residuals).mean()) if residuals else float("nan"),
        }
        metrics.epochs.append(row)
        if log is not None:
            log(row)

    metrics.test_acc, metrics.test_residual = evaluate(
        model, head, bundle.x_test, bundle.y_test, mode, broyden, cfg.batch_size
    )
    metrics.wall_time_seconds = time.time() - t0
    return metrics, adam


# ---------------------------------------------------------------------------
# checkpoints: JSON text, floats round-trip bit-exactly at double precision

_CHECKPOINT_FORMAT = "qdeq-checkpoint-v1"


def save_checkpoint(path, cfg: TrainConfig, model: QuantumModel, head: ClassifierHead,
                    adam: Optional[AdamState] = None, step: int = 0) -> None:
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "config": cfg.to_dict(),
        "step": step,
        "theta": model.theta.tolist(),
        "head_weight": head.weight.tolist(),
        "head_bias": head.bias.tolist(),
    }
    if adam is not None:
        payload["adam"] = {
            "t": adam.t,
            "skipped": adam.skipped,
            "m": [m.tolist() for m in adam.m],
            "v": [v.tolist() for v in adam.v],
        }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_checkpoint(path):
    """(cfg, model, head, adam, step) rebuilt from a checkpoint file."""
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise DataFormatError(f"unexpected checkpoint format {payload.get('format')!r}")
    cfg = TrainConfig.from_dict(payload["config"])
    model, head = build_from_config(cfg)
    theta = np.asarray(payload["theta"], dtype=np.float64)
    if theta.shape != model.theta.shape:
        raise DataFormatError("checkpoint theta does not match the rebuilt circuit")
    model.theta[:] = theta
    head.weight[:] = np.asarray(payload["head_weight"], dtype=np.float64)
    head.bias[:] = np.asarray(payload["head_bias"], dtype=np.float64)
    adam = None
    if "adam" in payload:
        adam = AdamState(
            m=[np.asarray(a, dtype=np.float64) for a in payload["adam"]["m"]],
            v=[np.asarray(a, dtype=np.float64) for a in payload["adam"]["v"]],
            t=payload["adam"]["t"],
            skipped=payload["adam"]["skipped"],
        )
    return cfg, model, head, adam, payload.get("step", 0)
