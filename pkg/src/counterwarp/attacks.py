"""Adversarial example generators: FGSM, I-FGSM, PGD, DeepFool, a
flow-field deformation attack, and PGD composed through a defense.

Attacks operate on one sample at a time; batching is the caller's loop.
Every generator returns an :class:`AdvRecord` and never mutates the model
or the clean input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ContractError, DomainError
from .models import ClassifierModel, DefenseModel, defense_forward
from .ops import softmax_cross_entropy
from .tensor import Tape, Tensor, as_tensor
from .warp import grid_sample, identity_grid

__all__ = [
    "AttackSpec",
    "AdvRecord",
    "fgsm",
    "ifgsm",
    "pgd",
    "deepfool",
    "flow_attack",
    "composed_pgd",
    "run_attack",
    "ATTACK_KINDS",
]

ATTACK_KINDS = ("FGSM", "IFGSM", "PGD", "DEEPFOOL", "FLOW", "COMPOSED_PGD")


@dataclass(frozen=True)
class AttackSpec:
    """Attack kind plus its budget and schedule.

    ``epsilon`` is the l-inf budget in pixel units for the sign attacks and
    the per-component flow-field bound for FLOW.
    """

    kind: str
    epsilon: float = 8.0 / 255.0
    steps: int = 0
    step_size: float = 0.0
    random_start: bool = False
    overshoot: float = 0.02          # DEEPFOOL only
    flow_tv_weight: float = 0.05     # FLOW only
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise DomainError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 0:
            raise DomainError(f"steps must be >= 0, got {self.steps}")
        if self.steps > 0 and self.kind != "DEEPFOOL" and self.step_size <= 0:
            raise DomainError("step_size must be positive when steps > 0")

    @property
    def name(self) -> str:
        if self.kind in ("PGD", "COMPOSED_PGD") and self.steps:
            return f"{self.kind}-{self.steps}"
        return self.kind


def pgd_spec(steps: int, epsilon: float = 8.0 / 255.0, seed: int = 0,
             random_start: bool = True) -> AttackSpec:
    """PGD-k with the usual eps/4 step size."""
    return AttackSpec("PGD", epsilon=epsilon, steps=steps, step_size=epsilon / 4.0,
                      random_start=random_start, seed=seed)


@dataclass
class AdvRecord:
    """One (clean, adversarial) pair with its label and attack provenance."""

    x: Tensor
    x_adv: Tensor
    y: int
    spec: AttackSpec
    fooled: bool
    split: str = "train"

    def linf(self) -> float:
        return float(np.abs(self.x_adv.data - self.x.data).max())


def _predict(model, x_data: np.ndarray) -> int:
    return int(np.argmax(model.forward(Tensor(x_data)).data))


def _loss_grad(model, x_data: np.ndarray, y: int, defense: Optional[DefenseModel] = None):
    """Gradient of the classification loss w.r.t. the input, plus the loss
    and logits, optionally differentiating through a defense first."""
    xt = Tensor(x_data, requires_grad=True)
    with Tape(wrt=[xt]) as tape:
        inp = defense_forward(defense, xt) if defense is not None else xt
        logits = model.forward(inp)
        loss = softmax_cross_entropy(logits.reshape((1, -1)), [y])
    tape.backward(loss)
    return xt.grad, loss.item(), logits.data


def _record(model, x: Tensor, x_adv_data: np.ndarray, y: int, spec: AttackSpec,
            split: str) -> AdvRecord:
    fooled = _predict(model, x_adv_data) != y
    return AdvRecord(x=x.detach(), x_adv=Tensor(x_adv_data), y=y, spec=spec,
                     fooled=fooled, split=split)


def fgsm(model: ClassifierModel, x, y: int, epsilon: float,
         split: str = "train") -> AdvRecord:
    """Single-step sign attack: clamp(x + eps * sign(grad), 0, 1)."""
    spec = AttackSpec("FGSM", epsilon=epsilon)
    x = as_tensor(x)
    grad, _, _ = _loss_grad(model, x.data, y)
    x_adv = np.clip(x.data + epsilon * np.sign(grad), 0.0, 1.0)
    return _record(model, x, x_adv, y, spec, split)


def _linf_iterate(model, x: Tensor, y: int, spec: AttackSpec,
                  defense: Optional[DefenseModel] = None,
                  trace: Optional[list] = None) -> np.ndarray:
    """Shared I-FGSM/PGD loop: signed steps, box clamp, l-inf ball projection."""
    x0 = x.data
    cur = x0.copy()
    if spec.random_start and spec.epsilon > 0:
        rng = np.random.default_rng(spec.seed)
        cur = np.clip(x0 + rng.uniform(-spec.epsilon, spec.epsilon, x0.shape), 0.0, 1.0)
    for _ in range(spec.steps):
        grad, _, _ = _loss_grad(model, cur, y, defense)
        cur = np.clip(cur + spec.step_size * np.sign(grad), 0.0, 1.0)
        cur = np.clip(cur, x0 - spec.epsilon, x0 + spec.epsilon)
        if trace is not None:
            trace.append(cur.copy())
    return cur


def ifgsm(model: ClassifierModel, x, y: int, epsilon: float, steps: int,
          step_size: float, split: str = "train",
          _trace: Optional[list] = None) -> AdvRecord:
    spec = AttackSpec("IFGSM", epsilon=epsilon, steps=steps, step_size=step_size)
    x = as_tensor(x)
    x_adv = _linf_iterate(model, x, y, spec, trace=_trace)
    return _record(model, x, x_adv, y, spec, split)


def pgd(model: ClassifierModel, x, y: int, epsilon: float, steps: int,
        step_size: float, random_start: bool = True, seed: int = 0,
        split: str = "train") -> AdvRecord:
    spec = AttackSpec("PGD", epsilon=epsilon, steps=steps, step_size=step_size,
                      random_start=random_start, seed=seed)
    x = as_tensor(x)
    x_adv = _linf_iterate(model, x, y, spec)
    return _record(model, x, x_adv, y, spec, split)


def deepfool(model: ClassifierModel, x, y: int, max_iter: int = 50,
             overshoot: float = 0.02, split: str = "train") -> AdvRecord:
    """Step repeatedly to the nearest linearized class boundary."""
    if max_iter < 1:
        raise DomainError(f"max_iter must be >= 1, got {max_iter}")
    spec = AttackSpec("DEEPFOOL", epsilon=0.0, steps=max_iter, overshoot=overshoot)
    x = as_tensor(x)
    orig = _predict(model, x.data)
    if orig != y:
        return AdvRecord(x=x.detach(), x_adv=x.detach(), y=y, spec=spec,
                         fooled=True, split=split)

    r_total = np.zeros_like(x.data)
    num_classes = model.num_classes
    for _ in range(max_iter):
        cur = x.data + (1.0 + overshoot) * r_total
        xt = Tensor(cur, requires_grad=True)
        with Tape(wrt=[xt]) as tape:
            logits = model.forward(xt)
            picks = [logits.reshape((-1,))[k] for k in range(num_classes)]
        if int(np.argmax(logits.data)) != orig:
            break
        grads = []
        for k in range(num_classes):
            tape.backward(picks[k])
            grads.append(xt.grad.copy())
        f = logits.data.reshape(-1)
        best_ratio, best_w, best_df = np.inf, None, 0.0
        for k in range(num_classes):
            if k == orig:
                continue
            w_k = grads[k] - grads[orig]
            f_k = f[k] - f[orig]
            norm2 = float((w_k * w_k).sum())
            if norm2 <= 1e-24:
                continue
            ratio = abs(f_k) / np.sqrt(norm2)
            if ratio < best_ratio:
                best_ratio, best_w, best_df = ratio, w_k, f_k
        if best_w is None:
            break
        norm2 = float((best_w * best_w).sum())
        r_total = r_total + abs(best_df) / norm2 * best_w

    x_adv = np.clip(x.data + (1.0 + overshoot) * r_total, 0.0, 1.0)
    return _record(model, x, x_adv, y, spec, split)


def _total_variation(phi: Tensor) -> Tensor:
    """Smooth (squared-difference) total variation of a (H, W, 2) field."""
    dy = phi[1:, :, :] - phi[:-1, :, :]
    dx = phi[:, 1:, :] - phi[:, :-1, :]
    return (dy * dy).sum() + (dx * dx).sum()


def flow_attack(model: ClassifierModel, x, y: int, steps: int = 40,
                step_size: float = 0.01, flow_tv_weight: float = 0.05,
                epsilon_flow: float = 0.05, split: str = "train") -> AdvRecord:
    """Deformation attack: ascend the loss over a per-pixel displacement
    field added to the identity sampling grid (noise-free by construction)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise ContractError(f"flow attack needs an image input (C,H,W), got {x.shape}")
    spec = AttackSpec("FLOW", epsilon=epsilon_flow, steps=max(steps, 1),
                      step_size=step_size, flow_tv_weight=flow_tv_weight)
    _, h, w = x.shape
    base = identity_grid(h, w).coords.data
    phi = np.zeros((h, w, 2))
    for _ in range(steps):
        phi_t = Tensor(phi, requires_grad=True)
        with Tape(wrt=[phi_t]) as tape:
            warped = grid_sample(x, Tensor(base) + phi_t)
            loss = softmax_cross_entropy(model.forward(warped).reshape((1, -1)), [y])
            objective = loss - flow_tv_weight * _total_variation(phi_t)
        tape.backward(objective)
        phi = np.clip(phi + step_size * np.sign(phi_t.grad), -epsilon_flow, epsilon_flow)
    x_adv = np.clip(grid_sample(x, Tensor(base + phi)).data, 0.0, 1.0)
    return _record(model, x, x_adv, y, spec, split)


def composed_pgd(model: ClassifierModel, defense: DefenseModel, x, y: int,
                 epsilon: float, steps: int, step_size: float,
                 random_start: bool = True, seed: int = 0,
                 split: str = "train") -> AdvRecord:
    """White-box PGD through defense + classifier jointly; the record's
    ``fooled`` flag refers to the DEFENDED prediction."""
    spec = AttackSpec("COMPOSED_PGD", epsilon=epsilon, steps=steps,
                      step_size=step_size, random_start=random_start, seed=seed)
    x = as_tensor(x)
    x_adv = _linf_iterate(model, x, y, spec, defense=defense)
    defended_pred = int(np.argmax(model.forward(defense_forward(defense, Tensor(x_adv))).data))
    return AdvRecord(x=x.detach(), x_adv=Tensor(x_adv), y=y, spec=spec,
                     fooled=defended_pred != y, split=split)


def run_attack(model: ClassifierModel, x, y: int, spec: AttackSpec,
               split: str = "train", defense: Optional[DefenseModel] = None) -> AdvRecord:
    """Dispatch one attack spec against one sample."""
    if spec.kind == "FGSM":
        return fgsm(model, x, y, spec.epsilon, split)
    if spec.kind == "IFGSM":
        return ifgsm(model, x, y, spec.epsilon, spec.steps, spec.step_size, split)
    if spec.kind == "PGD":
        return pgd(model, x, y, spec.epsilon, spec.steps, spec.step_size,
                   spec.random_start, spec.seed, split)
    if spec.kind == "DEEPFOOL":
        return deepfool(model, x, y, spec.steps or 50, spec.overshoot, split)
    if spec.kind == "FLOW":
        return flow_attack(model, x, y, spec.steps, spec.step_size,
                           spec.flow_tv_weight, spec.epsilon, split)
    if spec.kind == "COMPOSED_PGD":
        if defense is None:
            raise ContractError("COMPOSED_PGD needs a defense model")
        return composed_pgd(model, defense, x, y, spec.epsilon, spec.steps,
                            spec.step_size, spec.random_start, spec.seed, split)
    raise DomainError(f"unknown attack kind {spec.kind!r}")
