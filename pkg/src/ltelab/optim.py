"""SGD and AdamW steppers with per-parameter state.

Both steppers are pure: they take the parameter and return a new array,
leaving the input untouched. AdamW uses decoupled weight decay applied from
the pre-step parameter value, independently of the adaptive term.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .numerics import Matrix, load_matrix_csv, save_matrix_csv


@dataclass(frozen=True)
class OptimConfig:
    eta: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in [0, 1), got {self.beta1}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in [0, 1), got {self.beta2}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class AdamState:
    """First/second moment estimates for one parameter tensor."""

    m: Matrix
    v: Matrix
    step_count: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), step_count=0)


def sgd_step(param: Matrix, grad: Matrix, eta: float) -> Matrix:
    """param - eta * grad."""
    if param.shape != grad.shape:
        raise ValueError(f"sgd_step shape mismatch: {param.shape} vs {grad.shape}")
    return param - eta * grad


def adamw_step(
    param: Matrix, grad: Matrix, state: AdamState, cfg: OptimConfig
) -> tuple[Matrix, AdamState]:
    """One AdamW step; returns the new parameter and the advanced state.

    Update: m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; with bias-corrected
    m_hat, v_hat the parameter moves by -eta*wd*param - eta*m_hat/(sqrt(v_hat)+eps),
    decay taken from the pre-step value before the adaptive term.
    """
    if param.shape != grad.shape:
        raise ValueError(f"adamw_step shape mismatch: {param.shape} vs {grad.shape}")
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise ValueError("adamw_step state shape mismatch")
    t = state.step_count + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (grad * grad)
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    new = param - cfg.eta * cfg.weight_decay * param - cfg.eta * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new, AdamState(m=m, v=v, step_count=t)


def schedule_eta(
    kind: str, base_eta: float, step: int, total_steps: int, warmup_steps: int = 0
) -> float:
    """Learning-rate schedule: "constant" or "warmup_cosine".

    warmup_cosine ramps linearly over warmup_steps, then follows a cosine
    decay to zero at total_steps. Plumbing for parity with larger setups;
    runners default to constant.
    """
    if kind == "constant":
        return base_eta
    if kind != "warmup_cosine":
        raise ValueError(f"unknown schedule {kind!r}")
    if warmup_steps > 0 and step < warmup_steps:
        return base_eta * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    frac = min(1.0, (step - warmup_steps) / span)
    return base_eta * 0.5 * (1.0 + math.cos(math.pi * frac))


def save_adam_state(state: AdamState, directory: str | os.PathLike, name: str) -> None:
    """Serialize an AdamState as JSON metadata plus CSV moment matrices."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    meta = {"step_count": state.step_count, "shape": list(state.m.shape)}
    with open(os.path.join(directory, f"{name}.json"), "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    save_matrix_csv(state.m, os.path.join(directory, f"{name}_m.csv"))
    save_matrix_csv(state.v, os.path.join(directory, f"{name}_v.csv"))


def load_adam_state(directory: str | os.PathLike, name: str) -> AdamState:
    directory = os.fspath(directory)
    with open(os.path.join(directory, f"{name}.json"), "r", encoding="ascii") as fh:
        meta = json.load(fh)
    m = load_matrix_csv(os.path.join(directory, f"{name}_m.csv"))
    v = load_matrix_csv(os.path.join(directory, f"{name}_v.csv"))
    if list(m.shape) != meta["shape"] or list(v.shape) != meta["shape"]:
        raise ValueError(f"optimizer state {name}: stored shapes disagree with metadata")
    return AdamState(m=m, v=v, step_count=int(meta["step_count"]))
