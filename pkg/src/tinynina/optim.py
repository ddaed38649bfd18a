"""Adam, the step-decay schedule, and the training losses."""
from dataclasses import dataclass, field
import math

import numpy as np

from . import autograd as ag
from .errors import ShapeError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.eps <= 0.0:
            raise ValueError("Adam eps must be positive")


def adam_step(params, state, lr):
    """One bias-corrected Adam update over every parameter, then zero the gradients."""
    if lr <= 0.0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if len(params) == 0:
        raise ValueError("adam_step on an empty parameter set")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = params.grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.zero_grad()


@dataclass(frozen=True)
class Schedule:
    """Step decay: ``base_lr * decay_factor ** floor(epoch / period)``."""

    base_lr: float = 1e-3
    decay_factor: float = 0.5
    period: int = 10

    def __post_init__(self):
        if self.base_lr <= 0.0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.period < 1:
            raise ValueError("period must be >= 1")


def lr_at(schedule, epoch):
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return schedule.base_lr * schedule.decay_factor ** (epoch // schedule.period)


def _pair(pred, target):
    pred, target = ag.lift(pred), ag.lift(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred shape {pred.shape} != target shape {target.shape}",
                         dim="shape", expected=target.shape, actual=pred.shape)
    return pred, target


def l1_loss(pred, target):
    """Mean absolute difference over all elements."""
    pred, target = _pair(pred, target)
    return ag.mean_all(ag.absolute(ag.sub(pred, target)))


def mse_loss(pred, target):
    pred, target = _pair(pred, target)
    return ag.mean_all(ag.square(ag.sub(pred, target)))


def l2_penalty(params, lam):
    """``lam * sum(w**2)`` over weight tensors; biases are excluded."""
    if lam < 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if lam == 0.0:
        return ag.Var(np.asarray(0.0))
    terms = [ag.sum_all(ag.square(params.var(n))) for n in params.names()
             if params.is_weight(n)]
    if not terms:
        return ag.Var(np.asarray(0.0))
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return ag.mul(total, lam)


def check_finite(value, context):
    if not math.isfinite(value):
        from .errors import NumericalError
        raise NumericalError(f"non-finite loss {value} ({context})")
