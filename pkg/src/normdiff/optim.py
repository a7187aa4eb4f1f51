"""Adam optimizer and the finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NormdiffError
from .tensor import Tensor

__all__ = ["AdamState", "adam_step", "Adam", "grad_check"]


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per named parameter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict[str, np.ndarray], beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   step=0, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; pure, returns new params and state.

    Raises on non-finite gradients, naming the offending parameter.
    """
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad {g.shape} vs param {p.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NormdiffError(f"adam_step: non-finite gradient for parameter {name!r}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(m=new_m, v=new_v, step=step,
                                 beta1=b1, beta2=b2, eps=state.eps)


class Adam:
    """Stateful wrapper applying `adam_step` to a dict of Tensors in place."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.state = AdamState.init({k: p.data for k, p in params.items()},
                                    beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        raw = {k: p.data for k, p in self.params.items()}
        grads = {}
        for k, p in self.params.items():
            if p.grad is None:
                grads[k] = np.zeros_like(p.data)
            else:
                grads[k] = p.grad
        new_params, self.state = adam_step(raw, grads, self.state, self.lr)
        for k, p in self.params.items():
            p.data = new_params[k]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def grad_check(loss_fn, params: dict[str, Tensor], eps: float = 1e-4) -> float:
    """Compare analytic gradients against central finite differences.

    `loss_fn` must rebuild the scalar loss from the current parameter
    values on every call (and be deterministic, so any noise it uses has
    to come from a fixed stream). Returns the worst relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) over every
    scalar entry of every parameter.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise NormdiffError("grad_check: non-finite loss")
    for p in params.values():
        p.grad = None
    loss.backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.ravel()
        ana = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(loss_fn().data)
            flat[i] = orig - eps
            lo = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NormdiffError(f"grad_check: non-finite loss while perturbing {name!r}")
            numeric = (hi - lo) / (2 * eps)
            err = abs(numeric - ana[i]) / max(abs(numeric), abs(ana[i]), 1e-8)
            worst = max(worst, err)
    return worst
