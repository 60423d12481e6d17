"""AdamW with decoupled weight decay over named trainable parameters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


class NonFiniteGradError(FloatingPointError):
    pass


@dataclass
class OptimState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class AdamW:
    def __init__(self, named_params: list[tuple[str, Parameter]], lr: float = 5e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = [(n, p) for n, p in named_params if p.requires_grad]
        self.state = OptimState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)
        for name, p in self.params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        st = self.state
        for name, p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NonFiniteGradError(f"non-finite gradient in {name}")
        st.step += 1
        bc1 = 1.0 - st.beta1 ** st.step
        bc2 = 1.0 - st.beta2 ** st.step
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            adamw_update(p.data, g, st.m[name], st.v[name], st, bc1, bc2)


def adamw_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, st: OptimState,
                 bc1: float, bc2: float) -> None:
    """In-place AdamW update of one buffer."""
    dt = p.dtype.type
    if st.weight_decay:
        p -= dt(st.lr * st.weight_decay) * p
    m *= dt(st.beta1)
    m += dt(1.0 - st.beta1) * g
    v *= dt(st.beta2)
    v += dt(1.0 - st.beta2) * (g * g)
    m_hat = m / dt(bc1) if bc1 != 0 else m
    v_hat = v / dt(bc2) if bc2 != 0 else v
    p -= dt(st.lr) * m_hat / (np.sqrt(v_hat) + dt(st.eps))
