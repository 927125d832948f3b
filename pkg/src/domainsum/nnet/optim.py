"""Parameter updates: plain SGD (default) and bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ParameterStore


@dataclass
class OptimizerState:
    kind: str = "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def apply_update(
    params: ParameterStore,
    gradients: dict[str, np.ndarray],
    state: OptimizerState | None = None,
    learning_rate: float = 0.1,
) -> None:
    """Update parameters in place from named gradients.

    Parameters without a gradient entry are untouched. SGD is the default;
    kind="adam" applies the adaptive-moment variant with bias correction, so
    the very first step moves each coordinate by roughly the learning rate.
    """
    if state is None:
        state = OptimizerState()
    if state.kind == "sgd":
        for name, grad in gradients.items():
            t = params[name]
            if t.data.shape != grad.shape:
                raise ValueError(f"gradient shape mismatch for {name!r}")
            t.data = np.asarray(t.data - learning_rate * grad.astype(t.data.dtype))
        return
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for name, grad in gradients.items():
        t = params[name]
        if t.data.shape != grad.shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        g = grad.astype(np.float64)
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / correction1
        v_hat = state.v[name] / correction2
        step = learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        t.data = np.asarray((t.data.astype(np.float64) - step).astype(t.data.dtype))
