from __future__ import annotations

import numpy as np

from ..attention import ModelParams


class SGD:
    def __init__(self, params: ModelParams, lr: float = 1e-3) -> None:
        self.lr = lr
        self.step_count = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        for name, arr in params.tensors():
            arr -= self.lr * grads[name].astype(arr.dtype, copy=False)

    def state(self) -> dict[str, np.ndarray]:
        return {"step": np.array([self.step_count], dtype=np.int64)}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])


class Adam:
    """Adam with bias correction; moments kept per parameter tensor."""

    def __init__(self, params: ModelParams, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.tensors()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.tensors()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        scale = self.lr * np.sqrt(1.0 - self.beta2**t) / (1.0 - self.beta1**t)
        for name, arr in params.tensors():
            g = grads[name].astype(arr.dtype, copy=False)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= (scale * m / (np.sqrt(v) + self.eps)).astype(arr.dtype, copy=False)

    def state(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], dtype=np.int64)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])
        for name in self.m:
            self.m[name] = state[f"m.{name}"].copy()
            self.v[name] = state[f"v.{name}"].copy()


OPTIMIZERS = {"adam": Adam, "sgd": SGD}
