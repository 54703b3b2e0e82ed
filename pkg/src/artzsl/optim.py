"""Gradient-descent update rules: AdaGrad, RMSProp, Adam.

Each step function is pure: it takes a parameter array, its gradient, the
per-parameter accumulator state and a config, and returns the updated
array and state. The trainer applies all updates only after all gradients
for the step exist, so no update sees another's result.

RMSProp's 0.9 / 0.1 mean-square decay is fixed, not configurable; its
epsilon guard inside the square root is an addition (the bare update rule
divides by a root that is zero at the first step with zero gradient).
"""

from dataclasses import dataclass, field

import numpy as np

OPTIMIZER_KINDS = ("adagrad", "rmsprop", "adam")

RMSPROP_DECAY = 0.9


@dataclass
class OptimConfig:
    kind: str = "rmsprop"
    learning_rate: float = 0.001
    epsilon: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


@dataclass
class AdaGradState:
    sq_sum: np.ndarray  # running sum of squared gradients, nondecreasing


@dataclass
class RmsPropState:
    mean_square: np.ndarray


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def init_state(cfg, param):
    zeros = np.zeros_like(param)
    if cfg.kind == "adagrad":
        return AdaGradState(sq_sum=zeros)
    if cfg.kind == "rmsprop":
        return RmsPropState(mean_square=zeros)
    return AdamState(m=zeros, v=np.zeros_like(param))


def adagrad_step(theta, grad, state, cfg):
    if theta.shape != grad.shape:
        raise ValueError(f"parameter {theta.shape} vs gradient {grad.shape}")
    sq_sum = state.sq_sum + grad * grad
    theta = theta - cfg.learning_rate * grad / np.sqrt(sq_sum + cfg.epsilon)
    return theta, AdaGradState(sq_sum=sq_sum)


def rmsprop_step(w, grad, state, cfg):
    if w.shape != grad.shape:
        raise ValueError(f"parameter {w.shape} vs gradient {grad.shape}")
    mean_square = RMSPROP_DECAY * state.mean_square + (1.0 - RMSPROP_DECAY) * grad * grad
    w = w - cfg.learning_rate * grad / np.sqrt(mean_square + cfg.epsilon)
    return w, RmsPropState(mean_square=mean_square)


def adam_step(w, grad, state, cfg):
    if w.shape != grad.shape:
        raise ValueError(f"parameter {w.shape} vs gradient {grad.shape}")
    t = state.t + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    w = w - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return w, AdamState(m=m, v=v, t=t)


_STEPS = {"adagrad": adagrad_step, "rmsprop": rmsprop_step, "adam": adam_step}


class Optimizer:
    """Applies the configured rule across a named family of parameters."""

    def __init__(self, cfg, named_params):
        self.cfg = cfg
        self._step = _STEPS[cfg.kind]
        self.state = {name: init_state(cfg, p.data) for name, p in named_params.items()}

    def update(self, named_params):
        """One step: consumes each parameter's ``.grad``, writes ``.data``."""
        for name, p in named_params.items():
            new_data, self.state[name] = self._step(p.data, p.grad, self.state[name], self.cfg)
            p.data = new_data
