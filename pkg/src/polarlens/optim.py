"""Shared training plumbing: Adam/SGD steps, gradient clipping, parameter
dicts flattened to vectors for gradient checking."""

import numpy as np


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    """Adam over a dict of parameter arrays (updated in place)."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class Sgd:
    """Plain SGD over a dict of parameter arrays (updated in place)."""

    def __init__(self, params: dict, lr=1e-2):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for k, p in params.items():
            p -= self.lr * grads[k]


def make_optimizer(name: str, params: dict, lr: float):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return Sgd(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


def flatten_params(params: dict):
    """Concatenate a parameter dict to one vector plus its layout."""
    keys = sorted(params)
    vec = np.concatenate([params[k].ravel() for k in keys])
    layout = [(k, params[k].shape) for k in keys]
    return vec, layout


def unflatten_params(vec: np.ndarray, layout) -> dict:
    out = {}
    pos = 0
    for k, shape in layout:
        size = int(np.prod(shape))
        out[k] = vec[pos : pos + size].reshape(shape).copy()
        pos += size
    return out
