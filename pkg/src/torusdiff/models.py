"""Coefficient fields of Ito SDEs ``dx = b(x) dt + Sigma(x) dw`` on the torus.

Evaluators are vectorised: ``drift`` maps an array of shape ``(..., d)`` to
``(..., d)`` and ``sigma`` maps it to ``(..., d, r)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "SdeModel",
    "make_example_model",
    "make_constant_model",
    "eval_diffusion",
    "example_f",
    "example_grad_f",
    "make_model",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SdeModel:
    d: int
    r: int
    drift: Callable[[np.ndarray], np.ndarray]
    sigma: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    smoothness: float = 2.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1 or self.r < 1:
            raise InvalidInputError("dimensions d and r must be positive")

    def diffusion(self, x):
        return eval_diffusion(self, x)


def eval_diffusion(model, x):
    """Diffusion tensor ``D = Sigma Sigma^T / 2``, symmetrised exactly."""
    s = model.sigma(np.asarray(x, dtype=float))
    a = 0.5 * np.einsum("...ik,...jk->...ij", s, s)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def example_f(x):
    """``f(x) = 1 + cos(2 pi (x1 + x2)) / 2``."""
    x = np.asarray(x, dtype=float)
    return 1.0 + 0.5 * np.cos(TWO_PI * (x[..., 0] + x[..., 1]))


def example_grad_f(x):
    x = np.asarray(x, dtype=float)
    g = -np.pi * np.sin(TWO_PI * (x[..., 0] + x[..., 1]))
    return np.stack([g, g], axis=-1)


def _example_drift(x):
    x = np.asarray(x, dtype=float)
    s = TWO_PI * (x[..., 0] + x[..., 1])
    f = 1.0 + 0.5 * np.cos(s)
    g = -np.pi * f * np.sin(s)
    return np.stack([g, g], axis=-1)


def _example_sigma(x):
    f = example_f(x)
    return f[..., None, None] * np.eye(2)


def make_example_model():
    """The two-dimensional gradient-type model with ``b = f grad f``, ``Sigma = f I``.

    Its stationary law on the torus is the uniform (Lebesgue) measure and
    ``D = f^2/2 I`` lies between ``0.125 I`` and ``1.125 I``.
    """
    return SdeModel(
        d=2,
        r=2,
        drift=_example_drift,
        sigma=_example_sigma,
        name="example",
        smoothness=np.inf,
    )


def make_constant_model(b0, sigma0):
    """Constant drift ``b0`` and isotropic noise ``sigma0 I``.

    Increments over a time ``tau`` are exactly Gaussian with mean
    ``b0 tau`` and covariance ``sigma0^2 tau I``.
    """
    b0 = np.atleast_1d(np.asarray(b0, dtype=float))
    if b0.ndim != 1 or not np.all(np.isfinite(b0)):
        raise InvalidInputError("b0 must be a finite vector")
    if not np.isfinite(sigma0) or sigma0 <= 0:
        raise InvalidInputError(f"sigma0 must be positive, got {sigma0}")
    d = b0.size
    sigma_matrix = float(sigma0) * np.eye(d)

    def drift(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(b0, x.shape).copy()

    def sigma(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(sigma_matrix, x.shape[:-1] + (d, d)).copy()

    return SdeModel(
        d=d,
        r=d,
        drift=drift,
        sigma=sigma,
        name="constant",
        smoothness=np.inf,
        params={"b0": b0.tolist(), "sigma0": float(sigma0)},
    )


def make_model(name, params=None):
    """Build a built-in model by name (``"example"`` or ``"constant"``)."""
    params = params or {}
    if name == "example":
        if params:
            raise InvalidInputError("the example model takes no parameters")
        return make_example_model()
    if name == "constant":
        try:
            return make_constant_model(params["b0"], params["sigma0"])
        except KeyError as exc:
            raise InvalidInputError(f"constant model needs parameter {exc.args[0]!r}") from None
    raise InvalidInputError(f"unknown model {name!r}")
