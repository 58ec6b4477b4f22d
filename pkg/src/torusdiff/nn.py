"""Dense residual ReLU networks with hand-written reverse-mode gradients.

Architecture::

    u       = (x - input_shift) * input_scale      (fixed, not trained)
    h_0     = W_in u + b_in
    h_{i+1} = h_i + relu(W_i h_i + b_i)      i = 0 .. num_residual_blocks-1
    out     = W_out h_L + b_out

All parameters live in one flat float64 vector; the weight matrices and
bias vectors are views into it, so optimiser updates act on the flat
vector directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError

__all__ = [
    "NetworkArch",
    "Network",
    "TrainConfig",
    "AdamState",
    "init_network",
    "forward",
    "loss_and_gradients",
    "adam_step",
    "train_network",
    "suggest_network_size",
    "save_network",
    "load_network",
]


@dataclass(frozen=True)
class NetworkArch:
    input_dim: int
    output_dim: int
    hidden_dim: int
    num_residual_blocks: int = 2
    input_shift: float = 0.0
    input_scale: float = 1.0

    def __post_init__(self):
        if min(self.input_dim, self.output_dim, self.hidden_dim) < 1:
            raise InvalidInputError("network dimensions must be positive")
        if not self.input_scale > 0:
            raise InvalidInputError("input_scale must be positive")
        if self.num_residual_blocks < 0:
            raise InvalidInputError("num_residual_blocks must be nonnegative")

    def layer_shapes(self):
        """(name, shape) for every parameter slot, in storage order."""
        d, h, o = self.input_dim, self.hidden_dim, self.output_dim
        shapes = [("W_in", (h, d)), ("b_in", (h,))]
        for i in range(self.num_residual_blocks):
            shapes += [(f"W_{i}", (h, h)), (f"b_{i}", (h,))]
        shapes += [("W_out", (o, h)), ("b_out", (o,))]
        return shapes

    @property
    def n_params(self):
        d, h, o, L = self.input_dim, self.hidden_dim, self.output_dim, self.num_residual_blocks
        return d * h + h + L * (h * h + h) + h * o + o


class Network:
    """Parameter container; ``params`` is the flat vector, ``slots`` maps names to views."""

    def __init__(self, arch, params=None):
        self.arch = arch
        if params is None:
            params = np.zeros(arch.n_params)
        params = np.array(params, dtype=float)
        if params.shape != (arch.n_params,):
            raise InvalidInputError(
                f"expected {arch.n_params} parameters, got shape {params.shape}"
            )
        self.params = params
        self.slots = _views(arch, self.params)

    def __call__(self, x):
        return forward(self, x)

    def copy(self):
        return Network(self.arch, self.params.copy())

    @property
    def blocks(self):
        return [(self.slots[f"W_{i}"], self.slots[f"b_{i}"])
                for i in range(self.arch.num_residual_blocks)]


def _views(arch, flat):
    views, pos = {}, 0
    for name, shape in arch.layer_shapes():
        size = math.prod(shape)
        views[name] = flat[pos : pos + size].reshape(shape)
        pos += size
    return views


LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser settings. ``max_steps = 0`` means no cap on Adam steps."""

    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    epochs: int = 200
    batch_size: int = 512
    lambda_periodic: float = 1.0
    boundary_pairs: int = 1000
    pairs_per_step: int = 64
    lr_schedule: str = "cosine"
    max_steps: int = 8000
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidInputError("beta1 and beta2 must lie in (0, 1)")
        if not self.epsilon_adam > 0:
            raise InvalidInputError("epsilon_adam must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be positive")
        if self.lambda_periodic < 0:
            raise InvalidInputError("lambda_periodic must be nonnegative")
        if self.boundary_pairs < 1 or self.pairs_per_step < 1:
            raise InvalidInputError("boundary_pairs and pairs_per_step must be positive")
        if self.max_steps < 0:
            raise InvalidInputError("max_steps must be nonnegative")
        if self.lr_schedule not in LR_SCHEDULES:
            raise InvalidInputError(f"lr_schedule must be one of {LR_SCHEDULES}")


def init_network(arch, seed):
    """Uniform ``[-sqrt(6/fan_in), sqrt(6/fan_in)]`` weights, zero biases."""
    rng = np.random.default_rng(seed)
    net = Network(arch)
    for name, shape in arch.layer_shapes():
        if name.startswith("W"):
            bound = math.sqrt(6.0 / shape[1])
            net.slots[name][...] = rng.uniform(-bound, bound, size=shape)
    return net


def _normalise(arch, x):
    if arch.input_shift == 0.0 and arch.input_scale == 1.0:
        return x
    return (x - arch.input_shift) * arch.input_scale


def _forward_cache(net, x):
    s = net.slots
    h = _normalise(net.arch, x) @ s["W_in"].T + s["b_in"]
    hs, zs = [h], []
    for W, b in net.blocks:
        z = h @ W.T + b
        h = h + np.maximum(z, 0.0)
        zs.append(z)
        hs.append(h)
    out = h @ s["W_out"].T + s["b_out"]
    return out, hs, zs


def forward(net, x):
    """Evaluate the network on one input of shape (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out, _, _ = _forward_cache(net, np.atleast_2d(x))
    return out[0] if single else out


def _backward(net, x, hs, zs, d_out):
    grad = np.zeros_like(net.params)
    g = _views(net.arch, grad)
    s = net.slots
    g["W_out"][...] = d_out.T @ hs[-1]
    g["b_out"][...] = d_out.sum(axis=0)
    dh = d_out @ s["W_out"]
    for i in reversed(range(net.arch.num_residual_blocks)):
        dz = dh * (zs[i] > 0)
        g[f"W_{i}"][...] = dz.T @ hs[i]
        g[f"b_{i}"][...] = dz.sum(axis=0)
        dh = dh + dz @ s[f"W_{i}"]
    g["W_in"][...] = dh.T @ _normalise(net.arch, x)
    g["b_in"][...] = dh.sum(axis=0)
    return grad


def loss_and_gradients(net, x, y, weights=None, pairs=None, lam=0.0):
    """Training loss and its exact gradient with respect to ``net.params``.

    The loss is::

        mean_n sum_j w_j (net(x_n)_j - y_nj)^2
          + lam * mean_p sum_j (net(px_p)_j - net(py_p)_j)^2

    where ``pairs = (px, py)`` are boundary points identified on the torus.

    Returns
    -------
    loss : float
    grad : ndarray, same shape as ``net.params``
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = len(x)
    if n == 0:
        raise InvalidInputError("empty batch")
    w = np.ones(net.arch.output_dim) if weights is None else np.asarray(weights, dtype=float)

    use_pairs = pairs is not None and lam > 0 and len(pairs[0]) > 0
    if use_pairs:
        px, py = pairs
        p = len(px)
        inputs = np.concatenate([x, px, py])
    else:
        inputs = x
    out, hs, zs = _forward_cache(net, inputs)

    resid = out[:n] - y
    loss = float(np.sum(resid * resid * w) / n)
    d_out = np.empty_like(out)
    d_out[:n] = (2.0 / n) * resid * w
    if use_pairs:
        gap = out[n : n + p] - out[n + p :]
        loss += lam * float(np.sum(gap * gap) / p)
        d_out[n : n + p] = (2.0 * lam / p) * gap
        d_out[n + p :] = -d_out[n : n + p]
    if not math.isfinite(loss):
        raise TrainingDivergedError("non-finite training loss")
    return loss, _backward(net, inputs, hs, zs, d_out)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params, grads, state, config, lr=None):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``.

    ``lr`` overrides ``config.learning_rate`` (used by schedules).
    """
    if params.shape != grads.shape:
        raise InvalidInputError("params and grads must have the same shape")
    b1, b2 = config.beta1, config.beta2
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grads
    v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    lr = config.learning_rate if lr is None else lr
    new = params - lr * m_hat / (np.sqrt(v_hat) + config.epsilon_adam)
    return new, AdamState(m, v, t)


def train_network(net, x, y, config, weights=None, pairs=None, stage=None, history=None):
    """Minibatch Adam on :func:`loss_and_gradients`; updates ``net`` in place.

    Each step uses one minibatch of data and ``config.pairs_per_step``
    boundary pairs drawn from ``pairs`` (the fixed pool). Shuffling and
    pair selection come from ``config.seed``. Training stops after
    ``config.epochs`` epochs or ``config.max_steps`` steps, whichever comes
    first; the learning-rate schedule spans the steps actually taken.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    if n == 0:
        raise InvalidInputError("empty dataset")
    rng = np.random.default_rng(config.seed)
    batch = min(config.batch_size, n)
    lam = config.lambda_periodic
    n_pairs = 0 if pairs is None or lam == 0 else len(pairs[0])
    take = min(config.pairs_per_step, n_pairs)
    state = AdamState.zeros_like(net.params)
    params = net.params
    total = config.epochs * -(-n // batch)
    if config.max_steps:
        total = min(total, config.max_steps)

    for epoch in range(config.epochs):
        if state.t >= total:
            break
        order = rng.permutation(n)
        epoch_loss, seen = 0.0, 0
        for step, start in enumerate(range(0, n, batch)):
            if state.t >= total:
                break
            idx = order[start : start + batch]
            sub = None
            if take:
                pick = rng.choice(n_pairs, size=take, replace=False)
                sub = (pairs[0][pick], pairs[1][pick])
            try:
                loss, grad = loss_and_gradients(net, x[idx], y[idx], weights, sub, lam)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    f"{stage or 'training'}: non-finite loss at epoch {epoch}, step {step}",
                    stage=stage, epoch=epoch, step=step,
                ) from exc
            new, state = adam_step(params, grad, state, config,
                                   _scheduled_lr(config, state.t, total))
            params[...] = new
            epoch_loss += loss * len(idx)
            seen += len(idx)
        if history is not None:
            history.append(epoch_loss / seen)
    if not np.all(np.isfinite(params)):
        raise TrainingDivergedError(f"{stage or 'training'}: non-finite parameters", stage=stage)
    return net


def _scheduled_lr(config, t, total):
    if config.lr_schedule == "cosine":
        return 0.5 * config.learning_rate * (1.0 + math.cos(math.pi * t / total))
    return config.learning_rate


def suggest_network_size(N, tau, gamma, s, d):
    """Hidden width ``K ~ (N min(tau^gamma, 1))^(d/(2s+d))`` and ``~log2 K`` blocks.

    The proportionality constant is 1; width is at least 8 and the block
    count lies in ``[1, 4]``.
    """
    if N < 1 or not 0 < tau <= 1:
        raise InvalidInputError("need N >= 1 and 0 < tau <= 1")
    if gamma not in (0, 1):
        raise InvalidInputError("gamma must be 0 or 1")
    effective = N * min(tau**gamma, 1.0)
    exponent = d / (2 * s + d)
    K = max(8, int(round(effective**exponent)))
    depth = min(4, max(1, int(round(math.log2(K)))))
    return K, depth


def network_to_dict(net):
    return {"arch": asdict(net.arch), "params": net.params.tolist()}


def network_from_dict(data):
    return Network(NetworkArch(**data["arch"]), np.array(data["params"], dtype=float))


def save_network(net, path):
    """JSON checkpoint: architecture descriptor plus flat parameter list."""
    path = Path(path)
    path.write_text(json.dumps(network_to_dict(net)) + "\n")
    return path


def load_network(path):
    return network_from_dict(json.loads(Path(path).read_text()))
