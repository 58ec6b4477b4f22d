"""Two-stage drift-then-diffusion estimation from one observed trajectory.

Stage 1 regresses ``(x_{k+1} - x_k) / tau`` on the wrapped position
``wrap(x_k)``. Stage 2 regresses the symmetric matrix
``r r^T / (2 tau)`` with ``r = x_{k+1} - x_k - b_hat(wrap(x_k)) tau`` on
the same inputs, where ``b_hat`` is the stage-1 network. Both stages add a
penalty on mismatched outputs at boundary points identified on the torus.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import EmptyDatasetError, InvalidInputError, TrainingDivergedError
from .nn import (
    Network,
    NetworkArch,
    TrainConfig,
    forward,
    init_network,
    loss_and_gradients,
    network_to_dict,
    save_network,
    suggest_network_size,
    train_network,
)
from .torus import sample_boundary_pairs, wrap

__all__ = [
    "DriftDataset",
    "DiffusionDataset",
    "EstimatorPair",
    "build_drift_dataset",
    "build_diffusion_dataset",
    "pack_symmetric",
    "unpack_symmetric",
    "packed_weights",
    "train_estimator",
    "torus_arch",
    "default_archs",
    "run_algorithm1",
    "evaluate_population_loss",
    "empirical_loss",
    "derive_seeds",
]


def packed_size(d):
    return d * (d + 1) // 2


def pack_symmetric(m, atol=1e-12):
    """Upper triangle of a symmetric ``(..., d, d)`` array in row-major order."""
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise InvalidInputError("pack_symmetric needs square matrices")
    scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
    if np.any(np.abs(m - np.swapaxes(m, -1, -2)) > atol * scale):
        raise InvalidInputError("matrix is not symmetric")
    iu = np.triu_indices(m.shape[-1])
    return m[..., iu[0], iu[1]]


def _dim_from_packed(k):
    d = int(round((np.sqrt(8 * k + 1) - 1) / 2))
    if packed_size(d) != k:
        raise InvalidInputError(f"{k} is not a triangular number")
    return d


def unpack_symmetric(v):
    """Inverse of :func:`pack_symmetric`; mirrors the upper triangle."""
    v = np.asarray(v, dtype=float)
    d = _dim_from_packed(v.shape[-1])
    iu = np.triu_indices(d)
    out = np.zeros(v.shape[:-1] + (d, d))
    out[..., iu[0], iu[1]] = v
    out[..., iu[1], iu[0]] = v
    return out


def packed_weights(d):
    """Loss weights that turn a packed squared error into a squared Frobenius norm."""
    iu = np.triu_indices(d)
    return np.where(iu[0] == iu[1], 1.0, 2.0)


@dataclass(frozen=True)
class DriftDataset:
    inputs: np.ndarray
    targets: np.ndarray

    @property
    def N(self):
        return len(self.inputs)

    @property
    def weights(self):
        return np.ones(self.targets.shape[1])


@dataclass(frozen=True)
class DiffusionDataset:
    inputs: np.ndarray
    targets: np.ndarray  # packed upper triangles

    @property
    def N(self):
        return len(self.inputs)

    @property
    def d(self):
        return self.inputs.shape[1]

    @property
    def weights(self):
        return packed_weights(self.d)

    def target_matrices(self):
        return unpack_symmetric(self.targets)


def _check_obs(obs):
    if obs.N < 1:
        raise EmptyDatasetError("observation set needs at least two snapshots")


def build_drift_dataset(obs):
    """Pairs ``(wrap(x_k), (x_{k+1} - x_k) / tau)`` for ``k = 0 .. N-1``."""
    _check_obs(obs)
    pos = obs.positions
    return DriftDataset(inputs=wrap(pos[:-1]), targets=np.diff(pos, axis=0) / obs.tau)


def build_diffusion_dataset(obs, drift_estimate):
    """Pairs ``(wrap(x_k), pack(r r^T / (2 tau)))``, ``r = dx - b_hat(wrap(x_k)) tau``."""
    _check_obs(obs)
    pos = obs.positions
    inputs = wrap(pos[:-1])
    b_hat = np.asarray(drift_estimate(inputs), dtype=float).reshape(inputs.shape)
    resid = np.diff(pos, axis=0) - b_hat * obs.tau
    iu = np.triu_indices(obs.d)
    targets = resid[:, iu[0]] * resid[:, iu[1]] / (2.0 * obs.tau)
    return DiffusionDataset(inputs=inputs, targets=targets)


def empirical_loss(net, dataset):
    """Estimated empirical loss of ``net`` on a drift or diffusion dataset (no penalty)."""
    loss, _ = loss_and_gradients(net, dataset.inputs, dataset.targets, dataset.weights)
    return loss


def derive_seeds(master_seed, count):
    """Independent integer seeds from one master seed via ``SeedSequence.spawn``."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


def train_estimator(dataset, arch, config, stage=None, history=None):
    """Fit a fresh network to ``dataset`` under the periodic-penalised loss.

    The boundary-pair pool (``config.boundary_pairs`` pairs) and the network
    initialisation are both derived from ``config.seed``.
    """
    if dataset.N == 0:
        raise EmptyDatasetError("empty dataset")
    d = dataset.inputs.shape[1]
    if arch.input_dim != d or arch.output_dim != dataset.targets.shape[1]:
        raise InvalidInputError(
            f"architecture {arch.input_dim}->{arch.output_dim} does not match "
            f"dataset {d}->{dataset.targets.shape[1]}"
        )
    init_seed, pair_seed = derive_seeds(config.seed, 2)
    net = init_network(arch, init_seed)
    pairs = None
    if config.lambda_periodic > 0:
        pairs = sample_boundary_pairs(config.boundary_pairs, d, np.random.default_rng(pair_seed))
    return train_network(net, dataset.inputs, dataset.targets, config,
                         weights=dataset.weights, pairs=pairs, stage=stage, history=history)


@dataclass
class EstimatorPair:
    drift_net: Network
    diffusion_net: Network
    drift_config: TrainConfig
    diffusion_config: TrainConfig
    provenance: dict = field(default_factory=dict)

    def drift(self, x):
        return forward(self.drift_net, wrap(x))

    def diffusion(self, x):
        return unpack_symmetric(forward(self.diffusion_net, wrap(x)))

    def save(self, directory):
        """Two network checkpoints plus ``manifest.json`` with data provenance."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_network(self.drift_net, directory / "drift_net.json")
        save_network(self.diffusion_net, directory / "diffusion_net.json")
        configs = {"drift": asdict(self.drift_config), "diffusion": asdict(self.diffusion_config)}
        manifest = {
            **self.provenance,
            "train_configs": configs,
            "config_hash": hashlib.sha256(
                json.dumps(configs, sort_keys=True).encode()
            ).hexdigest(),
            "files": {"drift": "drift_net.json", "diffusion": "diffusion_net.json"},
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return directory


def torus_arch(d, output_dim, hidden_dim, num_residual_blocks):
    """Architecture whose fixed input map sends the cell [0, 1)^d to [-1, 1)^d.

    With zero initial biases every ReLU kink starts through the origin of
    the input space; centring the cell spreads the kinks across it.
    """
    return NetworkArch(d, output_dim, hidden_dim, num_residual_blocks,
                       input_shift=0.5, input_scale=2.0)


def default_archs(obs, smoothness=2.0):
    """Theory-guided sizes: gamma = 1 for the drift, gamma = 0 for the diffusion."""
    d, tau = obs.d, min(obs.tau, 1.0)
    kb, lb = suggest_network_size(obs.N, tau, 1, smoothness, d)
    kd, ld = suggest_network_size(obs.N, tau, 0, smoothness, d)
    return (torus_arch(d, d, kb, lb), torus_arch(d, packed_size(d), kd, ld))


def run_algorithm1(obs, drift_arch=None, diffusion_arch=None, config=None,
                   seed=0, smoothness=2.0, drift_override: Callable | None = None):
    """Stage 1 fits the drift network, stage 2 the diffusion network on its residuals.

    Parameters
    ----------
    obs : ObservationSet
    drift_arch, diffusion_arch : NetworkArch, optional
        Explicit architectures; missing ones come from :func:`default_archs`.
    config : TrainConfig, optional
        Shared hyper-parameters; its ``seed`` is replaced by per-stage seeds
        derived from ``seed``.
    drift_override : callable, optional
        Use this drift (e.g. the true one) in stage 2 instead of the network.
    """
    config = config or TrainConfig()
    auto_b, auto_d = default_archs(obs, smoothness)
    drift_arch = drift_arch or auto_b
    diffusion_arch = diffusion_arch or auto_d
    drift_seed, diffusion_seed = derive_seeds(seed, 2)
    cfg_b = TrainConfig(**{**asdict(config), "seed": drift_seed})
    cfg_d = TrainConfig(**{**asdict(config), "seed": diffusion_seed})

    drift_net = train_estimator(build_drift_dataset(obs), drift_arch, cfg_b, stage="drift")
    b_hat = drift_override or (lambda x: forward(drift_net, x))
    diff_data = build_diffusion_dataset(obs, b_hat)
    diffusion_net = train_estimator(diff_data, diffusion_arch, cfg_d, stage="diffusion")
    meta = {k: v for k, v in obs.meta.items() if k != "seed"}
    provenance = {**meta, "N": obs.N, "tau": obs.tau, "T": obs.T,
                  "train_seed": seed, "data_seed": obs.meta.get("seed")}
    return EstimatorPair(drift_net, diffusion_net, cfg_b, cfg_d, provenance)


def _as_field(estimate, which):
    if isinstance(estimate, Network):
        if which == "diffusion":
            return lambda x: unpack_symmetric(forward(estimate, x))
        return lambda x: forward(estimate, x)
    return estimate


def evaluate_population_loss(estimate, truth, test_points, which):
    """Mean squared error of an estimate against the true field at test points.

    ``drift``: mean of ``|b_hat(x) - b(x)|^2``; ``diffusion``: mean of
    ``|D_hat(x) - D(x)|_F^2``. ``estimate`` is a callable or a Network (a
    diffusion network's packed output is unpacked). ``truth`` is an
    SdeModel or a callable returning the true field.
    """
    if which not in ("drift", "diffusion"):
        raise InvalidInputError("which must be 'drift' or 'diffusion'")
    x = np.atleast_2d(np.asarray(test_points, dtype=float))
    if len(x) == 0:
        raise InvalidInputError("need at least one test point")
    est = np.asarray(_as_field(estimate, which)(x), dtype=float)
    if hasattr(truth, "drift"):
        ref = truth.drift(x) if which == "drift" else truth.diffusion(x)
    else:
        ref = truth(x)
    err = est - np.asarray(ref, dtype=float)
    axes = tuple(range(1, err.ndim))
    per_point = np.sum(err * err, axis=axes)
    if not np.all(np.isfinite(per_point)):
        raise TrainingDivergedError(f"non-finite {which} predictions", stage=which)
    return float(np.mean(per_point))
