"""Virtual strain sensor: a deep ensemble of heteroscedastic regressors.

Each member maps the current (speed, opening) to normal distributions of the
upper and lower strain envelope. Members are small batch-normalized MLPs
(2 -> 32 -> 32 -> 4) trained with the beta-NLL loss and Adam, written against
numpy directly so gradients are explicit and runs are bit-reproducible.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .envelope import EnvelopedTrajectory
from .errors import EmptyDataset, NonPositiveSigma, StateVersionMismatch, UntrainedNet

CHECKPOINT_SCHEMA = "hydrostart.ensemble/1"
HIDDEN = 32
N_MEMBERS = 5
PARAM_NAMES = ("W1", "gamma1", "shift1", "W2", "gamma2", "shift2", "W3", "b3")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    learning_rate: float = 1e-3
    batch_size: int = 32
    beta: float = 0.5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    n_members: int = N_MEMBERS
    sigma_min: float = 1e-4
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    # epochs trained on batch statistics before they are frozen; 0 never freezes
    bn_freeze_epoch: int = 1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.bn_freeze_epoch < 0:
            raise ValueError("bn_freeze_epoch must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch-norm needs mini-batches of at least 2 rows")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class SensorNet:
    params: dict[str, np.ndarray]
    running_mean: list[np.ndarray] | None = None
    running_var: list[np.ndarray] | None = None
    sigma_min: float = 1e-4
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def copy(self) -> "SensorNet":
        return SensorNet(
            {k: v.copy() for k, v in self.params.items()},
            None if self.running_mean is None else [m.copy() for m in self.running_mean],
            None if self.running_var is None else [v.copy() for v in self.running_var],
            self.sigma_min, self.bn_momentum, self.bn_eps,
        )


def init_net(rng: np.random.Generator, cfg: TrainConfig = TrainConfig()) -> SensorNet:
    """Fresh network with uniform(+-1/sqrt(fan_in)) weights and identity batch-norm."""

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    params = {
        "W1": uniform(2, (2, HIDDEN)),
        "gamma1": np.ones(HIDDEN),
        "shift1": np.zeros(HIDDEN),
        "W2": uniform(HIDDEN, (HIDDEN, HIDDEN)),
        "gamma2": np.ones(HIDDEN),
        "shift2": np.zeros(HIDDEN),
        "W3": uniform(HIDDEN, (HIDDEN, 4)),
        "b3": uniform(HIDDEN, (4,)),
    }
    return SensorNet(params, sigma_min=cfg.sigma_min, bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _forward(net: SensorNet, x: np.ndarray, train: bool, frozen: bool = False):
    """Raw 4-column output plus what backprop and the running statistics need.

    ``train`` normalizes hidden layers with batch statistics unless ``frozen``,
    in which case the stored statistics are used as constants (as at inference).
    """
    p = net.params
    use_batch = train and not frozen
    if not use_batch and net.running_mean is None:
        raise UntrainedNet("batch-norm running statistics are not initialized")
    a = x
    cache = []
    stats = []
    for layer in (1, 2):
        h = a @ p[f"W{layer}"]
        if use_batch:
            mean = h.mean(axis=0)
            var = h.var(axis=0)
        else:
            mean = net.running_mean[layer - 1]
            var = net.running_var[layer - 1]
        inv = 1.0 / np.sqrt(var + net.bn_eps)
        xhat = (h - mean) * inv
        y = p[f"gamma{layer}"] * xhat + p[f"shift{layer}"]
        out = np.maximum(y, 0.0)
        cache.append((a, xhat, inv, y))
        if use_batch:
            stats.append((mean, h.var(axis=0, ddof=1) if h.shape[0] > 1 else np.zeros_like(mean)))
        a = out
    raw = a @ p["W3"] + p["b3"]
    cache.append(a)
    return raw, cache, stats


def _heads(net: SensorNet, raw: np.ndarray):
    mu = raw[:, [0, 2]]
    sigma = _softplus(raw[:, [1, 3]]) + net.sigma_min
    return mu, sigma


def forward(net: SensorNet, omega, o, mode: str = "infer"):
    """Per-row ``(mu_u, sigma_u, mu_l, sigma_l)`` for (already normalized) inputs."""
    x = np.column_stack([np.atleast_1d(np.asarray(omega, dtype=float)),
                         np.atleast_1d(np.asarray(o, dtype=float))])
    raw, _, _ = _forward(net, x, train=(mode == "train"))
    mu, sigma = _heads(net, raw)
    return mu[:, 0], sigma[:, 0], mu[:, 1], sigma[:, 1]


def beta_nll(mu, sigma, target, beta: float, weight=None):
    """beta-NLL loss and its gradients with respect to ``mu`` and ``sigma``.

    The per-element factor ``sigma ** (2 beta)`` is treated as a constant
    (stop-gradient). Passing ``weight`` overrides that factor, which is how
    tests confirm it carries no gradient of its own.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    target = np.asarray(target, dtype=float)
    if np.any(sigma <= 0):
        raise NonPositiveSigma("sigma must be strictly positive")
    n = mu.shape[0] if mu.ndim else 1
    w = sigma ** (2.0 * beta) if weight is None else np.asarray(weight, dtype=float)
    r = target - mu
    var = sigma * sigma
    loss = float(np.sum(w * (0.5 * r * r / var + np.log(sigma))) / n)
    dmu = -w * r / var / n
    dsigma = w * (1.0 / sigma - r * r / (var * sigma)) / n
    return loss, dmu, dsigma


def beta_nll_loss(mu, sigma, target, beta: float) -> float:
    return beta_nll(mu, sigma, target, beta)[0]


def _backward(net: SensorNet, raw: np.ndarray, cache, draw: np.ndarray,
              frozen: bool = False) -> dict[str, np.ndarray]:
    p = net.params
    grads = {}
    a2 = cache[2]
    grads["W3"] = a2.T @ draw
    grads["b3"] = draw.sum(axis=0)
    da = draw @ p["W3"].T
    for layer in (2, 1):
        a_in, xhat, inv, y = cache[layer - 1]
        dy = da * (y > 0)
        grads[f"gamma{layer}"] = np.sum(dy * xhat, axis=0)
        grads[f"shift{layer}"] = dy.sum(axis=0)
        dxhat = dy * p[f"gamma{layer}"]
        if frozen:
            dh = dxhat * inv
        else:
            m = dxhat.shape[0]
            dh = inv / m * (m * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
        grads[f"W{layer}"] = a_in.T @ dh
        da = dh @ p[f"W{layer}"].T
    return grads


def loss_and_grads(net: SensorNet, x: np.ndarray, y: np.ndarray, beta: float, frozen: bool = False,
                   weight=None):
    """Train-mode beta-NLL on a batch and the gradient for every parameter.

    ``weight`` pins the stop-gradient factor (see :func:`beta_nll`).
    """
    raw, cache, stats = _forward(net, x, train=True, frozen=frozen)
    mu, sigma = _heads(net, raw)
    loss, dmu, dsigma = beta_nll(mu, sigma, y, beta, weight)
    draw = np.empty_like(raw)
    draw[:, [0, 2]] = dmu
    draw[:, [1, 3]] = dsigma * _sigmoid(raw[:, [1, 3]])
    return loss, _backward(net, raw, cache, draw, frozen), stats


def _update_running(net: SensorNet, stats) -> None:
    if net.running_mean is None:
        net.running_mean = [m.copy() for m, _ in stats]
        net.running_var = [v.copy() for _, v in stats]
        return
    k = net.bn_momentum
    for i, (m, v) in enumerate(stats):
        net.running_mean[i] = (1.0 - k) * net.running_mean[i] + k * m
        net.running_var[i] = (1.0 - k) * net.running_var[i] + k * v


def _population_stats(net: SensorNet, x: np.ndarray) -> None:
    """Replace the running statistics by exact full-dataset statistics, layer by layer."""
    p = net.params
    a = x
    means, variances = [], []
    for layer in (1, 2):
        h = a @ p[f"W{layer}"]
        mean = h.mean(axis=0)
        var = h.var(axis=0, ddof=1)
        means.append(mean)
        variances.append(var)
        y = p[f"gamma{layer}"] * (h - mean) / np.sqrt(var + net.bn_eps) + p[f"shift{layer}"]
        a = np.maximum(y, 0.0)
    net.running_mean = means
    net.running_var = variances


def train_member(x: np.ndarray, y: np.ndarray, cfg: TrainConfig, seed) -> SensorNet:
    """Train one network on standardized inputs/targets with mini-batch Adam."""
    rng = np.random.default_rng(seed)
    net = init_net(rng, cfg)
    b1, b2 = cfg.adam_betas
    m = {k: np.zeros_like(v) for k, v in net.params.items()}
    v = {k: np.zeros_like(v) for k, v in net.params.items()}
    step = 0
    n = x.shape[0]
    frozen = False
    for epoch in range(cfg.epochs):
        if cfg.bn_freeze_epoch and epoch == cfg.bn_freeze_epoch and net.running_mean is not None:
            # Mini-batch statistics jitter the mean head, and the variance head
            # absorbs that jitter; later epochs train with the inference-time normalization.
            _population_stats(net, x)
            frozen = True
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            _, grads, stats = loss_and_grads(net, x[idx], y[idx], cfg.beta, frozen)
            if not frozen:
                _update_running(net, stats)
            step += 1
            c1 = 1.0 - b1 ** step
            c2 = 1.0 - b2 ** step
            for k, g in grads.items():
                m[k] = b1 * m[k] + (1.0 - b1) * g
                v[k] = b2 * v[k] + (1.0 - b2) * g * g
                net.params[k] -= cfg.learning_rate * (m[k] / c1) / (np.sqrt(v[k] / c2) + cfg.adam_eps)
    if net.running_mean is None:
        raise EmptyDataset("dataset too small for a single mini-batch")
    return net


@dataclass(frozen=True)
class EnvelopePrediction:
    mu_u: np.ndarray
    sigma_u: np.ndarray
    mu_l: np.ndarray
    sigma_l: np.ndarray
    sum_u: np.ndarray
    sum_l: np.ndarray
    sigma_ep_u: np.ndarray
    sigma_ep_l: np.ndarray


@dataclass(eq=False)
class SensorEnsemble:
    members: list[SensorNet]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)

    def member_outputs(self, omega, o) -> np.ndarray:
        """Array ``(members, 4, n)`` of de-standardized ``mu_u, sigma_u, mu_l, sigma_l``."""
        if not self.members:
            raise UntrainedNet("ensemble has no members")
        x = np.column_stack([np.atleast_1d(np.asarray(omega, dtype=float)),
                             np.atleast_1d(np.asarray(o, dtype=float))])
        x = (x - self.x_mean) / self.x_std
        out = np.empty((len(self.members), 4, x.shape[0]))
        for i, net in enumerate(self.members):
            raw, _, _ = _forward(net, x, train=False)
            mu, sigma = _heads(net, raw)
            out[i, 0] = mu[:, 0] * self.y_std[0] + self.y_mean[0]
            out[i, 1] = sigma[:, 0] * self.y_std[0]
            out[i, 2] = mu[:, 1] * self.y_std[1] + self.y_mean[1]
            out[i, 3] = sigma[:, 1] * self.y_std[1]
        return out


def dataset_arrays(dataset: Sequence[EnvelopedTrajectory]) -> tuple[np.ndarray, np.ndarray]:
    if not dataset:
        raise EmptyDataset("no enveloped trajectories to train on")
    x = np.column_stack([np.concatenate([t.omega for t in dataset]),
                         np.concatenate([t.opening for t in dataset])])
    y = np.column_stack([np.concatenate([t.upper for t in dataset]),
                         np.concatenate([t.lower for t in dataset])])
    if x.shape[0] == 0:
        raise EmptyDataset("dataset has no samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("dataset contains non-finite samples")
    return x, y


def _scale(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    return mean, np.where(std > 1e-12, std, 1.0)


def member_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def train_arrays(x: np.ndarray, y: np.ndarray, cfg: TrainConfig = TrainConfig()) -> SensorEnsemble:
    """Train an ensemble on raw ``(omega, o)`` inputs and ``(upper, lower)`` targets."""
    if x.shape[0] < 2:
        raise EmptyDataset("need at least two samples")
    x_mean, x_std = _scale(x)
    y_mean, y_std = _scale(y)
    xs = (x - x_mean) / x_std
    ys = (y - y_mean) / y_std
    members = [train_member(xs, ys, cfg, s) for s in member_seeds(cfg.seed, cfg.n_members)]
    return SensorEnsemble(members, x_mean, x_std, y_mean, y_std, cfg)


def train(dataset: Sequence[EnvelopedTrajectory], cfg: TrainConfig = TrainConfig()) -> SensorEnsemble:
    """Train a fresh ensemble on every time step of every enveloped trajectory.

    Normalization constants come from the whole dataset; each member gets its
    own initialization and its own shuffle of the same samples.
    """
    x, y = dataset_arrays(dataset)
    return train_arrays(x, y, cfg)


def predict(ensemble: SensorEnsemble, omega, o) -> EnvelopePrediction:
    """Ensemble envelope prediction with epistemic spread of the ``mu + sigma`` sums."""
    out = ensemble.member_outputs(omega, o)
    sums_u = out[:, 0] + out[:, 1]
    sums_l = out[:, 2] + out[:, 3]
    ddof = 1 if out.shape[0] > 1 else 0
    # spread of deviations from member 0: same value, but exactly zero for identical members
    dev_u = sums_u - sums_u[0]
    dev_l = sums_l - sums_l[0]
    return EnvelopePrediction(
        mu_u=out[:, 0].mean(axis=0),
        sigma_u=out[:, 1].mean(axis=0),
        mu_l=out[:, 2].mean(axis=0),
        sigma_l=out[:, 3].mean(axis=0),
        sum_u=sums_u.mean(axis=0),
        sum_l=sums_l.mean(axis=0),
        sigma_ep_u=dev_u.std(axis=0, ddof=ddof),
        sigma_ep_l=dev_l.std(axis=0, ddof=ddof),
    )


# --------------------------------------------------------------------------
# checkpoints


def ensemble_to_dict(ensemble: SensorEnsemble) -> dict:
    cfg = ensemble.config
    return {
        "schema": CHECKPOINT_SCHEMA,
        "config_hash": cfg.digest(),
        "config": asdict(cfg),
        "normalization": {
            "x_mean": ensemble.x_mean.tolist(),
            "x_std": ensemble.x_std.tolist(),
            "y_mean": ensemble.y_mean.tolist(),
            "y_std": ensemble.y_std.tolist(),
        },
        "members": [
            {
                "params": {k: v.tolist() for k, v in net.params.items()},
                "running_mean": [m.tolist() for m in net.running_mean],
                "running_var": [v.tolist() for v in net.running_var],
            }
            for net in ensemble.members
        ],
    }


def ensemble_from_dict(data: dict) -> SensorEnsemble:
    if data.get("schema") != CHECKPOINT_SCHEMA:
        raise StateVersionMismatch(f"unsupported checkpoint schema {data.get('schema')!r}")
    raw_cfg = dict(data["config"])
    raw_cfg["adam_betas"] = tuple(raw_cfg["adam_betas"])
    cfg = TrainConfig(**raw_cfg)
    members = []
    for m in data["members"]:
        members.append(SensorNet(
            {k: np.array(m["params"][k], dtype=float) for k in PARAM_NAMES},
            [np.array(a, dtype=float) for a in m["running_mean"]],
            [np.array(a, dtype=float) for a in m["running_var"]],
            cfg.sigma_min, cfg.bn_momentum, cfg.bn_eps,
        ))
    norm = data["normalization"]
    return SensorEnsemble(members, *(np.array(norm[k], dtype=float)
                                     for k in ("x_mean", "x_std", "y_mean", "y_std")), cfg)


def save_ensemble(ensemble: SensorEnsemble, path: str | Path) -> None:
    Path(path).write_text(json.dumps(ensemble_to_dict(ensemble)))


def load_ensemble(path: str | Path) -> SensorEnsemble:
    return ensemble_from_dict(json.loads(Path(path).read_text()))
