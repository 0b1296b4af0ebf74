"""Two-stage denoiser training: unconditional first, conditional fine-tune.

Stage 1 learns the grid prior from unconditional contexts only. Stage 2
starts from those weights and teaches the network to use observations by
re-hiding a random fraction of the observed entries of each window
(patch-structured, like the evaluation masks) and scoring the noise
prediction only on the re-hidden part. Validation draws are replayed from
a fixed seed every epoch so early stopping compares like with like.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .backends import conditional_context, unconditional_context
from .diffusion import NoiseSchedule, q_sample
from .errors import DivergenceError, InvalidInputError
from .grid import DatasetSplit
from .masking import MaskPatternConfig, mask_sr_tc
from .neural import NetConfig, NeuralDenoiser

__all__ = [
    "TrainConfig", "TrainResult", "Adam",
    "stage1_defaults", "stage2_defaults",
    "train_unconditional", "finetune_conditional",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    lr: float = 2e-3
    patience: int = 20
    weight_decay: float = 1e-6
    batch_size: int = 8
    seed: int = 0
    # step decay, fractions of the epoch budget
    decay_points: tuple[float, float] = (0.75, 0.90)
    decay_factor: float = 0.1
    remask_patch: int = 12

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 0:
            raise InvalidInputError("epochs, batch_size >= 1 and patience >= 0 required")
        if not (self.lr > 0.0):
            raise InvalidInputError(f"lr must be > 0, got {self.lr}")


def stage1_defaults(**overrides) -> TrainConfig:
    return TrainConfig(**{**dict(epochs=150, lr=2e-3, patience=20,
                                 weight_decay=1e-6), **overrides})


def stage2_defaults(**overrides) -> TrainConfig:
    return TrainConfig(**{**dict(epochs=80, lr=1e-3, patience=10,
                                 weight_decay=1e-5), **overrides})


@dataclass
class TrainResult:
    model: NeuralDenoiser
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


class Adam:
    """Adam with coupled L2 regularization (decay added to the gradient)."""

    def __init__(self, params: dict[str, ad.Tensor], lr: float,
                 weight_decay: float = 0.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.value) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.value) for name, t in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in self.params.items():
            if tensor.grad is None:
                continue
            g = tensor.grad + self.weight_decay * tensor.value
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            m_hat = self.m[name] / (1.0 - b1 ** self.t)
            v_hat = self.v[name] / (1.0 - b2 ** self.t)
            tensor.value = tensor.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    lr = cfg.lr
    for point in cfg.decay_points:
        if epoch >= point * cfg.epochs:
            lr *= cfg.decay_factor
    return lr


def _window_loss(model: NeuralDenoiser, values: np.ndarray, weights: np.ndarray,
                 ctx, k: int, eps: np.ndarray, sched: NoiseSchedule) -> ad.Tensor:
    x_k = q_sample(values, k, eps, sched)
    eps_hat, _ = model.forward_tensor(x_k, k, ctx)
    diff = ad.subtract(eps_hat, ad.constant(eps))
    sq = ad.multiply(diff, diff)
    masked = ad.multiply(sq, ad.constant(weights))
    return ad.scale(ad.sum_all(masked), 1.0 / max(float(weights.sum()), 1.0))


def _conditional_pieces(values, mask, rng, cfg: TrainConfig):
    """Re-hide part of the observed entries; returns (ctx, loss weights)."""
    n, t = values.shape
    alpha = 0.1 + 0.8 * rng.random()
    remask_seed = int(rng.integers(2**63))
    pattern = MaskPatternConfig("SR-TC", alpha, min(cfg.remask_patch, t),
                                seed=remask_seed)
    visible = mask_sr_tc(n, t, pattern).entries  # 0 = re-hidden
    keep = np.asarray(mask) * visible
    target = np.asarray(mask) * (1 - visible)
    return conditional_context(values, keep), target.astype(np.float64)


def _epoch(model, windows, sched, cfg, rng, optimizer, conditional, step_counter):
    order = rng.permutation(len(windows))
    total, count = 0.0, 0
    for start in range(0, len(order), cfg.batch_size):
        batch = order[start:start + cfg.batch_size]
        ad.zero_grads(model.parameters().values())
        batch_loss = None
        for idx in batch:
            grid, mask = windows[idx]
            values = np.asarray(grid.values, dtype=np.float64)
            k = int(rng.integers(1, sched.n_steps + 1))
            eps = rng.standard_normal(values.shape)
            if conditional:
                ctx, weights = _conditional_pieces(values, mask.entries, rng, cfg)
            else:
                ctx = unconditional_context(*values.shape)
                weights = np.asarray(mask.entries, dtype=np.float64)
            piece = ad.scale(
                _window_loss(model, values, weights, ctx, k, eps, sched),
                1.0 / len(batch))
            batch_loss = piece if batch_loss is None else ad.add(batch_loss, piece)
        step_counter[0] += 1
        if not np.isfinite(batch_loss.value):
            raise DivergenceError(
                f"training loss became non-finite ({batch_loss.value})",
                step=step_counter[0])
        ad.backward(batch_loss)
        optimizer.step()
        total += float(batch_loss.value)
        count += 1
    return total / max(count, 1)


def _validation_loss(model, windows, sched, cfg, conditional) -> float:
    if not windows:
        return float("nan")
    rng = np.random.Generator(np.random.Philox(key=cfg.seed ^ 0x5EED))
    total = 0.0
    for grid, mask in windows:
        values = np.asarray(grid.values, dtype=np.float64)
        k = int(rng.integers(1, sched.n_steps + 1))
        eps = rng.standard_normal(values.shape)
        if conditional:
            ctx, weights = _conditional_pieces(values, mask.entries, rng, cfg)
        else:
            ctx = unconditional_context(*values.shape)
            weights = np.asarray(mask.entries, dtype=np.float64)
        total += float(_window_loss(model, values, weights, ctx, k, eps, sched).value)
    return total / len(windows)


def _fit(model, data: DatasetSplit, cfg: TrainConfig, sched: NoiseSchedule,
         conditional: bool) -> TrainResult:
    if not data.train:
        raise InvalidInputError("training split is empty")
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    optimizer = Adam(model.parameters(), cfg.lr, cfg.weight_decay)
    result = TrainResult(model)
    best_val = float("inf")
    best_state = model.state_dict()
    since_best = 0
    step_counter = [0]
    for epoch in range(cfg.epochs):
        optimizer.lr = _lr_at(cfg, epoch)
        train_loss = _epoch(model, data.train, sched, cfg, rng, optimizer,
                            conditional, step_counter)
        val_loss = _validation_loss(model, data.validation, sched, cfg, conditional)
        result.train_losses.append(train_loss)
        result.val_losses.append(val_loss)
        monitored = val_loss if data.validation else train_loss
        if monitored < best_val - 1e-12:
            best_val = monitored
            best_state = model.state_dict()
            result.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if cfg.patience and since_best >= cfg.patience:
                result.stopped_early = True
                break
    result.model = NeuralDenoiser.from_state_dict(best_state)
    return result


def train_unconditional(data: DatasetSplit, cfg: TrainConfig, *,
                        sched: NoiseSchedule,
                        net_cfg: NetConfig | None = None) -> TrainResult:
    """Stage 1: epsilon-matching on unconditional contexts, observed entries only."""
    n_nodes = data.train[0][0].n_nodes if data.train else 0
    if net_cfg is None:
        net_cfg = NetConfig(n_nodes=n_nodes)
    model = NeuralDenoiser(net_cfg, seed=cfg.seed)
    return _fit(model, data, cfg, sched, conditional=False)


def finetune_conditional(backend: NeuralDenoiser | None, data: DatasetSplit,
                         cfg: TrainConfig, *, sched: NoiseSchedule,
                         net_cfg: NetConfig | None = None) -> TrainResult:
    """Stage 2: same objective with re-masked conditional contexts.

    Passing backend=None skips stage 1 and fine-tunes from random weights,
    which is allowed but worth a warning.
    """
    if backend is None:
        warnings.warn("fine-tuning from random weights: stage 1 was skipped",
                      stacklevel=2)
        n_nodes = data.train[0][0].n_nodes if data.train else 0
        if net_cfg is None:
            net_cfg = NetConfig(n_nodes=n_nodes)
        model = NeuralDenoiser(net_cfg, seed=cfg.seed)
    else:
        model = backend.clone()
    return _fit(model, data, cfg, sched, conditional=True)
