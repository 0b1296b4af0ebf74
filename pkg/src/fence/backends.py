"""Noise-predictor backends behind one predict(x_k, k, ctx) interface.

The sampler only ever sees this interface, so the exact Gaussian oracle and
the trained network are interchangeable. Conditioning is carried by the
context: an unconditional context has zeroed observations and mask, which
for the oracle selects the prior marginal and for the network reproduces
the empty-conditioning convention used during stage-1 training.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import NoiseSchedule, noise_from_score
from .errors import InvalidInputError
from .world import GaussianOracleWorld

__all__ = [
    "ConditioningContext",
    "conditional_context",
    "unconditional_context",
    "unconditional_like",
    "DenoiserBackend",
    "OracleBackend",
    "ContaminatedBackend",
    "oracle_uncond_score",
    "oracle_cond_score",
    "node_affinity",
]


@dataclass(frozen=True)
class ConditioningContext:
    """What the denoiser may look at besides the noisy sample itself."""

    observed: np.ndarray
    mask: np.ndarray
    node_embed: np.ndarray | None = None
    time_embed: np.ndarray | None = None
    is_unconditional: bool = False

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=np.float64)
        mask = np.asarray(self.mask)
        if obs.ndim != 2 or obs.shape != mask.shape:
            raise InvalidInputError(
                f"observed {obs.shape} and mask {mask.shape} must be matching 2-D"
            )
        if not np.isin(mask, (0, 1)).all():
            raise InvalidInputError("mask entries must be 0 or 1")
        if self.is_unconditional and (np.any(obs != 0.0) or np.any(mask != 0)):
            raise InvalidInputError(
                "unconditional context must carry zero observations and zero mask"
            )
        obs.setflags(write=False)
        mask = mask.astype(np.int64)
        mask.setflags(write=False)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "mask", mask)

    @property
    def n_nodes(self) -> int:
        return self.observed.shape[0]

    @property
    def n_steps(self) -> int:
        return self.observed.shape[1]


def conditional_context(values: np.ndarray, mask: np.ndarray,
                        node_embed=None, time_embed=None) -> ConditioningContext:
    """Context carrying x^o = values*mask (unobserved entries zeroed)."""
    vals = np.asarray(values, dtype=np.float64)
    m = np.asarray(mask)
    return ConditioningContext(vals * (m == 1), m, node_embed, time_embed, False)


def unconditional_context(n_nodes: int, n_steps: int,
                          node_embed=None, time_embed=None) -> ConditioningContext:
    zeros = np.zeros((n_nodes, n_steps))
    return ConditioningContext(zeros, zeros.astype(np.int64), node_embed,
                               time_embed, True)


def unconditional_like(ctx: ConditioningContext) -> ConditioningContext:
    zeros = np.zeros_like(np.asarray(ctx.observed))
    return replace(ctx, observed=zeros, mask=zeros.astype(np.int64),
                   is_unconditional=True)


class DenoiserBackend(ABC):
    """Noise predictor: eps_hat (and optional node-affinity matrix) at step k."""

    @abstractmethod
    def predict(self, x_k: np.ndarray, k: int,
                ctx: ConditioningContext) -> tuple[np.ndarray, np.ndarray | None]:
        ...


def oracle_uncond_score(world: GaussianOracleWorld, x_k: np.ndarray, k: int,
                        sched: NoiseSchedule) -> np.ndarray:
    """Exact prior score: -(abar Sigma + (1-abar) I)^-1 (x_k - sqrt(abar) m)."""
    return world.score(x_k, k, sched, conditional=False)


def oracle_cond_score(world: GaussianOracleWorld, x_k: np.ndarray, k: int,
                      sched: NoiseSchedule) -> np.ndarray:
    """Exact conditional score via Schur-complement moments; prior score if
    the world carries no observations."""
    return world.score(x_k, k, sched, conditional=True)


def node_affinity(world: GaussianOracleWorld, k: int, sched: NoiseSchedule,
                  conditional: bool) -> np.ndarray:
    """Row-stochastic N x N affinity from the step-k marginal correlation.

    Entry (i, j) is the mean absolute correlation between the T coordinates
    of node i and those of node j; rows are normalized to sum to 1 so the
    matrix plays the same role as the network's spatial attention export.
    """
    key = ("affinity", float(sched.alpha_bar_at(k)),
           bool(conditional and world.observed_idx))
    if key not in world._cache:
        _, cov_k = world.marginal_moments(k, sched, conditional)
        std = np.sqrt(np.diag(cov_k))
        corr = np.abs(cov_k / np.outer(std, std))
        n, t = world.n_nodes, world.n_steps
        blocks = corr.reshape(n, t, n, t).mean(axis=(1, 3))
        world._cache[key] = blocks / blocks.sum(axis=1, keepdims=True)
    return world._cache[key]


class OracleBackend(DenoiserBackend):
    """Wraps a Gaussian world as a denoiser: eps = -sqrt(1-abar) * exact score.

    The world's own observation set is what conditional contexts condition
    on; an unconditional context selects the prior marginal instead.
    """

    def __init__(self, world: GaussianOracleWorld, sched: NoiseSchedule):
        self.world = world
        self.sched = sched

    def predict(self, x_k, k, ctx):
        x = np.asarray(x_k, dtype=np.float64)
        if x.shape != (self.world.n_nodes, self.world.n_steps):
            raise InvalidInputError(
                f"expected grid shape {(self.world.n_nodes, self.world.n_steps)},"
                f" got {x.shape}"
            )
        conditional = not ctx.is_unconditional
        score = self.world.score(x.reshape(-1), k, self.sched, conditional)
        eps = noise_from_score(score.reshape(x.shape), k, self.sched)
        attn = node_affinity(self.world, k, self.sched, conditional)
        return eps, attn


class ContaminatedBackend(DenoiserBackend):
    """Deliberately imperfect conditional: blends the unconditional prediction
    into the conditional one with weight (1 - pi_true).

    This is the test-bed adversary: it mimics a conditional model that only
    trusts its conditioning with confidence pi_true, which is exactly the
    situation the feedback scale is built to correct.
    """

    def __init__(self, inner: DenoiserBackend, pi_true: float):
        if not (0.0 < pi_true <= 1.0):
            raise InvalidInputError(f"pi_true must lie in (0, 1], got {pi_true}")
        self.inner = inner
        self.pi_true = float(pi_true)

    def predict(self, x_k, k, ctx):
        if ctx.is_unconditional:
            return self.inner.predict(x_k, k, ctx)
        eps_c, attn = self.inner.predict(x_k, k, ctx)
        eps_u, _ = self.inner.predict(x_k, k, unconditional_like(ctx))
        return (1.0 - self.pi_true) * eps_u + self.pi_true * eps_c, attn
