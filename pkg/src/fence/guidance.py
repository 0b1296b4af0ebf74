"""Feedback-controlled guidance: scale law, posterior tracking, calibration.

The conditional denoiser is modeled as an additive contamination of the true
conditional by the unconditional law with prior confidence pi. Solving that
mixture for the true conditional score gives a state-dependent guidance
scale lambda = p/(p - (1-pi)) driven by the tracked log-posterior of the
conditioning, and the offset/temperature constants (delta, tau) that shape
the tracker are calibrated from two reference times t0 (activation) and t1
(peak update strength).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import NoiseSchedule
from .errors import ConfigError, InvalidInputError

__all__ = [
    "GuidanceConfig",
    "PosteriorTracker",
    "LOG_P_CLAMP",
    "mode_from_string",
    "step_at_time",
    "calibrate_delta",
    "calibrate_tau",
    "calibrated_constants",
    "guidance_scale",
    "posterior_update",
    "combine_scores",
    "guidance_gradient_norm",
]

# log p is materialized via exp only after clamping here
LOG_P_CLAMP = 30.0

MODES = ("fence", "cfg", "none")
SCOPES = ("cluster", "global", "per_node")


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance mode plus the feedback constants.

    mode is one of: "fence" (feedback-controlled scale), "cfg" (fixed scale
    ``fixed_lambda``), "none" (pure unconditional sampling). scope selects
    how per-node posteriors are pooled into scales in fence mode: "cluster"
    (attention k-means, the default), "global" (one shared scale, the wo-C
    ablation), or "per_node".
    """

    mode: str = "fence"
    fixed_lambda: float = 1.0
    pi: float = 0.5
    lambda_ref: float = 1.6
    t0: float = 0.8
    t1: float = 0.5
    alpha_scale: float = 10.0
    lambda_max: float = 10.0
    scope: str = "cluster"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if not (0.0 < self.pi <= 1.0):
            raise InvalidInputError(f"pi must lie in (0, 1], got {self.pi}")
        if not (self.lambda_ref > 1.0):
            raise InvalidInputError(f"lambda_ref must be > 1, got {self.lambda_ref}")
        for name in ("t0", "t1"):
            t = getattr(self, name)
            if not (0.0 < t < 1.0):
                raise InvalidInputError(f"{name} must lie in (0, 1), got {t}")
        if not (self.alpha_scale > 0.0):
            raise InvalidInputError(f"alpha_scale must be > 0, got {self.alpha_scale}")
        if not (self.lambda_max >= 1.0):
            raise InvalidInputError(f"lambda_max must be >= 1, got {self.lambda_max}")
        if not math.isfinite(self.fixed_lambda):
            raise InvalidInputError("fixed_lambda must be finite")


def mode_from_string(text: str) -> tuple[str, float]:
    """Parse a mode flag: "fence", "none", or "cfg:<lambda>"."""
    text = text.strip()
    if text in ("fence", "none"):
        return text, 1.0
    if text.startswith("cfg:"):
        try:
            return "cfg", float(text[4:])
        except ValueError:
            raise ConfigError(f"bad fixed scale in mode {text!r}") from None
    if text == "cfg":
        return "cfg", 1.0
    raise ConfigError(f"mode must be fence, none, or cfg:<lambda>, got {text!r}")


@dataclass(frozen=True)
class PosteriorTracker:
    """Per-node log-posterior state of one trajectory, tracked in log space."""

    log_posterior: np.ndarray
    tau: float
    delta: float

    def __post_init__(self):
        logp = np.array(self.log_posterior, dtype=np.float64)
        if logp.ndim != 1:
            raise InvalidInputError("log_posterior must be a vector (one entry per node)")
        logp.setflags(write=False)
        object.__setattr__(self, "log_posterior", logp)

    @classmethod
    def fresh(cls, n_nodes: int, tau: float, delta: float) -> "PosteriorTracker":
        # uniform prior: log p = 0 per node
        return cls(np.zeros(int(n_nodes)), float(tau), float(delta))


def step_at_time(t: float, n_steps: int) -> int:
    """Map a normalized time t in (0,1] to a step index; t=1 is pure noise (k=K)."""
    k = int(math.floor(t * n_steps + 0.5))  # round half up, platform-stable
    return min(max(k, 1), int(n_steps))


def calibrate_delta(cfg: GuidanceConfig, n_steps: int) -> float:
    """Per-step offset so the scale first exceeds lambda_ref around time t0.

    delta = log((1-pi) * lambda_ref / (lambda_ref - 1)) / ((1-t0) * K).
    """
    if cfg.lambda_ref <= 1.0:
        raise InvalidInputError(f"lambda_ref must be > 1, got {cfg.lambda_ref}")
    if cfg.pi >= 1.0:
        raise InvalidInputError("delta is undefined at pi=1 (log of zero); "
                                "full confidence needs no calibration")
    arg = (1.0 - cfg.pi) * cfg.lambda_ref / (cfg.lambda_ref - 1.0)
    return math.log(arg) / ((1.0 - cfg.t0) * int(n_steps))


def calibrate_tau(cfg: GuidanceConfig, delta: float, sigma2_t1: float) -> float:
    """Update temperature tau = |2 sigma^2_{t1} delta / alpha_scale|."""
    if not (sigma2_t1 > 0.0):
        raise InvalidInputError(f"sigma2 at t1 must be > 0, got {sigma2_t1}")
    return abs(2.0 * sigma2_t1 * delta / cfg.alpha_scale)


def calibrated_constants(cfg: GuidanceConfig, sched: NoiseSchedule) -> tuple[float, float]:
    """(delta, tau) for a sampling run; inert (0, 0) at pi=1 where lambda is 1."""
    if cfg.pi >= 1.0:
        return 0.0, 0.0
    delta = calibrate_delta(cfg, sched.n_steps)
    sigma2_t1 = sched.sigma2_at(step_at_time(cfg.t1, sched.n_steps))
    return delta, calibrate_tau(cfg, delta, sigma2_t1)


def guidance_scale(log_posterior, pi: float, lambda_max: float):
    """lambda = p/(p - (1-pi)) clamped to [1, lambda_max]; saturates at the pole.

    p is exp(log_posterior) with the log clamped at +30. Whenever
    p <= (1-pi) the ratio is undefined or negative and the scale saturates
    at lambda_max. Accepts scalars or vectors.
    """
    logp = np.asarray(log_posterior, dtype=np.float64)
    p = np.exp(np.minimum(logp, LOG_P_CLAMP))
    rest = 1.0 - float(pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(p > rest, np.clip(p / (p - rest), 1.0, lambda_max), lambda_max)
    if logp.ndim == 0:
        return float(lam)
    return lam


def posterior_update(
    tracker: PosteriorTracker,
    x_prev: np.ndarray,
    mean_cond: np.ndarray,
    mean_uncond: np.ndarray,
    k: int,
    sched: NoiseSchedule,
) -> PosteriorTracker:
    """One feedback step: reward rows that landed closer to the conditional mean.

    log p_i -= tau/(2 sigma_k^2) * (|row_i(x - mean_cond)|^2
                                    - |row_i(x - mean_uncond)|^2) + delta
    """
    x = np.asarray(x_prev, dtype=np.float64)
    mc = np.asarray(mean_cond, dtype=np.float64)
    mu = np.asarray(mean_uncond, dtype=np.float64)
    if x.shape != mc.shape or x.shape != mu.shape or x.ndim != 2:
        raise InvalidInputError(
            f"posterior_update shapes must match: {x.shape}, {mc.shape}, {mu.shape}"
        )
    if x.shape[0] != tracker.log_posterior.size:
        raise InvalidInputError(
            f"{x.shape[0]} rows vs {tracker.log_posterior.size} tracked nodes"
        )
    sigma2 = sched.sigma2_at(k)
    if sigma2 <= 0.0:
        raise InvalidInputError(f"sigma_k^2 = 0 at step {k}: posterior update undefined")
    dc = x - mc
    du = x - mu
    gap = np.sum(dc * dc, axis=1) - np.sum(du * du, axis=1)
    new_logp = tracker.log_posterior - tracker.tau / (2.0 * sigma2) * gap - tracker.delta
    return replace(tracker, log_posterior=new_logp)


def combine_scores(
    eps_uncond: np.ndarray, eps_cond: np.ndarray, lambda_per_node: np.ndarray
) -> np.ndarray:
    """Row i of output = eps_uncond_i + lambda_i (eps_cond_i - eps_uncond_i).

    Evaluated as (1-lambda) eps_uncond + lambda eps_cond, which is the same
    interpolant but exact at lambda = 0 and lambda = 1.
    """
    eu = np.asarray(eps_uncond, dtype=np.float64)
    ec = np.asarray(eps_cond, dtype=np.float64)
    lam = np.asarray(lambda_per_node, dtype=np.float64)
    if eu.shape != ec.shape or eu.ndim != 2:
        raise InvalidInputError(f"combine_scores shapes must match: {eu.shape} vs {ec.shape}")
    if lam.shape != (eu.shape[0],):
        raise InvalidInputError(f"lambda must have one entry per node, got shape {lam.shape}")
    lam_col = lam[:, None]
    return (1.0 - lam_col) * eu + lam_col * ec


def guidance_gradient_norm(
    eps_uncond: np.ndarray, eps_cond: np.ndarray, k: int, sched: NoiseSchedule
) -> np.ndarray:
    """Per-node L2 norm of the conditional-minus-unconditional score gap."""
    eu = np.asarray(eps_uncond, dtype=np.float64)
    ec = np.asarray(eps_cond, dtype=np.float64)
    if eu.shape != ec.shape or eu.ndim != 2:
        raise InvalidInputError(f"shapes must match: {eu.shape} vs {ec.shape}")
    gap = ec - eu
    return np.sqrt(np.sum(gap * gap, axis=1)) / np.sqrt(1.0 - sched.alpha_bar_at(k))
