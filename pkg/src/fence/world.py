"""Synthetic jointly-Gaussian spatial-temporal worlds with closed-form scores.

A world is N(m, Sigma) over grids flattened node-major (index = node*T + t),
with Sigma the Kronecker product of a ring-graph spatial kernel rho_s^hops
and an AR-style temporal kernel rho_t^|dt|. Because every marginal of the
forward noising process stays Gaussian, the unconditional and conditional
scores used by the sampler are exact linear solves here, which is what lets
the guidance formulas be checked to floating-point accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, LinAlgError

from .diffusion import NoiseSchedule
from .errors import InvalidInputError

__all__ = [
    "GaussianOracleWorld",
    "make_gaussian_world",
    "ring_hops",
    "observations_from_mask",
    "gaussian_mixture_1d",
    "make_contaminated_scores",
]

_LOG_2PI = math.log(2.0 * math.pi)


def ring_hops(n_nodes: int) -> np.ndarray:
    """Shortest-path hop counts between nodes of an undirected ring."""
    idx = np.arange(n_nodes)
    diff = np.abs(idx[:, None] - idx[None, :])
    return np.minimum(diff, n_nodes - diff)


def _read_only(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GaussianOracleWorld:
    """Exact Gaussian law over an N x T grid, optionally with observations."""

    n_nodes: int
    n_steps: int
    mean: np.ndarray
    cov: np.ndarray
    observed_idx: tuple[int, ...] = ()
    observed_val: tuple[float, ...] = ()
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        dim = self.n_nodes * self.n_steps
        mean = _read_only(self.mean)
        cov = _read_only(self.cov)
        if mean.shape != (dim,) or cov.shape != (dim, dim):
            raise InvalidInputError(
                f"mean/cov must have dimension {dim}, got {mean.shape} and {cov.shape}"
            )
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise InvalidInputError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        idx = tuple(int(i) for i in self.observed_idx)
        if len(set(idx)) != len(idx) or any(not (0 <= i < dim) for i in idx):
            raise InvalidInputError("observed indices must be distinct and in range")
        if len(idx) != len(self.observed_val):
            raise InvalidInputError("observed indices and values must pair up")
        vals = tuple(float(v) for v in self.observed_val)
        if any(not np.isfinite(v) for v in vals):
            raise InvalidInputError("observed values must be finite")
        object.__setattr__(self, "observed_idx", idx)
        object.__setattr__(self, "observed_val", vals)
        try:
            self._cache["chol"] = cho_factor(cov, lower=True)
        except LinAlgError as exc:
            raise InvalidInputError(f"covariance is not positive definite: {exc}") from exc

    # -- structure ---------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.n_nodes * self.n_steps

    @property
    def hidden_idx(self) -> np.ndarray:
        mask = np.ones(self.dim, dtype=bool)
        mask[list(self.observed_idx)] = False
        return np.flatnonzero(mask)

    def grid_to_flat(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64).reshape(self.dim)

    def flat_to_grid(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec, dtype=np.float64).reshape(self.n_nodes, self.n_steps)

    def observe(self, indices, values) -> "GaussianOracleWorld":
        return replace(self, observed_idx=tuple(int(i) for i in indices),
                       observed_val=tuple(float(v) for v in values), _cache={})

    def normalized(self, center: float, scale: float) -> "GaussianOracleWorld":
        """World of z = (x - center)/scale; stays exactly Gaussian."""
        if not (scale > 0.0):
            raise InvalidInputError(f"scale must be > 0, got {scale}")
        return replace(
            self,
            mean=(self.mean - center) / scale,
            cov=self.cov / (scale * scale),
            observed_val=tuple((v - center) / scale for v in self.observed_val),
            _cache={},
        )

    # -- conditional moments -----------------------------------------------

    def conditional_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Full-dimensional (mean, cov) after conditioning on observations.

        Observed coordinates are pinned: mean equals the observed value and
        their covariance rows/columns are zero (Schur complement on the
        hidden block).
        """
        if "cond" not in self._cache:
            if not self.observed_idx:
                self._cache["cond"] = (self.mean.copy(), self.cov.copy())
            else:
                obs = np.asarray(self.observed_idx, dtype=np.intp)
                hid = self.hidden_idx
                v = np.asarray(self.observed_val)
                s_oo = self.cov[np.ix_(obs, obs)]
                s_ho = self.cov[np.ix_(hid, obs)]
                try:
                    f_oo = cho_factor(s_oo, lower=True)
                except LinAlgError as exc:
                    raise InvalidInputError(
                        f"observed covariance block is singular: {exc}") from exc
                gain = cho_solve(f_oo, (v - self.mean[obs]))
                mean_c = self.mean.copy()
                mean_c[hid] = self.mean[hid] + s_ho @ gain
                mean_c[obs] = v
                cov_c = np.zeros_like(self.cov)
                cov_c[np.ix_(hid, hid)] = (
                    self.cov[np.ix_(hid, hid)] - s_ho @ cho_solve(f_oo, s_ho.T)
                )
                self._cache["cond"] = (mean_c, cov_c)
        mean_c, cov_c = self._cache["cond"]
        return mean_c, cov_c

    def _law(self, conditional: bool) -> tuple[np.ndarray, np.ndarray]:
        if conditional and self.observed_idx:
            return self.conditional_moments()
        return self.mean, self.cov

    # -- noised marginals ----------------------------------------------------

    def _marginal(self, k: int, sched: NoiseSchedule, conditional: bool):
        """Factorized covariance of x_k ~ N(sqrt(abar) m', abar Sigma' + (1-abar) I)."""
        abar = sched.alpha_bar_at(k)
        key = ("marg", float(abar), bool(conditional and self.observed_idx))
        if key not in self._cache:
            m, s = self._law(conditional)
            a = abar * s + (1.0 - abar) * np.eye(self.dim)
            self._cache[key] = (math.sqrt(abar) * m, cho_factor(a, lower=True), a)
        return self._cache[key]

    def marginal_moments(self, k: int, sched: NoiseSchedule,
                         conditional: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """(mean, covariance) of the step-k noised marginal."""
        mean_k, _, cov_k = self._marginal(k, sched, conditional)
        return mean_k, cov_k

    def score(self, x_k: np.ndarray, k: int, sched: NoiseSchedule,
              conditional: bool = False) -> np.ndarray:
        """Exact gradient of log p_k at x_k (flat NT vector in, vector out)."""
        x = np.asarray(x_k, dtype=np.float64).reshape(self.dim)
        mean_k, factor, _ = self._marginal(k, sched, conditional)
        return -cho_solve(factor, x - mean_k)

    def marginal_logpdf(self, x_k: np.ndarray, k: int, sched: NoiseSchedule,
                        conditional: bool = False) -> float:
        x = np.asarray(x_k, dtype=np.float64).reshape(self.dim)
        mean_k, factor, _ = self._marginal(k, sched, conditional)
        resid = x - mean_k
        quad = float(resid @ cho_solve(factor, resid))
        logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
        return -0.5 * (quad + logdet + self.dim * _LOG_2PI)

    # -- exact sampling ------------------------------------------------------

    def sample_clean(self, rng: np.random.Generator) -> np.ndarray:
        """One exact draw from the prior N(m, Sigma), as an N x T grid."""
        c, lower = self._cache["chol"]
        z = rng.standard_normal(self.dim)
        return self.flat_to_grid(self.mean + np.tril(c) @ z)

    def sample_conditional_clean(self, rng: np.random.Generator) -> np.ndarray:
        """Exact draw given the observations (observed coordinates pinned)."""
        if not self.observed_idx:
            return self.sample_clean(rng)
        mean_c, cov_c = self.conditional_moments()
        hid = self.hidden_idx
        if "chol_cond_hidden" not in self._cache:
            self._cache["chol_cond_hidden"] = cholesky(
                cov_c[np.ix_(hid, hid)], lower=True)
        out = mean_c.copy()
        out[hid] = out[hid] + self._cache["chol_cond_hidden"] @ rng.standard_normal(hid.size)
        return self.flat_to_grid(out)


def make_gaussian_world(n_nodes: int, n_steps: int, spatial_corr: float,
                        temporal_corr: float, mean: float = 0.0,
                        seed: int = 0) -> GaussianOracleWorld:
    """Kronecker world: Sigma = (rho_s^hops on a ring) x (rho_t^|dt|)."""
    if not (abs(spatial_corr) < 1.0 and abs(temporal_corr) < 1.0):
        raise InvalidInputError(
            f"correlations must satisfy |rho| < 1, got {spatial_corr}, {temporal_corr}"
        )
    if n_nodes < 1 or n_steps < 1:
        raise InvalidInputError("world needs at least one node and one step")
    spatial = np.power(float(spatial_corr), ring_hops(n_nodes)) if n_nodes > 1 \
        else np.ones((1, 1))
    dt = np.abs(np.arange(n_steps)[:, None] - np.arange(n_steps)[None, :])
    temporal = np.power(float(temporal_corr), dt) if n_steps > 1 else np.ones((1, 1))
    # 0^0 corners of the power tables must be 1
    if spatial_corr == 0.0:
        spatial = np.eye(n_nodes)
    if temporal_corr == 0.0:
        temporal = np.eye(n_steps)
    cov = np.kron(spatial, temporal)
    dim = n_nodes * n_steps
    return GaussianOracleWorld(n_nodes, n_steps, np.full(dim, float(mean)), cov,
                               seed=int(seed))


def observations_from_mask(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat (indices, values) of the observed entries (mask == 1), node-major."""
    vals = np.asarray(values, dtype=np.float64)
    m = np.asarray(mask)
    if vals.shape != m.shape:
        raise InvalidInputError(f"values shape {vals.shape} vs mask shape {m.shape}")
    idx = np.flatnonzero(m.reshape(-1) == 1)
    return idx, vals.reshape(-1)[idx]


class _GaussianLaw:
    """Small frozen helper: N(mean, cov) with cached factor for pdf/score."""

    def __init__(self, mean: np.ndarray, cov: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.dim = self.mean.size
        cov = np.asarray(cov, dtype=np.float64).reshape(self.dim, self.dim)
        try:
            self.factor = cho_factor(cov, lower=True)
        except LinAlgError as exc:
            raise InvalidInputError(f"component covariance not SPD: {exc}") from exc
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.factor[0]))))

    def logpdf(self, x: np.ndarray) -> float:
        r = np.asarray(x, dtype=np.float64).reshape(self.dim) - self.mean
        return -0.5 * (float(r @ cho_solve(self.factor, r))
                       + self.logdet + self.dim * _LOG_2PI)

    def score(self, x: np.ndarray) -> np.ndarray:
        r = np.asarray(x, dtype=np.float64).reshape(self.dim) - self.mean
        return -cho_solve(self.factor, r)


def _mixture_triple(prior: _GaussianLaw, cond: _GaussianLaw, pi: float):
    """Score/ratio functions of the contaminated law (1-pi) prior + pi cond."""
    if not (0.0 < pi <= 1.0):
        raise InvalidInputError(f"pi must lie in (0, 1], got {pi}")

    def _log_weights(x):
        # responsibilities via log-sum-exp; exact at pi = 1
        lp = prior.logpdf(x) + (math.log1p(-pi) if pi < 1.0 else -math.inf)
        lq = cond.logpdf(x) + math.log(pi)
        top = max(lp, lq)
        log_mix = top + math.log(math.exp(lp - top) + math.exp(lq - top))
        return lp, lq, log_mix

    def score_contaminated(x):
        if pi == 1.0:
            return cond.score(x)
        lp, lq, log_mix = _log_weights(x)
        w_prior = math.exp(lp - log_mix)
        w_cond = math.exp(lq - log_mix)
        return w_prior * prior.score(x) + w_cond * cond.score(x)

    def score_prior(x):
        return prior.score(x)

    def posterior_ratio(x):
        # p_hat = p(x|c)_model / p(x)_model = mixture density over prior density
        _, _, log_mix = _log_weights(x)
        return math.exp(log_mix - prior.logpdf(x))

    return score_contaminated, score_prior, posterior_ratio


def gaussian_mixture_1d(mean_prior: float, var_prior: float, mean_cond: float,
                        var_cond: float, pi: float):
    """1-D contaminated-Gaussian test bed; returns (score_mix, score_prior, ratio).

    Each returned function maps a scalar (or length-1 vector) to a scalar.
    """
    prior = _GaussianLaw(np.array([mean_prior]), np.array([[var_prior]]))
    cond = _GaussianLaw(np.array([mean_cond]), np.array([[var_cond]]))
    s_mix, s_prior, ratio = _mixture_triple(prior, cond, pi)
    return (lambda x: float(s_mix(np.atleast_1d(float(x)))[0]),
            lambda x: float(s_prior(np.atleast_1d(float(x)))[0]),
            lambda x: float(ratio(np.atleast_1d(float(x)))))


def make_contaminated_scores(world: GaussianOracleWorld, pi_true: float, condition):
    """Exact contaminated triple for a world at the clean-data level.

    ``condition`` is either another GaussianOracleWorld on the same space
    (its law is the conditional component) or an observation set
    ``(indices, values)``; in the latter case all densities are restricted
    to the hidden coordinates, where the conditional law is nondegenerate.
    Returns (score_contaminated, score_prior, posterior_ratio); the ratio is
    p_model(c|x)/p_model(c) from mixture responsibilities.
    """
    if isinstance(condition, GaussianOracleWorld):
        if condition.dim != world.dim:
            raise InvalidInputError("conditional world must live on the same space")
        prior = _GaussianLaw(world.mean, world.cov)
        cond = _GaussianLaw(condition.mean, condition.cov)
        return _mixture_triple(prior, cond, pi_true)
    indices, values = condition
    observed = world.observe(indices, values)
    hid = observed.hidden_idx
    if hid.size == 0:
        raise InvalidInputError("conditioning on every coordinate leaves no free law")
    mean_c, cov_c = observed.conditional_moments()
    prior = _GaussianLaw(world.mean[hid], world.cov[np.ix_(hid, hid)])
    cond = _GaussianLaw(mean_c[hid], cov_c[np.ix_(hid, hid)])
    return _mixture_triple(prior, cond, pi_true)
