"""Small trainable denoiser: temporal attention, then spatial attention.

Desk-scale transformer over the N x T grid. Inputs [x_k, observed, mask]
are lifted to d_model and combined with a sinusoidal diffusion-step
embedding, a sinusoidal time-slice embedding, and a learned per-node
embedding; the node and time embeddings are structural priors that stay in
place for unconditional contexts (only observations and mask are zeroed).
Each block runs per-node attention across time, then per-slice attention
across nodes, then a feed-forward layer, all with residual connections.
The last spatial layer's attention, averaged over heads and time slices,
is exported as the node-affinity matrix used for cluster-aware guidance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .backends import ConditioningContext, DenoiserBackend
from .diffusion import sincos_embedding
from .errors import InvalidInputError, StateError

__all__ = ["NetConfig", "NeuralDenoiser"]

EMBED_DIM = 128  # sinusoidal width for step and time-slice encodings


@dataclass(frozen=True)
class NetConfig:
    n_nodes: int
    d_model: int = 16
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 0  # 0 -> 2*d_model

    def __post_init__(self):
        if self.n_nodes < 1:
            raise InvalidInputError("n_nodes must be >= 1")
        if self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise InvalidInputError("d_model, n_layers, n_heads must be >= 1")
        if self.d_model % self.n_heads != 0:
            raise InvalidInputError(
                f"n_heads {self.n_heads} must divide d_model {self.d_model}"
            )
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 2 * self.d_model)


def _linear_init(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)


class NeuralDenoiser(DenoiserBackend):
    """Noise predictor with learnable weights and exportable spatial attention."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, ad.Tensor] | None = None
        self._init_params(seed)

    @classmethod
    def uninitialized(cls, cfg: NetConfig) -> "NeuralDenoiser":
        """Shell with no weights; predict raises until a checkpoint is loaded."""
        obj = cls.__new__(cls)
        obj.cfg = cfg
        obj.params = None
        return obj

    def _init_params(self, seed: int):
        rng = np.random.Generator(np.random.Philox(key=seed))
        d = self.cfg.d_model
        p: dict[str, ad.Tensor] = {}

        def lin(name, fan_in, fan_out, bias=True):
            p[f"{name}/W"] = ad.parameter(_linear_init(rng, fan_in, fan_out))
            if bias:
                p[f"{name}/b"] = ad.parameter(np.zeros(fan_out))

        lin("in_proj", 3, d)
        lin("step_proj", EMBED_DIM, d)
        lin("time_proj", EMBED_DIM, d)
        p["node_embed"] = ad.parameter(
            rng.standard_normal((self.cfg.n_nodes, d)) / math.sqrt(d))
        for i in range(self.cfg.n_layers):
            for kind in ("temporal", "spatial"):
                for w in ("Wq", "Wk", "Wv", "Wo"):
                    p[f"layer{i}/{kind}/{w}"] = ad.parameter(_linear_init(rng, d, d))
            lin(f"layer{i}/ffn/1", d, self.cfg.d_ff)
            lin(f"layer{i}/ffn/2", self.cfg.d_ff, d)
        lin("head/1", d, d)
        lin("head/2", d, 1)
        # start near zero output so early training is stable
        p["head/2/W"].value = p["head/2/W"].value * 0.01
        self.params = p

    # -- weight plumbing -----------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        if self.params is None:
            raise StateError("denoiser has no weights to export")
        state = {name: t.value.copy() for name, t in self.params.items()}
        state["hparams/n_nodes"] = np.float64(self.cfg.n_nodes)
        state["hparams/d_model"] = np.float64(self.cfg.d_model)
        state["hparams/n_layers"] = np.float64(self.cfg.n_layers)
        state["hparams/n_heads"] = np.float64(self.cfg.n_heads)
        state["hparams/d_ff"] = np.float64(self.cfg.d_ff)
        return state

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray]) -> "NeuralDenoiser":
        try:
            cfg = NetConfig(
                n_nodes=int(state["hparams/n_nodes"]),
                d_model=int(state["hparams/d_model"]),
                n_layers=int(state["hparams/n_layers"]),
                n_heads=int(state["hparams/n_heads"]),
                d_ff=int(state["hparams/d_ff"]),
            )
        except KeyError as exc:
            raise InvalidInputError(f"checkpoint misses hyperparameter {exc}") from exc
        model = cls(cfg, seed=0)
        for name, t in model.params.items():
            if name not in state:
                raise InvalidInputError(f"checkpoint misses tensor {name!r}")
            if state[name].shape != t.value.shape:
                raise InvalidInputError(
                    f"tensor {name!r}: checkpoint shape {state[name].shape}"
                    f" vs model shape {t.value.shape}"
                )
            t.value = np.array(state[name], dtype=np.float64)
        stray = set(state) - set(model.params) - {
            "hparams/n_nodes", "hparams/d_model", "hparams/n_layers",
            "hparams/n_heads", "hparams/d_ff"}
        if stray:
            raise InvalidInputError(f"checkpoint carries unknown tensors {sorted(stray)}")
        return model

    def clone(self) -> "NeuralDenoiser":
        return NeuralDenoiser.from_state_dict(self.state_dict())

    def parameters(self) -> dict[str, ad.Tensor]:
        if self.params is None:
            raise StateError("denoiser weights are uninitialized")
        return self.params

    # -- forward -------------------------------------------------------------

    def _attention(self, h: ad.Tensor, prefix: str) -> tuple[ad.Tensor, np.ndarray]:
        """Multi-head self-attention over axis 1 of (B, L, d); returns probs."""
        p = self.params
        b, length, d = h.shape
        heads = self.cfg.n_heads
        dh = d // heads

        def split(name):
            proj = ad.matmul(h, p[f"{prefix}/{name}"])
            return ad.transpose(ad.reshape(proj, (b, length, heads, dh)), (0, 2, 1, 3))

        q, k, v = split("Wq"), split("Wk"), split("Wv")
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        probs = ad.softmax(scores)  # (B, heads, L, L)
        mixed = ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3))
        out = ad.matmul(ad.reshape(mixed, (b, length, d)), p[f"{prefix}/Wo"])
        return out, probs.value

    def forward_tensor(self, x_k: np.ndarray, k: int,
                       ctx: ConditioningContext) -> tuple[ad.Tensor, np.ndarray]:
        """Build the tape; returns (eps_hat tensor (N,T), attention ndarray (N,N))."""
        if self.params is None:
            raise StateError("denoiser weights are uninitialized; load or train first")
        x = np.asarray(x_k, dtype=np.float64)
        n, t = x.shape
        if n != self.cfg.n_nodes:
            raise InvalidInputError(
                f"model was built for {self.cfg.n_nodes} nodes, got {n}")
        if ctx.observed.shape != (n, t):
            raise InvalidInputError(
                f"context shape {ctx.observed.shape} vs input {x.shape}")
        p = self.params

        feats = np.stack([x, ctx.observed, ctx.mask.astype(np.float64)], axis=-1)
        h = ad.add(ad.matmul(ad.constant(feats), p["in_proj/W"]), p["in_proj/b"])

        step_vec = sincos_embedding(np.array([float(k)]), EMBED_DIM)  # (1, EMBED)
        step_emb = ad.add(ad.matmul(ad.constant(step_vec), p["step_proj/W"]),
                          p["step_proj/b"])
        h = ad.add(h, ad.reshape(step_emb, (1, 1, self.cfg.d_model)))

        time_vec = sincos_embedding(np.arange(t, dtype=np.float64), EMBED_DIM)
        time_emb = ad.add(ad.matmul(ad.constant(time_vec), p["time_proj/W"]),
                          p["time_proj/b"])
        h = ad.add(h, ad.reshape(time_emb, (1, t, self.cfg.d_model)))
        h = ad.add(h, ad.reshape(p["node_embed"], (n, 1, self.cfg.d_model)))

        spatial_probs = None
        for i in range(self.cfg.n_layers):
            attn_out, _ = self._attention(h, f"layer{i}/temporal")
            h = ad.add(h, attn_out)
            h_sp = ad.transpose(h, (1, 0, 2))  # (T, N, d)
            attn_out, spatial_probs = self._attention(h_sp, f"layer{i}/spatial")
            h = ad.transpose(ad.add(h_sp, attn_out), (1, 0, 2))
            ff = ad.add(ad.matmul(h, p[f"layer{i}/ffn/1/W"]), p[f"layer{i}/ffn/1/b"])
            ff = ad.add(ad.matmul(ad.relu(ff), p[f"layer{i}/ffn/2/W"]),
                        p[f"layer{i}/ffn/2/b"])
            h = ad.add(h, ff)

        head = ad.relu(ad.add(ad.matmul(h, p["head/1/W"]), p["head/1/b"]))
        eps = ad.add(ad.matmul(head, p["head/2/W"]), p["head/2/b"])
        eps = ad.reshape(eps, (n, t))
        # (T, heads, N, N) -> row-stochastic (N, N)
        attn = spatial_probs.mean(axis=(0, 1))
        return eps, attn

    def predict(self, x_k, k, ctx):
        eps, attn = self.forward_tensor(x_k, k, ctx)
        return eps.value, attn
