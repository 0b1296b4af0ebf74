"""Block missingness patterns for evaluation.

Both patterns mask temporally contiguous patches of length T (the final
patch may be ragged). SR-TC draws one Bernoulli per (node, patch); SC-TC
draws one per (patch, community) so all member nodes share identical zero
runs. Masks are bit-reproducible: draws come from a counter-based Philox
generator keyed by the config seed, consumed as a single uniform array in
row-major order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .grid import GraphSpec, MaskMatrix

__all__ = ["MaskPatternConfig", "mask_sr_tc", "mask_sc_tc", "patch_bounds"]

PATTERNS = ("SR-TC", "SC-TC")


@dataclass(frozen=True)
class MaskPatternConfig:
    pattern: str
    missing_rate: float
    patch_length: int
    n_communities: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise InvalidInputError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if not (0.0 <= self.missing_rate <= 1.0):
            raise InvalidInputError(f"missing_rate must lie in [0, 1], got {self.missing_rate}")
        if self.patch_length < 1:
            raise InvalidInputError(f"patch_length must be >= 1, got {self.patch_length}")
        if self.n_communities is not None and self.n_communities < 1:
            raise InvalidInputError(f"n_communities must be >= 1, got {self.n_communities}")


def patch_bounds(length: int, patch_length: int) -> list[tuple[int, int]]:
    """Column ranges of the ceil(L/T) patches; the last may be shorter."""
    n_patches = math.ceil(length / patch_length)
    return [
        (p * patch_length, min((p + 1) * patch_length, length)) for p in range(n_patches)
    ]


def _check_length(length: int, cfg: MaskPatternConfig):
    if length < cfg.patch_length:
        raise InvalidInputError(
            f"series length {length} shorter than patch length {cfg.patch_length}"
        )


def mask_sr_tc(n_nodes: int, length: int, cfg: MaskPatternConfig) -> MaskMatrix:
    """Independent (node, patch) masking with probability missing_rate."""
    _check_length(length, cfg)
    bounds = patch_bounds(length, cfg.patch_length)
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    hit = rng.random((n_nodes, len(bounds))) < cfg.missing_rate
    entries = np.ones((n_nodes, length), dtype=np.int64)
    for p, (lo, hi) in enumerate(bounds):
        entries[hit[:, p], lo:hi] = 0
    return MaskMatrix(entries)


def _communities(graph: GraphSpec, cfg: MaskPatternConfig) -> list[tuple[int, ...]]:
    if graph.node_communities is not None:
        return [tuple(c) for c in graph.node_communities]
    if cfg.n_communities is None:
        raise InvalidInputError(
            "SC-TC needs node_communities on the graph or n_communities in the config"
        )
    if cfg.n_communities > graph.n_nodes:
        raise InvalidInputError(
            f"n_communities {cfg.n_communities} exceeds node count {graph.n_nodes}"
        )
    # paper leaves community formation open; cluster adjacency profiles
    from .clustering import kmeans

    labels, _ = kmeans(np.asarray(graph.adjacency, dtype=np.float64),
                       cfg.n_communities, seed=cfg.seed)
    groups: dict[int, list[int]] = {}
    for node, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(node)
    return [tuple(groups[lab]) for lab in sorted(groups)]


def mask_sc_tc(graph: GraphSpec, length: int, cfg: MaskPatternConfig) -> MaskMatrix:
    """Community-synchronized masking: one draw per (patch, community) block."""
    _check_length(length, cfg)
    comms = _communities(graph, cfg)
    bounds = patch_bounds(length, cfg.patch_length)
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    hit = rng.random((len(bounds), len(comms))) < cfg.missing_rate
    entries = np.ones((graph.n_nodes, length), dtype=np.int64)
    for p, (lo, hi) in enumerate(bounds):
        for c, members in enumerate(comms):
            if hit[p, c]:
                entries[list(members), lo:hi] = 0
    return MaskMatrix(entries)
