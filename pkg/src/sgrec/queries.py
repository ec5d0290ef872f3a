"""Group query construction and per-embedding reference points.

A group query is a sequence of n_members embeddings jointly responsible for
one group; embedding width is twice the model width, split into a positional
half (drives reference points and attention query/key terms) and a content
half (initial decoder input). Queries come in two flavors:

  naive      - every (group, member) embedding is its own parameter.
  decomposed - embedding = per-group location query + shared layout query,
               which cuts the parameter count from n_groups*n_members*width
               to (n_groups+n_members)*width.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import rng
from .tensor import sigmoid

MODES = ("naive", "decomposed")


@dataclass(frozen=True)
class GroupQuerySet:
    mode: str
    n_groups: int
    n_members: int
    width: int
    queries: np.ndarray                      # (n_groups, n_members, width)
    location_queries: np.ndarray | None = None  # (n_groups, width)
    layout_queries: np.ndarray | None = None    # (n_members, width)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown query mode {self.mode!r}")
        expected = (self.n_groups, self.n_members, self.width)
        if self.queries.shape != expected:
            raise ValueError(f"queries shape {self.queries.shape} != {expected}")
        if self.width % 2 != 0:
            raise ValueError("query width must be even (positional + content halves)")

    @property
    def param_count(self) -> int:
        """Learnable scalars backing this query set."""
        if self.mode == "naive":
            return self.n_groups * self.n_members * self.width
        return (self.n_groups + self.n_members) * self.width

    @property
    def d_model(self) -> int:
        return self.width // 2

    @property
    def positional_half(self) -> np.ndarray:
        return self.queries[..., : self.d_model]

    @property
    def content_half(self) -> np.ndarray:
        return self.queries[..., self.d_model:]


def compose_group_queries(mode: str, n_groups: int, n_members: int, width: int,
                          seed: int | None = None,
                          manifest: Mapping[str, np.ndarray] | None = None) -> GroupQuerySet:
    """Build a query set from a seed or from manifest tensors.

    Manifest entries: "query.naive" (naive mode) or "query.location" and
    "query.layout" (decomposed mode). Exactly one of seed/manifest is used;
    manifest wins when both are given.
    """
    if mode not in MODES:
        raise ValueError(f"unknown query mode {mode!r}")
    if min(n_groups, n_members, width) < 1:
        raise ValueError("n_groups, n_members, and width must all be >= 1")
    if manifest is None and seed is None:
        raise ValueError("either a seed or a weights manifest is required")

    scale = 1.0 / np.sqrt(width)

    def fetch(name: str, shape: tuple[int, ...]) -> np.ndarray:
        if manifest is not None:
            if name not in manifest:
                raise ValueError(f"weights manifest is missing {name!r}")
            arr = np.asarray(manifest[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: manifest shape {arr.shape} != expected {shape}")
            return arr
        return rng.init_uniform(seed, name, shape, scale)

    if mode == "naive":
        queries = fetch("query.naive", (n_groups, n_members, width))
        return GroupQuerySet(mode, n_groups, n_members, width, queries)

    location = fetch("query.location", (n_groups, width))
    layout = fetch("query.layout", (n_members, width))
    queries = location[:, None, :] + layout[None, :, :]
    return GroupQuerySet(mode, n_groups, n_members, width, queries,
                         location_queries=location, layout_queries=layout)


def reference_points(qs: GroupQuerySet, proj: np.ndarray) -> np.ndarray:
    """Per-embedding reference points in (0, 1)^2.

    The positional half of each query embedding is projected to 2 logits and
    squashed by the logistic function: (n_groups, n_members, 2).
    """
    proj = np.asarray(proj, dtype=np.float64)
    if proj.shape != (2, qs.d_model):
        raise ValueError(f"reference projection must have shape (2, {qs.d_model})")
    return sigmoid(qs.positional_half @ proj.T)
