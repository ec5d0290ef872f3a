"""Self-attention cost accounting and wall-time measurement.

Score-pair counts are exact closed forms; wall times are medians over
repeated runs of the actual stage implementations on seeded inputs.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from . import rng
from .decoder import (AttentionDesign, StageWeights, attention_cost,
                      self_attention_stage)

_BENCH_STAGES = ("full", "inter", "intra")


@dataclass(frozen=True)
class BenchRow:
    design: str
    n_groups: int
    n_members: int
    score_pairs: int
    median_seconds: float | None = None


def _stage_weights(d_model: int, seed: int, stage: str) -> StageWeights:
    scale = 1.0 / np.sqrt(d_model)
    def w(name, shape):
        return rng.init_uniform(seed, f"bench.{stage}.{name}", shape, scale)
    return StageWeights(
        wq=w("wq", (d_model, d_model)), wk=w("wk", (d_model, d_model)),
        wv=w("wv", (d_model, d_model)), wo=w("wo", (d_model, d_model)),
        bq=w("bq", (d_model,)), bk=w("bk", (d_model,)),
        bv=w("bv", (d_model,)), bo=w("bo", (d_model,)),
        norm_gamma=np.ones(d_model), norm_beta=np.zeros(d_model),
    )


def bench_stage_weights(d_model: int, seed: int) -> dict[str, StageWeights]:
    return {stage: _stage_weights(d_model, seed, stage) for stage in _BENCH_STAGES}


def time_self_attention(variant: str, n_groups: int, n_members: int, d_model: int,
                        heads: int = 8, repeats: int = 3, seed: int = 0) -> float:
    """Median wall seconds of one self-attention stage pass."""
    design = AttentionDesign(variant=variant, heads=heads)
    stages = bench_stage_weights(d_model, seed)
    x = rng.uniform(rng.derive_seed(seed, "bench.x"),
                    (n_groups, n_members, d_model), -1.0, 1.0)
    pos = rng.uniform(rng.derive_seed(seed, "bench.pos"),
                      (n_groups, n_members, d_model), -1.0, 1.0)
    self_attention_stage(x, design, stages, query_pos=pos)  # warm-up
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        self_attention_stage(x, design, stages, query_pos=pos)
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def run_benchmark(designs: list[str], sizes: list[tuple[int, int]], d_model: int,
                  heads: int = 8, repeats: int = 3, seed: int = 0) -> list[BenchRow]:
    """Score-pair counts (always) and wall-time medians (when repeats > 0)."""
    rows = []
    for n_groups, n_members in sizes:
        for variant in designs:
            pairs = attention_cost(variant, n_groups, n_members)
            median = None
            if repeats > 0:
                median = time_self_attention(variant, n_groups, n_members, d_model,
                                             heads=heads, repeats=repeats, seed=seed)
            rows.append(BenchRow(design=variant, n_groups=n_groups,
                                 n_members=n_members, score_pairs=pairs,
                                 median_seconds=median))
    return rows
