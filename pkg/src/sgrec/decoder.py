"""Deformable transformer decoder stack with pluggable self-attention.

One decoder layer runs self-attention stage(s), deformable cross-attention
against the multi-scale feature maps, and a feed-forward block; every
sublayer is post-norm (layer norm after the residual add). Self-attention
query/key projections see content + positional half of the original query
embedding; value projections see content only.

Self-attention designs:

  previous          full attention, single embedding per group (n_members=1)
  naive             full attention over all n_groups*n_members embeddings
  inter_only        attention over each group's representative (index 0)
                    embedding only; the rest pass through untouched
  inter_then_intra  representative stage, then per-group attention
  intra_then_inter  the same two stages in reverse order

Each stage owns its projection weights and norm; inter and intra stages do
not share parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .queries import GroupQuerySet, reference_points
from .scene import GroupPrediction, PredictionSet
from .tensor import FeatureMapSet, logit, sigmoid, softmax_rows

VARIANTS = ("previous", "naive", "inter_only", "inter_then_intra", "intra_then_inter")
DIVIDED_VARIANTS = ("inter_only", "inter_then_intra", "intra_then_inter")
LN_EPS = 1e-12


@dataclass(frozen=True)
class AttentionDesign:
    variant: str
    heads: int = 8
    head_dim: int | None = None  # defaults to d_model // heads at config time

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attention variant {self.variant!r}")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")

    @property
    def stages(self) -> tuple[str, ...]:
        if self.variant in ("previous", "naive"):
            return ("full",)
        if self.variant == "inter_only":
            return ("inter",)
        if self.variant == "inter_then_intra":
            return ("inter", "intra")
        return ("intra", "inter")


@dataclass(frozen=True)
class DecoderConfig:
    n_layers: int
    d_model: int
    design: AttentionDesign
    n_sample_points: int = 4
    n_levels: int = 4
    ffn_dim: int | None = None

    def __post_init__(self):
        if self.n_layers < 1 or self.n_levels < 1 or self.n_sample_points < 1:
            raise ValueError("n_layers, n_levels, and n_sample_points must be >= 1")
        if self.d_model % self.design.heads != 0:
            raise ValueError("d_model must be divisible by the head count")
        head_dim = self.design.head_dim
        if head_dim is not None and head_dim * self.design.heads != self.d_model:
            raise ValueError("heads * head_dim must equal d_model")
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.d_model)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.design.heads


@dataclass(frozen=True)
class GroupFeatureSet:
    """Decoder output embeddings, (n_groups, n_members, d_model)."""

    features: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.features, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError("group features must be (n_groups, n_members, d_model)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("group features contain non-finite entries")
        object.__setattr__(self, "features", arr)


# --- weight containers --------------------------------------------------------

@dataclass(frozen=True)
class StageWeights:
    """One self-attention stage: projections plus its post-residual norm."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bq: np.ndarray
    bk: np.ndarray
    bv: np.ndarray
    bo: np.ndarray
    norm_gamma: np.ndarray
    norm_beta: np.ndarray


@dataclass(frozen=True)
class CrossAttnWeights:
    off_w: np.ndarray   # (heads, levels, points, 2, d_model)
    off_b: np.ndarray   # (heads, levels, points, 2)
    att_w: np.ndarray   # (heads, levels, points, d_model)
    att_b: np.ndarray   # (heads, levels, points)
    out_w: np.ndarray   # (d_model, d_model)
    out_b: np.ndarray   # (d_model,)
    norm_gamma: np.ndarray
    norm_beta: np.ndarray


@dataclass(frozen=True)
class FfnWeights:
    w1: np.ndarray  # (ffn_dim, d_model)
    b1: np.ndarray
    w2: np.ndarray  # (d_model, ffn_dim)
    b2: np.ndarray
    norm_gamma: np.ndarray
    norm_beta: np.ndarray


@dataclass(frozen=True)
class HeadWeights:
    """Two-hidden-layer perceptron with rectifier units."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray


@dataclass(frozen=True)
class LayerWeights:
    self_stages: dict[str, StageWeights]
    cross: CrossAttnWeights
    ffn: FfnWeights


@dataclass(frozen=True)
class DecoderWeights:
    layers: tuple[LayerWeights, ...]
    ref_proj: np.ndarray  # (2, d_model)
    activity_head: HeadWeights
    size_head: HeadWeights
    point_head: HeadWeights


# --- primitives ---------------------------------------------------------------

def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               eps: float = LN_EPS) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gamma + beta


def multi_head_self_attention(x: np.ndarray, weights: StageWeights, n_heads: int,
                              mask: np.ndarray | None = None,
                              query_pos: np.ndarray | None = None) -> np.ndarray:
    """Scaled dot-product attention over a token set; residual is the caller's job.

    x: (m, d) or batched (b, m, d). mask, if given, is (m, m) boolean with
    True marking allowed key positions; every query row must keep at least
    one key. query_pos is added to the inputs of the query/key projections
    only.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
        if query_pos is not None:
            query_pos = np.asarray(query_pos, dtype=np.float64)[None]
    b, m, d = x.shape
    if d % n_heads != 0:
        raise ValueError("model width must be divisible by the head count")
    hd = d // n_heads

    qk_in = x if query_pos is None else x + query_pos
    q = qk_in @ weights.wq.T + weights.bq
    k = qk_in @ weights.wk.T + weights.bk
    v = x @ weights.wv.T + weights.bv

    def split(t):
        return t.reshape(b, m, n_heads, hd).transpose(0, 2, 1, 3)

    q, k, v = split(q), split(k), split(v)
    scores = q @ k.transpose(0, 1, 3, 2) / math.sqrt(hd)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (m, m):
            raise ValueError(f"mask must have shape ({m}, {m})")
        if not mask.any(axis=1).all():
            raise ValueError("attention mask leaves a query row with no keys")
        scores = np.where(mask, scores, -np.inf)
    attn = softmax_rows(scores)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, m, d)
    out = out @ weights.wo.T + weights.bo
    return out[0] if single else out


def _apply_stage_full(x: np.ndarray, w: StageWeights, n_heads: int,
                      pos: np.ndarray | None) -> np.ndarray:
    """Attention over all embeddings at once (previous/naive designs)."""
    g, m, d = x.shape
    flat = x.reshape(1, g * m, d)
    pflat = None if pos is None else pos.reshape(1, g * m, d)
    out = multi_head_self_attention(flat, w, n_heads, query_pos=pflat)
    return layer_norm(flat + out, w.norm_gamma, w.norm_beta).reshape(g, m, d)


def _apply_stage_inter(x: np.ndarray, w: StageWeights, n_heads: int,
                       pos: np.ndarray | None) -> np.ndarray:
    """Attention over the index-0 representatives; other embeddings pass
    through bit-identical."""
    reps = x[:, 0, :][None]
    prep = None if pos is None else pos[:, 0, :][None]
    out = multi_head_self_attention(reps, w, n_heads, query_pos=prep)
    new_reps = layer_norm(reps + out, w.norm_gamma, w.norm_beta)[0]
    result = x.copy()
    result[:, 0, :] = new_reps
    return result


def _apply_stage_intra(x: np.ndarray, w: StageWeights, n_heads: int,
                       pos: np.ndarray | None) -> np.ndarray:
    """Per-group attention over each group's member embeddings."""
    out = multi_head_self_attention(x, w, n_heads, query_pos=pos)
    return layer_norm(x + out, w.norm_gamma, w.norm_beta)


_STAGE_FN = {"full": _apply_stage_full, "inter": _apply_stage_inter,
             "intra": _apply_stage_intra}


def self_attention_stage(x: np.ndarray, design: AttentionDesign,
                         stages: dict[str, StageWeights],
                         query_pos: np.ndarray | None = None) -> np.ndarray:
    """Run the design's self-attention stage(s) over (n_groups, n_members, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] < 1:
        raise ValueError("embeddings must be (n_groups, n_members >= 1, width)")
    pos = None if query_pos is None else np.asarray(query_pos, dtype=np.float64)
    for stage in design.stages:
        if stage not in stages:
            raise ValueError(f"missing weights for self-attention stage {stage!r}")
        x = _STAGE_FN[stage](x, stages[stage], design.heads, pos)
    return x


def block_diagonal_mask(n_groups: int, n_members: int) -> np.ndarray:
    """Mask allowing attention only within each group's member block."""
    idx = np.repeat(np.arange(n_groups), n_members)
    return idx[:, None] == idx[None, :]


# --- deformable cross-attention -------------------------------------------------

def deformable_cross_attention_batch(queries: np.ndarray, refs: np.ndarray,
                                     maps: FeatureMapSet,
                                     w: CrossAttnWeights) -> np.ndarray:
    """Deformable attention for a batch of query vectors.

    Per head, one 2-D offset per (level, sample point) is predicted linearly
    from the query, attention weights are softmaxed jointly over
    levels * points, and the weighted bilinear samples (offsets normalized by
    each level's size) are averaged over heads and projected.
    """
    queries = np.asarray(queries, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    m = queries.shape[0]
    heads, levels, points = w.att_b.shape
    if levels != len(maps.levels):
        raise ValueError(f"weights expect {levels} feature levels, got {len(maps.levels)}")

    off = np.einsum("hlkcd,md->mhlkc", w.off_w, queries) + w.off_b
    logits = np.einsum("hlkd,md->mhlk", w.att_w, queries) + w.att_b
    attn = softmax_rows(logits.reshape(m, heads, levels * points))
    attn = attn.reshape(m, heads, levels, points)

    acc = np.zeros((m, maps.channels))
    from .tensor import sample_points as _sample
    for li, level in enumerate(maps.levels):
        size = np.array([level.width, level.height], dtype=np.float64)
        pts = refs[:, None, None, :] + off[:, :, li, :, :] / size
        sampled = _sample(level, pts.reshape(-1, 2)).reshape(m, heads, points, -1)
        acc += np.einsum("mhk,mhkc->mc", attn[:, :, li, :], sampled)
    acc /= heads
    return acc @ w.out_w.T + w.out_b


def deformable_cross_attention(query: np.ndarray, ref: np.ndarray,
                               maps: FeatureMapSet, w: CrossAttnWeights) -> np.ndarray:
    """Single-query deformable attention; ref is a normalized (x, y) point."""
    ref = np.asarray(ref, dtype=np.float64).reshape(2)
    if not (0.0 <= ref[0] <= 1.0 and 0.0 <= ref[1] <= 1.0):
        raise ValueError("reference point must lie in [0, 1]^2")
    out = deformable_cross_attention_batch(
        np.asarray(query, dtype=np.float64).reshape(1, -1), ref.reshape(1, 2), maps, w)
    return out[0]


def _ffn(x: np.ndarray, w: FfnWeights) -> np.ndarray:
    hidden = np.maximum(x @ w.w1.T + w.b1, 0.0)
    return hidden @ w.w2.T + w.b2


# --- decoder forward -------------------------------------------------------------

def decoder_forward(queries: GroupQuerySet, maps: FeatureMapSet, cfg: DecoderConfig,
                    weights: DecoderWeights) -> GroupFeatureSet:
    """Run the full decoder stack; output is the content stream (d_model wide)."""
    if queries.d_model != cfg.d_model:
        raise ValueError(f"queries carry d_model={queries.d_model}, config says {cfg.d_model}")
    if cfg.design.variant == "previous" and queries.n_members != 1:
        raise ValueError("the previous design packs each group into one embedding "
                         "(n_members must be 1)")
    if len(weights.layers) != cfg.n_layers:
        raise ValueError(f"weights carry {len(weights.layers)} layers, config says {cfg.n_layers}")
    if len(maps.levels) != cfg.n_levels:
        raise ValueError(f"feature maps carry {len(maps.levels)} levels, config says {cfg.n_levels}")
    if maps.channels != cfg.d_model:
        raise ValueError("feature-map channels must equal d_model")

    g, m = queries.n_groups, queries.n_members
    d = cfg.d_model
    pos = queries.positional_half
    x = queries.content_half.copy()
    refs = reference_points(queries, weights.ref_proj).reshape(g * m, 2)
    pos_flat = pos.reshape(g * m, d)

    for layer in weights.layers:
        x = self_attention_stage(x, cfg.design, layer.self_stages, query_pos=pos)
        flat = x.reshape(g * m, d)
        cross = deformable_cross_attention_batch(flat + pos_flat, refs, maps, layer.cross)
        flat = layer_norm(flat + cross, layer.cross.norm_gamma, layer.cross.norm_beta)
        flat = layer_norm(flat + _ffn(flat, layer.ffn),
                          layer.ffn.norm_gamma, layer.ffn.norm_beta)
        x = flat.reshape(g, m, d)
    return GroupFeatureSet(features=x)


# --- prediction heads -------------------------------------------------------------

def _mlp(x: np.ndarray, w: HeadWeights) -> np.ndarray:
    h = np.maximum(x @ w.w1.T + w.b1, 0.0)
    h = np.maximum(h @ w.w2.T + w.b2, 0.0)
    return h @ w.w3.T + w.b3


def pool_group_features(features: np.ndarray) -> np.ndarray:
    """Mean over the member axis: (..., n_members, d) -> (..., d)."""
    return np.asarray(features, dtype=np.float64).mean(axis=-2)


def predict_activity(pooled: np.ndarray, head: HeadWeights) -> np.ndarray:
    return sigmoid(_mlp(pooled, head))


def predict_size(pooled: np.ndarray, head: HeadWeights) -> np.ndarray:
    return sigmoid(_mlp(pooled, head))[..., 0]


def predict_points(features: np.ndarray, refs: np.ndarray, head: HeadWeights) -> np.ndarray:
    """Member points: logistic(MLP(h) + logit(reference point))."""
    refs = np.clip(np.asarray(refs, dtype=np.float64), 1e-6, 1.0 - 1e-6)
    return sigmoid(_mlp(features, head) + logit(refs))


def forward_predictions(queries: GroupQuerySet, maps: FeatureMapSet, cfg: DecoderConfig,
                        weights: DecoderWeights, image_id: str) -> PredictionSet:
    """Decoder + heads, packaged as a PredictionSet."""
    feats = decoder_forward(queries, maps, cfg, weights).features
    refs = reference_points(queries, weights.ref_proj)
    pooled = pool_group_features(feats)
    activity = predict_activity(pooled, weights.activity_head)
    size = predict_size(pooled, weights.size_head)
    points = predict_points(feats, refs, weights.point_head)
    preds = tuple(
        GroupPrediction(activity_probs=activity[i], size=float(size[i]),
                        member_points=points[i])
        for i in range(queries.n_groups)
    )
    return PredictionSet(image_id=image_id, predictions=preds)


# --- attention cost ---------------------------------------------------------------

def attention_cost(variant: str | AttentionDesign, n_groups: int, n_members: int) -> int:
    """Number of query-key score pairs one self-attention stage pass computes."""
    if isinstance(variant, AttentionDesign):
        variant = variant.variant
    if variant not in VARIANTS:
        raise ValueError(f"unknown attention variant {variant!r}")
    if n_groups < 1 or n_members < 1:
        raise ValueError("counts must be >= 1")
    if variant in ("previous", "naive"):
        return (n_groups * n_members) ** 2
    if variant == "inter_only":
        return n_groups ** 2
    return n_groups ** 2 + n_groups * n_members ** 2


# --- weight init and manifest round-trip --------------------------------------------

def _stage_entries(prefix: str, norm_prefix: str) -> list[tuple[str, str]]:
    names = [(f"{prefix}.{p}", p) for p in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")]
    names += [(f"{norm_prefix}.gamma", "norm_gamma"), (f"{norm_prefix}.beta", "norm_beta")]
    return names


def _stage_shapes(d: int) -> dict[str, tuple[int, ...]]:
    return {"wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "bq": (d,), "bk": (d,), "bv": (d,), "bo": (d,),
            "norm_gamma": (d,), "norm_beta": (d,)}


def _cross_shapes(cfg: DecoderConfig) -> dict[str, tuple[int, ...]]:
    h, l, k, d = cfg.design.heads, cfg.n_levels, cfg.n_sample_points, cfg.d_model
    return {"off_w": (h, l, k, 2, d), "off_b": (h, l, k, 2),
            "att_w": (h, l, k, d), "att_b": (h, l, k),
            "out_w": (d, d), "out_b": (d,),
            "norm_gamma": (d,), "norm_beta": (d,)}


def _ffn_shapes(cfg: DecoderConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.ffn_dim
    return {"w1": (f, d), "b1": (f,), "w2": (d, f), "b2": (d,),
            "norm_gamma": (d,), "norm_beta": (d,)}


def _head_shapes(d: int, out: int) -> dict[str, tuple[int, ...]]:
    return {"w1": (d, d), "b1": (d,), "w2": (d, d), "b2": (d,),
            "w3": (out, d), "b3": (out,)}


def manifest_layout(cfg: DecoderConfig, n_classes: int) -> dict[str, tuple[int, ...]]:
    """Every manifest entry name and shape for a decoder of this config."""
    layout: dict[str, tuple[int, ...]] = {"query.ref_proj": (2, cfg.d_model)}
    stage_shapes = _stage_shapes(cfg.d_model)
    for n in range(cfg.n_layers):
        base = f"decoder.layer{n}"
        for stage in cfg.design.stages:
            for name, field in _stage_entries(f"{base}.selfattn.{stage}",
                                              f"{base}.norm.selfattn_{stage}"):
                layout[name] = stage_shapes[field]
        for field, shape in _cross_shapes(cfg).items():
            if field.startswith("norm_"):
                layout[f"{base}.norm.crossattn.{field.removeprefix('norm_')}"] = shape
            else:
                layout[f"{base}.crossattn.{field}"] = shape
        for field, shape in _ffn_shapes(cfg).items():
            if field.startswith("norm_"):
                layout[f"{base}.norm.ffn.{field.removeprefix('norm_')}"] = shape
            else:
                layout[f"{base}.ffn.{field}"] = shape
    for head, out in (("activity", n_classes), ("size", 1), ("point", 2)):
        for field, shape in _head_shapes(cfg.d_model, out).items():
            layout[f"head.{head}.{field}"] = shape
    return layout


def init_decoder_entries(cfg: DecoderConfig, n_classes: int, seed: int) -> dict[str, np.ndarray]:
    """Seeded manifest entries: uniform(+-1/sqrt(fan_in)); norms at identity."""
    entries = {}
    for name, shape in manifest_layout(cfg, n_classes).items():
        if name.endswith(".gamma"):
            entries[name] = np.ones(shape)
        elif name.endswith(".beta") or name.endswith(".off_b"):
            entries[name] = np.zeros(shape)
        else:
            fan_in = shape[-1] if len(shape) > 1 else max(shape[0], 1)
            entries[name] = rng.init_uniform(seed, name, shape, 1.0 / math.sqrt(fan_in))
    return entries


def _pick(entries: dict[str, np.ndarray], name: str, shape: tuple[int, ...]) -> np.ndarray:
    if name not in entries:
        raise ValueError(f"weights manifest is missing {name!r}")
    arr = np.asarray(entries[name], dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name}: manifest shape {arr.shape} != expected {shape}")
    return arr


def decoder_weights_from_entries(entries: dict[str, np.ndarray], cfg: DecoderConfig,
                                 n_classes: int) -> DecoderWeights:
    """Assemble structured weights from flat manifest entries, with shape checks."""
    stage_shapes = _stage_shapes(cfg.d_model)
    layers = []
    for n in range(cfg.n_layers):
        base = f"decoder.layer{n}"
        stages = {}
        for stage in cfg.design.stages:
            kwargs = {field: _pick(entries, name, stage_shapes[field])
                      for name, field in _stage_entries(f"{base}.selfattn.{stage}",
                                                        f"{base}.norm.selfattn_{stage}")}
            stages[stage] = StageWeights(**kwargs)
        cross_kwargs = {}
        for field, shape in _cross_shapes(cfg).items():
            if field.startswith("norm_"):
                name = f"{base}.norm.crossattn.{field.removeprefix('norm_')}"
            else:
                name = f"{base}.crossattn.{field}"
            cross_kwargs[field] = _pick(entries, name, shape)
        ffn_kwargs = {}
        for field, shape in _ffn_shapes(cfg).items():
            if field.startswith("norm_"):
                name = f"{base}.norm.ffn.{field.removeprefix('norm_')}"
            else:
                name = f"{base}.ffn.{field}"
            ffn_kwargs[field] = _pick(entries, name, shape)
        layers.append(LayerWeights(self_stages=stages, cross=CrossAttnWeights(**cross_kwargs),
                                   ffn=FfnWeights(**ffn_kwargs)))
    heads = {}
    for head, out in (("activity", n_classes), ("size", 1), ("point", 2)):
        kwargs = {field: _pick(entries, f"head.{head}.{field}", shape)
                  for field, shape in _head_shapes(cfg.d_model, out).items()}
        heads[head] = HeadWeights(**kwargs)
    return DecoderWeights(
        layers=tuple(layers),
        ref_proj=_pick(entries, "query.ref_proj", (2, cfg.d_model)),
        activity_head=heads["activity"],
        size_head=heads["size"],
        point_head=heads["point"],
    )


def init_decoder_weights(cfg: DecoderConfig, n_classes: int, seed: int) -> DecoderWeights:
    return decoder_weights_from_entries(init_decoder_entries(cfg, n_classes, seed),
                                        cfg, n_classes)


def zeroed_stage(d: int) -> StageWeights:
    """Stage weights whose attention branch contributes exactly zero."""
    zero_m, zero_v = np.zeros((d, d)), np.zeros(d)
    return StageWeights(wq=zero_m, wk=zero_m, wv=zero_m, wo=zero_m,
                        bq=zero_v, bk=zero_v, bv=zero_v, bo=zero_v,
                        norm_gamma=np.ones(d), norm_beta=np.zeros(d))
