"""Attention-based motion and appearance branches with analytic gradients.

Both branches run a stack of pre-layer-norm transformer blocks over a token
set holding one feature vector per (pedestrian, lag); sinusoidal temporal
embeddings distinguish the lags. The motion branch adds a linear head to 2D
motion offsets, consumed for lags 1..K; the appearance branch emits the
transformed features for all lags. Gradients are derived by hand for this
fixed architecture (no autodiff), so the feed-forward activation is an exact
erf-based GELU to keep finite-difference checks meaningful.

Losses:
* l_det  - mean squared error between predicted and target occupancy maps
* l_tmc  - mean Euclidean error between predicted motions and true offsets
* l_tac  - mean negative log-likelihood of the correct identity under the
           per-lag softmax over appearance-feature dot products
* l_all  - uncertainty-weighted sum with learnable log-variance weights
           w1..w3: exp(-w1)*l_det + exp(-w2)*l_tmc + exp(-w3)*l_tac
           + w1 + w2 + w3
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .geometry import OccupancyMap

LN_EPS = 1e-6
SAFE_NORM = 1e-12


class TrainingDivergedError(RuntimeError):
    """Raised when the total loss stops being finite."""


def temporal_embedding(lag: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a lag index; component 2i = sin, 2i+1 = cos."""
    if lag < 0:
        raise ValueError("lag must be non-negative")
    if dim < 2 or dim % 2:
        raise ValueError("embedding dimension must be even and >= 2")
    i = np.arange(dim // 2, dtype=np.float64)
    angle = lag / np.power(10000.0, 2.0 * i / dim)
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


@dataclass
class TokenSet:
    """Features plus (pedestrian, lag) bookkeeping; lags within [0, K]."""

    features: np.ndarray  # (T, E), temporal embeddings already added
    pedestrian_index: np.ndarray  # (T,) int
    lags: np.ndarray  # (T,) int

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or len(self.pedestrian_index) != len(self.features):
            raise ValueError("token arrays misaligned")
        if len(self.lags) != len(self.features):
            raise ValueError("token arrays misaligned")

    def __len__(self) -> int:
        return len(self.features)

    @classmethod
    def build(
        cls,
        raw_features: Sequence[np.ndarray],
        pedestrian_index: Sequence[int],
        lags: Sequence[int],
    ) -> "TokenSet":
        feats = np.array([np.asarray(f, dtype=np.float64) for f in raw_features])
        lag_arr = np.asarray(lags, dtype=np.int64)
        dim = feats.shape[1]
        for lag in np.unique(lag_arr):
            feats[lag_arr == lag] += temporal_embedding(int(lag), dim)
        return cls(feats, np.asarray(pedestrian_index, dtype=np.int64), lag_arr)


# ---------------------------------------------------------------------------
# Parameters


@dataclass
class BlockParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ff_w1: np.ndarray
    ff_b1: np.ndarray
    ff_w2: np.ndarray
    ff_b2: np.ndarray
    ln1_scale: np.ndarray
    ln1_shift: np.ndarray
    ln2_scale: np.ndarray
    ln2_shift: np.ndarray


@dataclass
class StackParams:
    blocks: list[BlockParams]
    num_heads: int
    head_weight: Optional[np.ndarray] = None  # (E, 2) for the motion head
    head_bias: Optional[np.ndarray] = None


@dataclass
class BranchParams:
    """All trainable state: two attention stacks plus uncertainty weights."""

    motion: StackParams
    appearance: StackParams
    w1: np.ndarray  # 0-d arrays so updates mutate in place like every tensor
    w2: np.ndarray
    w3: np.ndarray

    @property
    def embed_dim(self) -> int:
        return self.motion.blocks[0].wq.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        """Name -> live array for every trainable tensor."""
        out: dict[str, np.ndarray] = {}
        for branch, stack in (("motion", self.motion), ("appearance", self.appearance)):
            for b, blk in enumerate(stack.blocks):
                for name in (
                    "wq", "wk", "wv", "wo",
                    "ff_w1", "ff_b1", "ff_w2", "ff_b2",
                    "ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift",
                ):
                    out[f"{branch}.block{b}.{name}"] = getattr(blk, name)
            if stack.head_weight is not None:
                out[f"{branch}.head_weight"] = stack.head_weight
                out[f"{branch}.head_bias"] = stack.head_bias
        out["w1"] = self.w1
        out["w2"] = self.w2
        out["w3"] = self.w3
        return out

    def copy(self) -> "BranchParams":
        def copy_stack(stack: StackParams) -> StackParams:
            return StackParams(
                blocks=[
                    BlockParams(**{k: v.copy() for k, v in vars(blk).items()})
                    for blk in stack.blocks
                ],
                num_heads=stack.num_heads,
                head_weight=None if stack.head_weight is None else stack.head_weight.copy(),
                head_bias=None if stack.head_bias is None else stack.head_bias.copy(),
            )

        return BranchParams(
            motion=copy_stack(self.motion),
            appearance=copy_stack(self.appearance),
            w1=self.w1.copy(),
            w2=self.w2.copy(),
            w3=self.w3.copy(),
        )


def _init_block(rng: np.random.Generator, embed_dim: int, ff_dim: int) -> BlockParams:
    scale = embed_dim**-0.5
    return BlockParams(
        wq=rng.normal(0.0, scale, (embed_dim, embed_dim)),
        wk=rng.normal(0.0, scale, (embed_dim, embed_dim)),
        wv=rng.normal(0.0, scale, (embed_dim, embed_dim)),
        wo=rng.normal(0.0, scale, (embed_dim, embed_dim)),
        ff_w1=rng.normal(0.0, scale, (embed_dim, ff_dim)),
        ff_b1=np.zeros(ff_dim),
        ff_w2=rng.normal(0.0, ff_dim**-0.5, (ff_dim, embed_dim)),
        ff_b2=np.zeros(embed_dim),
        ln1_scale=np.ones(embed_dim),
        ln1_shift=np.zeros(embed_dim),
        ln2_scale=np.ones(embed_dim),
        ln2_shift=np.zeros(embed_dim),
    )


def init_params(
    embed_dim: int,
    num_heads: int = 4,
    num_blocks: int = 1,
    ff_dim: Optional[int] = None,
    seed: int = 0,
) -> BranchParams:
    if embed_dim % num_heads:
        raise ValueError("num_heads must divide embed_dim")
    ff = ff_dim if ff_dim is not None else 2 * embed_dim
    rng = np.random.default_rng(seed)
    motion = StackParams(
        blocks=[_init_block(rng, embed_dim, ff) for _ in range(num_blocks)],
        num_heads=num_heads,
        head_weight=np.zeros((embed_dim, 2)),
        head_bias=np.zeros(2),
    )
    appearance = StackParams(
        blocks=[_init_block(rng, embed_dim, ff) for _ in range(num_blocks)],
        num_heads=num_heads,
    )
    return BranchParams(motion, appearance, np.array(0.0), np.array(0.0), np.array(0.0))


def zero_grads(params: BranchParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.tensors().items()}


# ---------------------------------------------------------------------------
# Forward / backward primitives


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return scale * xhat + shift, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, scale: np.ndarray, cache):
    xhat, inv = cache
    dscale = (dy * xhat).sum(axis=0)
    dshift = dy.sum(axis=0)
    dxhat = dy * scale
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dscale, dshift


def _split_heads(x: np.ndarray, num_heads: int) -> np.ndarray:
    t, e = x.shape
    return x.reshape(t, num_heads, e // num_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def attention_layer(blk: BlockParams, x: np.ndarray, num_heads: int):
    """Multi-head self-attention sublayer (no residual); returns (out, cache)."""
    q = _split_heads(x @ blk.wq, num_heads)
    k = _split_heads(x @ blk.wk, num_heads)
    v = _split_heads(x @ blk.wv, num_heads)
    dh = q.shape[-1]
    scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    z = _merge_heads(weights @ v)
    out = z @ blk.wo
    cache = (x, q, k, v, weights, z)
    return out, cache


def _attention_backward(blk: BlockParams, num_heads: int, d_out: np.ndarray, cache):
    x, q, k, v, weights, z = cache
    dh = q.shape[-1]
    grads = {}
    grads["wo"] = z.T @ d_out
    dz = _split_heads(d_out @ blk.wo.T, num_heads)
    da = dz @ v.transpose(0, 2, 1)
    dv = weights.transpose(0, 2, 1) @ dz
    ds = weights * (da - (da * weights).sum(axis=-1, keepdims=True))
    ds /= math.sqrt(dh)
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q
    dq_m, dk_m, dv_m = (_merge_heads(a) for a in (dq, dk, dv))
    grads["wq"] = x.T @ dq_m
    grads["wk"] = x.T @ dk_m
    grads["wv"] = x.T @ dv_m
    dx = dq_m @ blk.wq.T + dk_m @ blk.wk.T + dv_m @ blk.wv.T
    return dx, grads


def _dropout_mask(shape, rate: float, rng: Optional[np.random.Generator]):
    # Inverted dropout; None means the identity (also the inference path).
    if rate <= 0.0:
        return None
    if rng is None:
        raise ValueError("dropout needs a random generator")
    return (rng.uniform(size=shape) >= rate) / (1.0 - rate)


def _block_forward(
    blk: BlockParams,
    x: np.ndarray,
    num_heads: int,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
):
    y1, ln1_cache = _layer_norm(x, blk.ln1_scale, blk.ln1_shift)
    attn, attn_cache = attention_layer(blk, y1, num_heads)
    attn_mask = _dropout_mask(attn.shape, dropout_rate, rng)
    if attn_mask is not None:
        attn = attn * attn_mask
    x2 = x + attn
    y2, ln2_cache = _layer_norm(x2, blk.ln2_scale, blk.ln2_shift)
    pre = y2 @ blk.ff_w1 + blk.ff_b1
    act = _gelu(pre)
    ff = act @ blk.ff_w2 + blk.ff_b2
    ff_mask = _dropout_mask(ff.shape, dropout_rate, rng)
    if ff_mask is not None:
        ff = ff * ff_mask
    x3 = x2 + ff
    cache = (ln1_cache, attn_cache, ln2_cache, y2, pre, act, attn_mask, ff_mask)
    return x3, cache


def _block_backward(blk: BlockParams, num_heads: int, d_out: np.ndarray, cache):
    ln1_cache, attn_cache, ln2_cache, y2, pre, act, attn_mask, ff_mask = cache
    grads = {}
    d_ff_out = d_out if ff_mask is None else d_out * ff_mask
    grads["ff_w2"] = act.T @ d_ff_out
    grads["ff_b2"] = d_ff_out.sum(axis=0)
    d_pre = (d_ff_out @ blk.ff_w2.T) * _gelu_grad(pre)
    grads["ff_w1"] = y2.T @ d_pre
    grads["ff_b1"] = d_pre.sum(axis=0)
    dy2 = d_pre @ blk.ff_w1.T
    dx2_ln, grads["ln2_scale"], grads["ln2_shift"] = _layer_norm_backward(
        dy2, blk.ln2_scale, ln2_cache
    )
    dx2 = d_out + dx2_ln
    d_attn = dx2 if attn_mask is None else dx2 * attn_mask
    dy1, attn_grads = _attention_backward(blk, num_heads, d_attn, attn_cache)
    grads.update(attn_grads)
    dx_ln, grads["ln1_scale"], grads["ln1_shift"] = _layer_norm_backward(
        dy1, blk.ln1_scale, ln1_cache
    )
    dx = dx2 + dx_ln
    return dx, grads


def stack_forward(
    stack: StackParams,
    x: np.ndarray,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
):
    caches = []
    for blk in stack.blocks:
        x, cache = _block_forward(blk, x, stack.num_heads, dropout_rate, rng)
        caches.append(cache)
    return x, caches


def _stack_backward(
    stack: StackParams, d_out: np.ndarray, caches, grads: dict[str, np.ndarray], prefix: str
) -> np.ndarray:
    for b in reversed(range(len(stack.blocks))):
        d_out, block_grads = _block_backward(
            stack.blocks[b], stack.num_heads, d_out, caches[b]
        )
        for name, g in block_grads.items():
            grads[f"{prefix}.block{b}.{name}"] += g
    return d_out


def motion_branch_forward(params: BranchParams, tokens: TokenSet) -> np.ndarray:
    """Predicted motions, one 2-vector per token (rows for lag 0 are unused)."""
    out, _ = stack_forward(params.motion, tokens.features)
    return out @ params.motion.head_weight + params.motion.head_bias


def appearance_branch_forward(params: BranchParams, tokens: TokenSet) -> np.ndarray:
    """Transformed appearance features, one E-vector per token."""
    out, _ = stack_forward(params.appearance, tokens.features)
    return out


# ---------------------------------------------------------------------------
# Losses


@dataclass(frozen=True)
class LossReport:
    l_det: float
    l_tmc: float
    l_tac: float
    l_all: float


def loss_det(
    predicted: Sequence[OccupancyMap], target: Sequence[OccupancyMap]
) -> float:
    """Mean squared error averaged over the window's maps and cells."""
    if len(predicted) != len(target) or not predicted:
        raise ValueError("need equal, non-empty map sequences")
    total = 0.0
    for pred, tgt in zip(predicted, target):
        if pred.values.shape != tgt.values.shape:
            raise ValueError("occupancy map shapes differ")
        total += float(np.mean((pred.values - tgt.values) ** 2))
    return total / len(predicted)


def loss_tmc(motions: np.ndarray, gt_offsets: np.ndarray) -> float:
    """Mean Euclidean distance between predicted motions and true offsets."""
    if motions.shape != gt_offsets.shape:
        raise ValueError("motion and offset index sets differ")
    return float(np.mean(np.linalg.norm(motions - gt_offsets, axis=-1)))


def _tac_logits(features: np.ndarray, tokens: TokenSet, lag: int):
    """Query/candidate index arrays and logits for one lag; rows sorted by ped."""
    q_idx = np.nonzero(tokens.lags == 0)[0]
    c_idx = np.nonzero(tokens.lags == lag)[0]
    q_idx = q_idx[np.argsort(tokens.pedestrian_index[q_idx])]
    c_idx = c_idx[np.argsort(tokens.pedestrian_index[c_idx])]
    logits = features[q_idx] @ features[c_idx].T
    return q_idx, c_idx, logits


def loss_tac(features: np.ndarray, tokens: TokenSet) -> float:
    """Mean NLL of the correct identity under per-lag softmax similarity.

    Requires a full token grid: one token per (pedestrian, lag) for lags
    0..K over a fixed pedestrian set.
    """
    lags = np.unique(tokens.lags)
    past_lags = lags[lags > 0]
    if len(past_lags) == 0:
        raise ValueError("need at least one past lag")
    n = int((tokens.lags == 0).sum())
    total = 0.0
    for lag in past_lags:
        q_idx, c_idx, logits = _tac_logits(features, tokens, int(lag))
        if len(q_idx) != n or len(c_idx) != n:
            raise ValueError("token grid is ragged; loss_tac needs full windows")
        logits = logits - logits.max(axis=1, keepdims=True)
        log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        total += -float(np.trace(log_probs)) / n
    return total / len(past_lags)


def loss_all(
    l_det: float, l_tmc: float, l_tac: float, w1: float, w2: float, w3: float
) -> float:
    """Uncertainty-weighted total with learnable balance weights."""
    return (
        math.exp(-w1) * l_det
        + math.exp(-w2) * l_tmc
        + math.exp(-w3) * l_tac
        + w1
        + w2
        + w3
    )


# ---------------------------------------------------------------------------
# Full forward/backward over a training batch


@dataclass(frozen=True)
class TrainingBatch:
    """One sliding window: full token grid, true offsets, detection loss.

    gt_offsets[n, k-1] is the true displacement from lag k to the current
    frame for pedestrian n. l_det is precomputed from the window's occupancy
    maps; it does not depend on branch parameters.
    """

    tokens: TokenSet
    gt_offsets: np.ndarray  # (N, K, 2)
    l_det: float

    @property
    def num_peds(self) -> int:
        return self.gt_offsets.shape[0]

    @property
    def num_lags(self) -> int:
        return self.gt_offsets.shape[1]


def forward_backward(
    params: BranchParams,
    batch: TrainingBatch,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> tuple[LossReport, dict[str, np.ndarray]]:
    """Losses plus exact gradients of l_all for every parameter tensor.

    With dropout enabled the gradients are exact for the sampled masks, but
    repeated calls resample masks, so finite-difference checks only apply at
    dropout_rate 0.
    """
    tokens = batch.tokens
    n, k_max = batch.num_peds, batch.num_lags
    grads = zero_grads(params)

    # Motion branch.
    m_out, m_caches = stack_forward(params.motion, tokens.features, dropout_rate, rng)
    motions_all = m_out @ params.motion.head_weight + params.motion.head_bias
    sel_rows = []
    offsets = []
    for lag in range(1, k_max + 1):
        idx = np.nonzero(tokens.lags == lag)[0]
        idx = idx[np.argsort(tokens.pedestrian_index[idx])]
        if len(idx) != n:
            raise ValueError("token grid is ragged; training needs full windows")
        sel_rows.append(idx)
        offsets.append(batch.gt_offsets[:, lag - 1])
    sel = np.concatenate(sel_rows)
    target = np.concatenate(offsets)
    diffs = motions_all[sel] - target
    norms = np.linalg.norm(diffs, axis=1)
    l_tmc = float(norms.mean())

    # Appearance branch.
    a_out, a_caches = stack_forward(
        params.appearance, tokens.features, dropout_rate, rng
    )
    l_tac = 0.0
    lag_terms = []
    for lag in range(1, k_max + 1):
        q_idx, c_idx, logits = _tac_logits(a_out, tokens, lag)
        logits = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(logits)
        probs = exp / exp.sum(axis=1, keepdims=True)
        log_probs = logits - np.log(exp.sum(axis=1, keepdims=True))
        l_tac -= float(np.trace(log_probs)) / n
        lag_terms.append((q_idx, c_idx, probs))
    l_tac /= k_max

    l_det = batch.l_det
    w1, w2, w3 = float(params.w1), float(params.w2), float(params.w3)
    l_total = loss_all(l_det, l_tmc, l_tac, w1, w2, w3)

    grads["w1"] += 1.0 - math.exp(-w1) * l_det
    grads["w2"] += 1.0 - math.exp(-w2) * l_tmc
    grads["w3"] += 1.0 - math.exp(-w3) * l_tac

    # Motion backward: d l_all / d motions = exp(-w2) * unit(diff) / count.
    safe = np.maximum(norms, SAFE_NORM)[:, None]
    d_motions_sel = np.where(norms[:, None] > SAFE_NORM, diffs / safe, 0.0)
    d_motions_sel *= math.exp(-w2) / len(norms)
    d_motions = np.zeros_like(motions_all)
    d_motions[sel] = d_motions_sel
    grads["motion.head_weight"] += m_out.T @ d_motions
    grads["motion.head_bias"] += d_motions.sum(axis=0)
    d_m_out = d_motions @ params.motion.head_weight.T
    _stack_backward(params.motion, d_m_out, m_caches, grads, "motion")

    # Appearance backward: softmax cross-entropy per lag.
    d_a_out = np.zeros_like(a_out)
    coeff = math.exp(-w3) / (n * k_max)
    for q_idx, c_idx, probs in lag_terms:
        d_logits = (probs - np.eye(n)) * coeff
        d_a_out[q_idx] += d_logits @ a_out[c_idx]
        d_a_out[c_idx] += d_logits.T @ a_out[q_idx]
    _stack_backward(params.appearance, d_a_out, a_caches, grads, "appearance")

    return LossReport(l_det, l_tmc, l_tac, l_total), grads


# ---------------------------------------------------------------------------
# Trainer


def train(
    params: BranchParams,
    batches: Sequence[TrainingBatch],
    steps: int,
    learning_rate: float,
    lr_min: float = 0.0,
    grad_accum: int = 1,
    dropout_rate: float = 0.0,
    dropout_seed: int = 0,
) -> tuple[BranchParams, list[LossReport]]:
    """Plain gradient descent with a cosine-decayed step size.

    Batches are consumed cyclically in order; with grad_accum > 1 each update
    averages gradients over that many consecutive batches. Dropout masks are
    drawn from a dedicated seeded stream, so training stays deterministic.
    Returns updated parameters (the input is not mutated) and the per-update
    loss history.
    """
    if not batches:
        raise ValueError("need at least one training batch")
    if steps < 0 or grad_accum < 1:
        raise ValueError("invalid steps or grad_accum")
    params = params.copy()
    tensors = params.tensors()
    history: list[LossReport] = []
    dropout_rng = np.random.default_rng(dropout_seed) if dropout_rate > 0 else None
    cursor = 0
    for step in range(steps):
        accum = zero_grads(params)
        reports = []
        for _ in range(grad_accum):
            try:
                report, grads = forward_backward(
                    params, batches[cursor % len(batches)], dropout_rate, dropout_rng
                )
            except (OverflowError, FloatingPointError) as exc:
                raise TrainingDivergedError(f"loss diverged at step {step}") from exc
            cursor += 1
            if not math.isfinite(report.l_all):
                raise TrainingDivergedError(f"loss diverged at step {step}")
            reports.append(report)
            for name in accum:
                accum[name] += grads[name]
        history.append(reports[-1])
        frac = step / max(steps - 1, 1)
        lr = lr_min + 0.5 * (learning_rate - lr_min) * (1.0 + math.cos(math.pi * frac))
        for name, tensor in tensors.items():
            tensor -= (lr / grad_accum) * accum[name]
    return params, history


# ---------------------------------------------------------------------------
# Checkpoints


def save_params(params: BranchParams, manifest_path: str | Path, bin_path: str | Path) -> None:
    tensors = params.tensors()
    manifest = {
        "embed_dim": params.embed_dim,
        "num_heads": params.motion.num_heads,
        "num_blocks": len(params.motion.blocks),
        "ff_dim": params.motion.blocks[0].ff_w1.shape[1],
        "tensors": [
            {"name": name, "shape": list(arr.shape)} for name, arr in tensors.items()
        ],
    }
    Path(manifest_path).write_text(json.dumps(manifest, indent=2) + "\n")
    flat = np.concatenate([tensors[t["name"]].ravel() for t in manifest["tensors"]])
    flat.astype("<f8").tofile(bin_path)


def load_params(manifest_path: str | Path, bin_path: str | Path) -> BranchParams:
    manifest = json.loads(Path(manifest_path).read_text())
    params = init_params(
        embed_dim=manifest["embed_dim"],
        num_heads=manifest["num_heads"],
        num_blocks=manifest["num_blocks"],
        ff_dim=manifest["ff_dim"],
        seed=0,
    )
    tensors = params.tensors()
    flat = np.fromfile(bin_path, dtype="<f8")
    offset = 0
    for entry in manifest["tensors"]:
        arr = tensors[entry["name"]]
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if list(arr.shape) != entry["shape"]:
            raise ValueError(f"tensor {entry['name']} shape mismatch")
        arr[...] = flat[offset : offset + size].reshape(arr.shape)
        offset += size
    if offset != flat.size:
        raise ValueError("checkpoint size does not match manifest")
    return params
