"""Desk-scale two-view pose regressor.

A symmetric two-branch transformer: both images pass through the same
patch embedding and encoder; two decoder passes (each branch
cross-attending to the other) share one set of weights, as does the pose
head. Swapping the input images therefore swaps the two outputs exactly.

Everything runs in float64 on CPU; the model exists to exercise and
sanity-check the geometry, not to be fast.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import torch
from torch import nn

from ..errors import (
    DimensionMismatchError,
    NonFiniteLossError,
    SingularInputError,
    ZeroVectorError,
)
from ..geometry import GAP_CLAMP, RANK_EPS, DirectionalPose, Pose

HEAD_MODES = ("directional_9d", "directional_4d", "directional_3d", "metric_9d")


@dataclasses.dataclass(frozen=True)
class ToyModelConfig:
    """Architecture hyperparameters.

    ``token_dim`` must be divisible by ``2 * attention_heads`` and each
    head's channels by 4 (the rotary embedding splits them into row / col
    halves of rotated pairs).
    """

    patch_size: int = 8
    token_dim: int = 32
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    head_layers: int = 2
    attention_heads: int = 2
    head_mode: str = "directional_9d"
    rope_base: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1 or self.token_dim < 1:
            raise ValueError("patch_size and token_dim must be positive")
        if min(self.encoder_blocks, self.decoder_blocks, self.head_layers) < 1:
            raise ValueError("need at least one encoder/decoder/head layer")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}")
        if self.rope_base <= 1.0:
            raise ValueError("rope_base must exceed 1")
        if self.token_dim % (2 * self.attention_heads) != 0:
            raise DimensionMismatchError(
                f"token_dim {self.token_dim} not divisible by "
                f"2 * attention_heads = {2 * self.attention_heads}")
        if (self.token_dim // self.attention_heads) % 4 != 0:
            raise DimensionMismatchError(
                "per-head channels must be divisible by 4 for 2D rotary embedding")


@dataclasses.dataclass
class TokenSequence:
    """Patch tokens plus their (row, col) grid positions."""

    tokens: torch.Tensor          # (T, token_dim)
    grid_positions: np.ndarray    # (T, 2) int


# ---------------------------------------------------------------------------
# differentiable rotation parameterizations
# ---------------------------------------------------------------------------

class _SpecialOrthogonalize(torch.autograd.Function):
    """SVD projection of a 3x3 matrix onto SO(3), with bounded backward.

    The backward pass uses the closed-form differential of the projection
    with inverse singular-value gaps clamped at GAP_CLAMP, so training
    steps stay finite even near repeated singular values.
    """

    @staticmethod
    def forward(ctx, m):
        if not bool(torch.isfinite(m).all()):
            raise NonFiniteLossError("non-finite values reached the rotation head")
        u, s, vh = torch.linalg.svd(m)
        if float(s[1]) < RANK_EPS:
            raise SingularInputError("9D head output is numerically rank deficient")
        sign = torch.det(u) * torch.det(vh)
        h = torch.stack([torch.ones((), dtype=m.dtype), torch.ones((), dtype=m.dtype),
                         torch.sign(sign)])
        ctx.save_for_backward(u, s, vh, h)
        return (u * h) @ vh

    @staticmethod
    def backward(ctx, grad_r):
        u, s, vh, h = ctx.saved_tensors
        ghat = u.transpose(0, 1) @ grad_r @ vh.transpose(0, 1)
        w = grad_r.new_zeros(3, 3)
        for i in range(3):
            for j in range(3):
                if i == j:
                    continue
                denom = float(s[j] ** 2 - s[i] ** 2)
                if abs(denom) < GAP_CLAMP:
                    denom = GAP_CLAMP if denom >= 0.0 else -GAP_CLAMP
                num = ghat[i, j] * (h[j] * s[j] - h[i] * s[i]) \
                    - ghat[j, i] * (h[i] * s[j] - h[j] * s[i])
                w[i, j] = num / denom
        return u @ w @ vh


def special_orthogonalize(m: torch.Tensor) -> torch.Tensor:
    return _SpecialOrthogonalize.apply(m)


class _ClampedAcos(torch.autograd.Function):
    """acos of a cosine clamped to [-1, 1]; gradient 0 where the clamp bites."""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.acos(x.clamp(-1.0, 1.0))

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        inside = (x > -1.0) & (x < 1.0)
        denom = torch.sqrt(torch.clamp(1.0 - x * x, min=0.0))
        return torch.where(inside, -grad_out / denom, torch.zeros_like(x))


def clamped_acos(x: torch.Tensor) -> torch.Tensor:
    return _ClampedAcos.apply(x)


def rotation_from_raw(raw: torch.Tensor, head_mode: str) -> torch.Tensor:
    """Map the head's raw rotation output onto SO(3), differentiably."""
    if head_mode in ("directional_9d", "metric_9d"):
        return special_orthogonalize(raw.reshape(3, 3))
    if head_mode == "directional_4d":
        norm = torch.linalg.norm(raw)
        if float(norm) <= 1e-12:
            raise ZeroVectorError("4D head output is numerically zero")
        w, x, y, z = raw / norm
        return torch.stack([
            torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)]),
            torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)]),
            torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]),
        ])
    # directional_3d: exponential map, smooth through zero via sinc forms
    theta = torch.linalg.norm(raw)
    k = torch.stack([
        torch.stack([torch.zeros_like(theta), -raw[2], raw[1]]),
        torch.stack([raw[2], torch.zeros_like(theta), -raw[0]]),
        torch.stack([-raw[1], raw[0], torch.zeros_like(theta)]),
    ])
    a = torch.sinc(theta / math.pi)                    # sin(theta)/theta
    b = 0.5 * torch.sinc(theta / (2 * math.pi)) ** 2   # (1-cos(theta))/theta^2
    eye = torch.eye(3, dtype=raw.dtype)
    return eye + a * k + b * (k @ k)


# ---------------------------------------------------------------------------
# 2D rotary position embedding
# ---------------------------------------------------------------------------

def _rotate_pairs(x: torch.Tensor, phases: torch.Tensor) -> torch.Tensor:
    """Rotate interleaved channel pairs (2i, 2i+1) by per-pair phases.

    ``x`` is (..., T, C) with C even; ``phases`` is (T, C/2).
    """
    even = x[..., 0::2]
    odd = x[..., 1::2]
    cos = torch.cos(phases)
    sin = torch.sin(phases)
    out = torch.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def apply_rope(x: torch.Tensor, grid_positions: np.ndarray, base: float) -> torch.Tensor:
    """2D rotary embedding on per-head channels, shape (..., T, head_dim).

    The first half of the channels is rotated by row-indexed phases, the
    second half by column-indexed phases; each half uses the classic
    geometric frequency ladder ``base ** (-2j / half_dim)``. The map is
    norm-preserving and makes q-k dot products depend only on relative
    grid offsets.
    """
    head_dim = x.shape[-1]
    if head_dim % 4 != 0:
        raise DimensionMismatchError(f"head dim {head_dim} not divisible by 4")
    half = head_dim // 2
    n_pairs = half // 2
    freqs = torch.tensor(
        [base ** (-2.0 * j / half) for j in range(n_pairs)], dtype=x.dtype)
    pos = torch.as_tensor(np.asarray(grid_positions), dtype=x.dtype)
    row_phases = pos[:, 0:1] * freqs  # (T, n_pairs)
    col_phases = pos[:, 1:2] * freqs
    out = torch.empty_like(x)
    out[..., :half] = _rotate_pairs(x[..., :half], row_phases)
    out[..., half:] = _rotate_pairs(x[..., half:], col_phases)
    return out


# ---------------------------------------------------------------------------
# transformer blocks
# ---------------------------------------------------------------------------

class _Attention(nn.Module):
    """Multi-head attention with rotary-embedded queries and keys.

    Self-attention when ``memory is None``, cross-attention otherwise.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.to_q = nn.Linear(dim, dim)
        self.to_kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x, positions, base, memory=None, memory_positions=None):
        source = x if memory is None else memory
        source_pos = positions if memory is None else memory_positions
        t_q, dim = x.shape
        t_k = source.shape[0]
        q = self.to_q(x).reshape(t_q, self.heads, self.head_dim).transpose(0, 1)
        kv = self.to_kv(source).reshape(t_k, 2, self.heads, self.head_dim)
        k = kv[:, 0].transpose(0, 1)
        v = kv[:, 1].transpose(0, 1)
        q = apply_rope(q, positions, base)
        k = apply_rope(k, source_pos, base)
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(t_q, dim)
        return self.proj(out)


class _FeedForward(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        return self.net(x)


class _EncoderBlock(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = _Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = _FeedForward(dim, 4 * dim)

    def forward(self, x, positions, base):
        x = x + self.attn(self.norm1(x), positions, base)
        return x + self.mlp(self.norm2(x))


class _DecoderBlock(nn.Module):
    """Self-attention, then cross-attention to the other branch, then MLP."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.self_attn = _Attention(dim, heads)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross_attn = _Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = _FeedForward(dim, 4 * dim)

    def forward(self, x, positions, memory, memory_positions, base):
        x = x + self.self_attn(self.norm1(x), positions, base)
        x = x + self.cross_attn(self.norm_cross(x), positions, base,
                                memory=memory, memory_positions=memory_positions)
        return x + self.mlp(self.norm2(x))


class ToyModel(nn.Module):
    """One shared parameter set serving both branches of the pair."""

    def __init__(self, config: ToyModelConfig):
        super().__init__()
        self.config = config
        d = config.token_dim
        self.patch_embed = nn.Linear(config.patch_size ** 2 * 3, d)
        self.encoder = nn.ModuleList(
            _EncoderBlock(d, config.attention_heads) for _ in range(config.encoder_blocks))
        self.encoder_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(
            _DecoderBlock(d, config.attention_heads) for _ in range(config.decoder_blocks))
        self.decoder_norm = nn.LayerNorm(d)
        self.head_mlp = nn.ModuleList(nn.Linear(d, d) for _ in range(config.head_layers))
        rotation_dims = {"directional_9d": 9, "metric_9d": 9,
                         "directional_4d": 4, "directional_3d": 3}
        self.rotation_out = nn.Linear(d, rotation_dims[config.head_mode])
        self.translation_out = nn.Linear(d, 3)
        self.scale_out = nn.Linear(d, 1) if config.head_mode == "metric_9d" else None
        self._reset_parameters()
        self.double()

    def _reset_parameters(self, seed: int | None = None):
        """Deterministic init from a seed (independent of global RNG)."""
        gen = torch.Generator().manual_seed(self.config.seed if seed is None else seed)
        for module in self.modules():
            if isinstance(module, nn.Linear):
                fan_in = module.weight.shape[1]
                module.weight.data = torch.randn(
                    module.weight.shape, generator=gen, dtype=torch.float64
                ) / math.sqrt(fan_in)
                module.bias.data = torch.zeros(module.bias.shape, dtype=torch.float64)
            elif isinstance(module, nn.LayerNorm):
                module.weight.data = torch.ones(module.weight.shape, dtype=torch.float64)
                module.bias.data = torch.zeros(module.bias.shape, dtype=torch.float64)


def reseed(model: "ToyModel", seed: int) -> "ToyModel":
    """Re-draw all parameters in place from ``seed``; returns the model."""
    model._reset_parameters(seed)
    return model


# ---------------------------------------------------------------------------
# functional interface
# ---------------------------------------------------------------------------

def patchify(model: ToyModel, image) -> TokenSequence:
    """Split an (H, W, 3) image into non-overlapping patch tokens.

    H and W must be divisible by the patch size; positions are the
    (row, col) patch grid indices, row-major.
    """
    img = torch.as_tensor(np.array(image, dtype=np.float64))
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatchError(f"expected (H, W, 3) image, got {tuple(img.shape)}")
    p = model.config.patch_size
    h, w, _ = img.shape
    if h % p or w % p:
        raise DimensionMismatchError(f"image {h}x{w} not divisible by patch size {p}")
    rows, cols = h // p, w // p
    patches = img.reshape(rows, p, cols, p, 3).permute(0, 2, 1, 3, 4).reshape(rows * cols, -1)
    tokens = model.patch_embed(patches)
    grid = np.stack(np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij"),
                    axis=-1).reshape(-1, 2)
    return TokenSequence(tokens, grid)


def rope_embed(seq: TokenSequence, config: ToyModelConfig) -> TokenSequence:
    """Standalone rotary embedding of a token sequence (per-head layout)."""
    t, d = seq.tokens.shape
    if d != config.token_dim:
        raise DimensionMismatchError(f"token dim {d} != configured {config.token_dim}")
    per_head = seq.tokens.reshape(t, config.attention_heads, -1).transpose(0, 1)
    rotated = apply_rope(per_head, seq.grid_positions, config.rope_base)
    return TokenSequence(rotated.transpose(0, 1).reshape(t, d), seq.grid_positions)


def encode(model: ToyModel, seq: TokenSequence) -> TokenSequence:
    """Self-attention encoder shared by both branches."""
    x = seq.tokens
    for block in model.encoder:
        x = block(x, seq.grid_positions, model.config.rope_base)
    return TokenSequence(model.encoder_norm(x), seq.grid_positions)


def decode(model: ToyModel, own: TokenSequence, other: TokenSequence) -> TokenSequence:
    """Decoder branch: refine ``own`` tokens while cross-attending to ``other``."""
    x = own.tokens
    for block in model.decoder:
        x = block(x, own.grid_positions, other.tokens, other.grid_positions,
                  model.config.rope_base)
    return TokenSequence(model.decoder_norm(x), own.grid_positions)


def pose_head_tensors(model: ToyModel, seq: TokenSequence):
    """Raw head outputs as tensors: (rotation 3x3, unit direction, scale|None)."""
    x = seq.tokens
    for layer in model.head_mlp:
        x = torch.nn.functional.gelu(layer(x))
    pooled = x.mean(dim=0)
    rotation = rotation_from_raw(model.rotation_out(pooled), model.config.head_mode)
    trans = model.translation_out(pooled)
    norm = torch.linalg.norm(trans)
    if float(norm.detach()) <= 1e-12:
        raise ZeroVectorError("translation head output is numerically zero")
    direction = trans / norm
    scale = None
    if model.scale_out is not None:
        scale = torch.nn.functional.softplus(model.scale_out(pooled))[0]
    return rotation, direction, scale


@dataclasses.dataclass(frozen=True)
class PosePrediction:
    """Regressed relative pose; ``scale`` (meters) only in metric mode."""

    rotation: np.ndarray
    direction: np.ndarray
    scale: float | None = None

    def to_directional_pose(self) -> DirectionalPose:
        return DirectionalPose(self.rotation, self.direction)

    def to_pose(self) -> Pose:
        if self.scale is None:
            raise ValueError("metric scale missing; run a metric_9d head")
        return Pose(self.rotation, self.scale * self.direction)


def pose_head(model: ToyModel, seq: TokenSequence) -> PosePrediction:
    rotation, direction, scale = pose_head_tensors(model, seq)
    return PosePrediction(
        rotation.detach().numpy(),
        direction.detach().numpy(),
        None if scale is None else float(scale),
    )


def forward_pair_tensors(model: ToyModel, image_a, image_b):
    """Differentiable two-branch forward pass.

    Returns ((R_ab, d_ab, s_ab), (R_ba, d_ba, s_ba)) where the first
    element maps a-frame coordinates into b-frame coordinates.
    """
    feat_a = encode(model, patchify(model, image_a))
    feat_b = encode(model, patchify(model, image_b))
    out_ab = pose_head_tensors(model, decode(model, feat_a, feat_b))
    out_ba = pose_head_tensors(model, decode(model, feat_b, feat_a))
    return out_ab, out_ba


def forward_pair(model: ToyModel, image_a, image_b) -> tuple[PosePrediction, PosePrediction]:
    """Two-branch forward pass; swapping the images swaps the outputs exactly."""
    with torch.no_grad():
        out_ab, out_ba = forward_pair_tensors(model, image_a, image_b)

    def to_prediction(out):
        rotation, direction, scale = out
        return PosePrediction(rotation.numpy(), direction.numpy(),
                              None if scale is None else float(scale))

    return to_prediction(out_ab), to_prediction(out_ba)


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def parameter_count(model: ToyModel) -> int:
    return sum(p.numel() for p in model.parameters())


def shared_vs_asymmetric_counts(model: ToyModel) -> tuple[int, int]:
    """Parameters of this model vs. a hypothetical two-decoder variant.

    The asymmetric variant would duplicate the decoder stack and head (one
    private copy per branch) while still sharing the encoder.
    """
    encoder = sum(p.numel() for p in model.patch_embed.parameters()) \
        + sum(p.numel() for p in model.encoder.parameters()) \
        + sum(p.numel() for p in model.encoder_norm.parameters())
    shared = parameter_count(model)
    duplicated = shared - encoder
    return shared, encoder + 2 * duplicated
