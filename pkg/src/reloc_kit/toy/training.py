"""Training utilities for the toy regressor: procedural image pairs,
an overfitting loop with angular losses, checkpoints, and loss traces.

The training batch is fixed (overfit regime): the model memorizes a
handful of image pairs and their relative poses, which is enough to
exercise every gradient path end to end.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct

import numpy as np
import torch

from ..errors import NonFiniteLossError, ParseError
from ..geometry import Pose, inverse
from ..synthetic import random_rotation, random_unit_vector
from .model import (
    ToyModel,
    ToyModelConfig,
    clamped_acos,
    forward_pair_tensors,
)

CHECKPOINT_MAGIC = b"RKTOY\x00"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# procedural data
# ---------------------------------------------------------------------------

def procedural_image(rng: np.random.Generator, height: int = 32, width: int = 32) -> np.ndarray:
    """Seeded random texture: a color gradient plus a few soft shapes."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    ys /= max(height - 1, 1)
    xs /= max(width - 1, 1)
    angle = rng.uniform(0, 2 * math.pi)
    ramp = (math.cos(angle) * xs + math.sin(angle) * ys + 1.0) / 2.0
    c0 = rng.uniform(0, 1, size=3)
    c1 = rng.uniform(0, 1, size=3)
    img = c0 + ramp[..., None] * (c1 - c0)
    for _ in range(3):  # rectangles
        r0, c0_ = rng.integers(0, height // 2), rng.integers(0, width // 2)
        r1 = r0 + int(rng.integers(height // 8 + 1, height // 2 + 1))
        c1_ = c0_ + int(rng.integers(width // 8 + 1, width // 2 + 1))
        color = rng.uniform(0, 1, size=3)
        alpha = rng.uniform(0.4, 0.9)
        img[r0:r1, c0_:c1_] = (1 - alpha) * img[r0:r1, c0_:c1_] + alpha * color
    for _ in range(2):  # circles
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        radius = rng.uniform(min(height, width) / 8, min(height, width) / 3)
        mask = (ys * (height - 1) - cy) ** 2 + (xs * (width - 1) - cx) ** 2 < radius ** 2
        color = rng.uniform(0, 1, size=3)
        alpha = rng.uniform(0.4, 0.9)
        img[mask] = (1 - alpha) * img[mask] + alpha * color
    return np.clip(img, 0.0, 1.0)


@dataclasses.dataclass(frozen=True)
class TrainingPair:
    """Two images and the ground-truth pose mapping a-frame to b-frame."""

    image_a: np.ndarray
    image_b: np.ndarray
    gt: Pose


def make_training_pairs(
    n_pairs: int,
    config: ToyModelConfig,
    seed: int = 0,
    image_size: int | None = None,
    metric: bool | None = None,
) -> list[TrainingPair]:
    """Procedural image pairs with random ground-truth relative poses.

    Directional modes place the translation on the unit sphere; metric
    mode scales it by a random factor in [0.5, 2].
    """
    rng = np.random.default_rng(seed)
    size = image_size or 4 * config.patch_size
    if metric is None:
        metric = config.head_mode == "metric_9d"
    pairs = []
    for _ in range(n_pairs):
        rotation = random_rotation(rng)
        translation = random_unit_vector(rng)
        if metric:
            translation = translation * rng.uniform(0.5, 2.0)
        pairs.append(TrainingPair(
            procedural_image(rng, size, size),
            procedural_image(rng, size, size),
            Pose(rotation, translation),
        ))
    return pairs


# ---------------------------------------------------------------------------
# losses and the training loop
# ---------------------------------------------------------------------------

def _branch_loss(output, gt: Pose, head_mode: str):
    """(rotation loss, translation loss, metric extras) for one branch."""
    rotation, direction, scale = output
    gt_r = torch.as_tensor(np.array(gt.rotation))
    gt_t = torch.as_tensor(np.array(gt.translation))
    gt_norm = torch.linalg.norm(gt_t)
    gt_dir = gt_t / gt_norm
    cos_r = (torch.einsum("ij,ij->", rotation, gt_r) - 1.0) / 2.0
    loss_r = clamped_acos(cos_r)
    loss_t = clamped_acos(direction @ gt_dir)
    extra = rotation.new_zeros(())
    if head_mode == "metric_9d":
        extra = torch.abs(direction - gt_dir).sum() + torch.abs(scale - gt_norm)
    return loss_r, loss_t, extra


def batch_loss(model: ToyModel, pairs):
    """Mean losses over the batch, supervising both branch outputs.

    Returns (total, loss_r, loss_t) tensors; loss_r / loss_t are the mean
    angular terms in radians (metric extras enter only the total).
    """
    loss_r = loss_t = extra = None
    head_mode = model.config.head_mode
    for pair in pairs:
        out_ab, out_ba = forward_pair_tensors(model, pair.image_a, pair.image_b)
        gt_ba = inverse(pair.gt)
        for out, gt in ((out_ab, pair.gt), (out_ba, gt_ba)):
            r, t, e = _branch_loss(out, gt, head_mode)
            loss_r = r if loss_r is None else loss_r + r
            loss_t = t if loss_t is None else loss_t + t
            extra = e if extra is None else extra + e
    n = 2 * len(pairs)
    loss_r, loss_t, extra = loss_r / n, loss_t / n, extra / n
    return loss_r + loss_t + extra, loss_r, loss_t


@dataclasses.dataclass(frozen=True)
class TraceRow:
    step: int
    loss_r: float
    loss_t: float


def train_toy(
    model: ToyModel,
    pairs,
    steps: int,
    learning_rate: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    final_lr_fraction: float = 0.01,
) -> list[TraceRow]:
    """Adam loop over a fixed batch with cosine learning-rate decay.

    Returns ``steps + 1`` trace rows: row ``s`` holds the loss before
    update ``s``, so the last row is the final loss. Raises
    NonFiniteLossError as soon as the loss stops being finite.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one training pair")
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate, betas=betas)
    trace = []
    for step in range(steps + 1):
        try:
            total, loss_r, loss_t = batch_loss(model, pairs)
        except NonFiniteLossError as exc:
            raise NonFiniteLossError(f"{exc} (at step {step})") from None
        if not bool(torch.isfinite(total)):
            raise NonFiniteLossError(f"loss is not finite at step {step}")
        trace.append(TraceRow(step, float(loss_r.detach()), float(loss_t.detach())))
        if step == steps:
            break
        fraction = step / max(steps, 1)
        lr = learning_rate * (final_lr_fraction
                              + (1 - final_lr_fraction) * 0.5 * (1 + math.cos(math.pi * fraction)))
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
    return trace


def save_trace(trace, path) -> None:
    """Loss trace as CSV: ``step,loss_R,loss_t``."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("step,loss_R,loss_t\n")
        for row in trace:
            handle.write(f"{row.step},{row.loss_r:.17g},{row.loss_t:.17g}\n")


def load_trace(path) -> list[TraceRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or (line_no == 1 and line.startswith("step")):
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError(path, line_no, "expected 'step,loss_R,loss_t'")
            try:
                rows.append(TraceRow(int(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError:
                raise ParseError(path, line_no, f"bad trace row: '{line}'") from None
    return rows


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: ToyModel, path) -> None:
    """Versioned flat binary: JSON manifest, then float32 LE parameter data."""
    names = [name for name, _ in model.named_parameters()]
    params = dict(model.named_parameters())
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "params": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<I", len(header)))
        handle.write(header)
        for name in names:
            data = params[name].detach().numpy().astype("<f4")
            handle.write(data.tobytes())


def load_checkpoint(path) -> ToyModel:
    """Rebuild a model from a checkpoint (parameters upcast to float64)."""
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ParseError(path, None, "not a toy-model checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    if len(blob) < offset + 4:
        raise ParseError(path, None, "checkpoint truncated before the manifest")
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    try:
        manifest = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError(path, None, "corrupt checkpoint manifest") from None
    offset += header_len
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise ParseError(path, None, f"unsupported checkpoint version {manifest.get('version')}")
    model = ToyModel(ToyModelConfig(**manifest["config"]))
    params = dict(model.named_parameters())
    with torch.no_grad():
        for entry in manifest["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in params or tuple(params[name].shape) != shape:
                raise ParseError(path, None, f"parameter mismatch for '{name}'")
            count = int(np.prod(shape)) if shape else 1
            if offset + 4 * count > len(blob):
                raise ParseError(path, None, "checkpoint truncated inside parameter data")
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
            params[name].copy_(torch.as_tensor(
                data.astype(np.float64).reshape(shape)))
    if offset != len(blob):
        raise ParseError(path, None, "trailing bytes after parameter data")
    return model
