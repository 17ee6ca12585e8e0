"""Sequence models: latent reducer with joint fusion, LSTM/TCN backbones,
classification and regression heads, plus gradient checking and checkpoints.

Frame mode feeds each timestamp's latent block through a two-layer reducer,
concatenates the result with the affect and behavioral blocks (joint fusion),
and runs the fused sequence through the backbone. Clip mode feeds the 49-d
clip vectors to the backbone directly. The prediction is read from the
backbone output at the final timestamp through a linear head.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    CorruptCheckpoint,
    InvalidConfig,
    NonFiniteGradient,
    ShapeMismatch,
    VersionMismatch,
)
from .features import CLIP_LAYOUT, N_CLIP_FEATURES, Normalizer, frame_layout

CHECKPOINT_FORMAT = "1.0"

MODES = ("frame", "clip")
BACKBONES = ("lstm", "tcn")
# "thresholds" is the shared-backbone ordinal variant: one binary logit per
# class boundary from a single backbone.
HEADS = ("multiclass", "binary", "regression", "thresholds")


@dataclass
class ModelConfig:
    """Architecture description; defaults follow the reference setup."""

    mode: str
    backbone: str
    head: str
    num_classes: int = 4
    latent_dim: int = 256
    reducer_sizes: tuple[int, int] = (128, 32)
    lstm_sizes: tuple[int, int] = (128, 64)
    tcn_levels: int = 8
    tcn_hidden: int = 128
    tcn_kernel: int = 16
    tcn_dropout: float = 0.25
    seed: int = 0

    def __post_init__(self):
        self.reducer_sizes = tuple(self.reducer_sizes)
        self.lstm_sizes = tuple(self.lstm_sizes)
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        if self.backbone not in BACKBONES:
            raise InvalidConfig(f"unknown backbone {self.backbone!r}")
        if self.head not in HEADS:
            raise InvalidConfig(f"unknown head {self.head!r}")
        if self.head == "multiclass" and self.num_classes < 2:
            raise InvalidConfig("multiclass head needs num_classes >= 2")
        if self.head == "thresholds" and self.num_classes < 3:
            raise InvalidConfig("thresholds head needs num_classes >= 3")
        sizes = (self.latent_dim, *self.reducer_sizes, *self.lstm_sizes,
                 self.tcn_levels, self.tcn_hidden, self.tcn_kernel)
        if any(int(s) <= 0 for s in sizes):
            raise InvalidConfig("all architecture sizes must be positive")
        if not 0.0 <= self.tcn_dropout < 1.0:
            raise InvalidConfig("tcn_dropout must be in [0, 1)")
        if len(self.reducer_sizes) != 2 or len(self.lstm_sizes) != 2:
            raise InvalidConfig("reducer_sizes and lstm_sizes must have 2 entries")

    @property
    def input_width(self) -> int:
        if self.mode == "frame":
            return 2 + self.latent_dim + 12
        return N_CLIP_FEATURES

    @property
    def fused_width(self) -> int:
        if self.mode == "frame":
            return self.reducer_sizes[-1] + 2 + 12
        return N_CLIP_FEATURES

    @property
    def output_dim(self) -> int:
        if self.head == "multiclass":
            return self.num_classes
        if self.head == "thresholds":
            return self.num_classes - 1
        return 1

    @property
    def feature_layout(self) -> str:
        if self.mode == "frame":
            return frame_layout(self.latent_dim)
        return CLIP_LAYOUT

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "backbone": self.backbone, "head": self.head,
            "num_classes": self.num_classes, "latent_dim": self.latent_dim,
            "reducer_sizes": list(self.reducer_sizes),
            "lstm_sizes": list(self.lstm_sizes),
            "tcn_levels": self.tcn_levels, "tcn_hidden": self.tcn_hidden,
            "tcn_kernel": self.tcn_kernel, "tcn_dropout": self.tcn_dropout,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["reducer_sizes"] = tuple(d.get("reducer_sizes", (128, 32)))
        d["lstm_sizes"] = tuple(d.get("lstm_sizes", (128, 64)))
        return cls(**d)


class LatentReducer(nn.Module):
    """Two fully-connected ReLU layers shrinking the latent block."""

    def __init__(self, latent_dim: int, sizes: tuple[int, int]):
        super().__init__()
        self.fc1 = nn.Linear(latent_dim, sizes[0])
        self.fc2 = nn.Linear(sizes[0], sizes[1])

    def forward(self, x):
        return F.relu(self.fc2(F.relu(self.fc1(x))))


class CausalConv1d(nn.Module):
    """Dilated 1-d convolution padded on the left only."""

    def __init__(self, in_channels, out_channels, kernel_size, dilation):
        super().__init__()
        self.pad = (kernel_size - 1) * dilation
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size,
                              dilation=dilation)

    def forward(self, x):  # x: (B, C, T)
        return self.conv(F.pad(x, (self.pad, 0)))


class TemporalBlock(nn.Module):
    """Residual block of two dilated causal convolutions."""

    def __init__(self, in_channels, out_channels, kernel_size, dilation, dropout):
        super().__init__()
        self.conv1 = CausalConv1d(in_channels, out_channels, kernel_size, dilation)
        self.conv2 = CausalConv1d(out_channels, out_channels, kernel_size, dilation)
        self.dropout = nn.Dropout(dropout)
        self.downsample = (nn.Conv1d(in_channels, out_channels, 1)
                           if in_channels != out_channels else None)

    def forward(self, x):
        out = self.dropout(F.relu(self.conv1(x)))
        out = self.dropout(F.relu(self.conv2(out)))
        res = x if self.downsample is None else self.downsample(x)
        return F.relu(out + res)


class TCN(nn.Module):
    """Stack of temporal blocks with dilation 2^i at level i."""

    def __init__(self, input_width, levels, hidden, kernel_size, dropout):
        super().__init__()
        blocks = []
        for i in range(levels):
            in_ch = input_width if i == 0 else hidden
            blocks.append(TemporalBlock(in_ch, hidden, kernel_size, 2 ** i, dropout))
        self.blocks = nn.ModuleList(blocks)
        self.output_width = hidden

    def forward(self, x):  # x: (B, T, C) -> (B, T, H)
        h = x.transpose(1, 2)
        for block in self.blocks:
            h = block(h)
        return h.transpose(1, 2)


class LSTMBackbone(nn.Module):
    """Two unidirectional LSTM layers with independent hidden sizes."""

    def __init__(self, input_width, sizes: tuple[int, int]):
        super().__init__()
        self.lstm1 = nn.LSTM(input_width, sizes[0], batch_first=True)
        self.lstm2 = nn.LSTM(sizes[0], sizes[1], batch_first=True)
        self.output_width = sizes[1]

    def forward(self, x):  # x: (B, T, C) -> (B, T, H)
        h, _ = self.lstm1(x)
        h, _ = self.lstm2(h)
        return h


def receptive_field(levels: int, kernel_size: int) -> int:
    """Frames seen by the last TCN output: 1 + 2(k-1)(2^levels - 1)."""
    return 1 + 2 * (kernel_size - 1) * (2 ** levels - 1)


class EngagementModel(nn.Module):
    """Reducer + fusion + sequence backbone + final-timestamp head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.normalizer: Normalizer | None = None
        if config.mode == "frame":
            self.reducer = LatentReducer(config.latent_dim, config.reducer_sizes)
        else:
            self.reducer = None
        if config.backbone == "lstm":
            self.backbone = LSTMBackbone(config.fused_width, config.lstm_sizes)
        else:
            self.backbone = TCN(config.fused_width, config.tcn_levels,
                                config.tcn_hidden, config.tcn_kernel,
                                config.tcn_dropout)
        self.head = nn.Linear(self.backbone.output_width, config.output_dim)
        self.reset_parameters(config.seed)
        self.eval()

    def reset_parameters(self, seed: int) -> None:
        """Seeded uniform fan-in init for weights, zeros for biases."""
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in sorted(self.named_parameters()):
                if p.dim() >= 2:
                    fan_in = p.shape[1:].numel()
                    bound = 1.0 / math.sqrt(fan_in)
                    p.uniform_(-bound, bound, generator=gen)
                else:
                    p.zero_()

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.dim() != 3 or x.shape[-1] != self.config.input_width:
            raise ShapeMismatch(
                f"expected (batch, time, {self.config.input_width}), "
                f"got {tuple(x.shape)}")
        if x.shape[1] < 1:
            raise ShapeMismatch("sequence length must be >= 1")
        return x

    def fuse(self, x: torch.Tensor) -> torch.Tensor:
        """Frame mode: reduce the latent block and concatenate all blocks."""
        if self.config.mode != "frame":
            return x
        affect = x[..., :2]
        latent = x[..., 2:2 + self.config.latent_dim]
        behavioral = x[..., 2 + self.config.latent_dim:]
        return torch.cat([self.reducer(latent), affect, behavioral], dim=-1)

    def backbone_sequence(self, x) -> torch.Tensor:
        """Per-timestamp backbone outputs (B, T, H) before the head."""
        x = self._check_input(torch.as_tensor(x, dtype=self.head.weight.dtype))
        return self.backbone(self.fuse(x))

    def forward(self, x, lengths=None):
        """Head output at the final (or per-sample last valid) timestamp.

        Accepts (T, W) for one sequence or (B, T, W) for a batch; returns
        (output_dim,) or (B, output_dim) correspondingly.
        """
        x = torch.as_tensor(x, dtype=self.head.weight.dtype)
        single = x.dim() == 2
        x = self._check_input(x)
        seq = self.backbone(self.fuse(x))
        if lengths is None:
            final = seq[:, -1]
        else:
            idx = torch.as_tensor(lengths, dtype=torch.long) - 1
            final = seq[torch.arange(seq.shape[0]), idx]
        out = self.head(final)
        return out[0] if single else out


def build_model(config: ModelConfig) -> EngagementModel:
    """Construct a model with deterministic, seed-reproducible parameters."""
    config.validate()
    return EngagementModel(config)


def parameter_count(config: ModelConfig) -> int:
    return sum(p.numel() for p in build_model(config).parameters())


def backward(model: EngagementModel, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Backpropagate a scalar loss and return {param name: gradient}."""
    model.zero_grad(set_to_none=True)
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")
        grads[name] = g.detach().clone()
    return grads


def gradient_check(model: EngagementModel, inputs, target, loss_fn,
                   eps: float = 1e-5) -> float:
    """Compare analytic gradients with central finite differences.

    Runs on a double-precision copy of the model and perturbs every
    parameter element by ±eps. Returns the maximum relative error over all
    elements. The model must be in inference mode so stochastic layers are
    frozen.
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must be in [1e-6, 1e-4]")
    if model.training:
        raise InvalidConfig("gradient check requires the model in eval mode")

    m = copy.deepcopy(model).double()
    m.eval()
    x = torch.as_tensor(inputs, dtype=torch.float64)

    out = m(x)
    loss = loss_fn(out, target)
    analytic = backward(m, loss)

    max_rel = 0.0
    with torch.no_grad():
        for name, p in m.named_parameters():
            flat = p.view(-1)
            grad = analytic[name].view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                lo_hi = loss_fn(m(x), target).item()
                flat[i] = orig - eps
                lo_lo = loss_fn(m(x), target).item()
                flat[i] = orig
                numeric = (lo_hi - lo_lo) / (2.0 * eps)
                a = grad[i].item()
                denom = max(abs(a), abs(numeric), 1e-6)
                rel = abs(a - numeric) / denom
                if rel > max_rel:
                    max_rel = rel
    return max_rel


def save_checkpoint(model: EngagementModel, path,
                    normalizer: Normalizer | None = None) -> None:
    """Write a checkpoint directory: params.npz plus meta.json.

    The metadata embeds the config, seed, feature-layout version, and the
    fitted normalizer so a checkpoint is self-contained for inference.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    norm = normalizer if normalizer is not None else model.normalizer
    meta = {
        "format_version": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "feature_layout": model.config.feature_layout,
        "normalizer": norm.to_dict() if norm is not None else None,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    arrays = {name: p.detach().cpu().numpy()
              for name, p in model.state_dict().items()}
    np.savez(path / "params.npz", **arrays)


def load_checkpoint(path, expect_layout: str | None = None) -> EngagementModel:
    """Rebuild a model from a checkpoint directory.

    Raises VersionMismatch for unsupported format majors or an unexpected
    feature layout, CorruptCheckpoint for unreadable or inconsistent files.
    """
    path = Path(path)
    meta_path = path / "meta.json"
    params_path = path / "params.npz"
    if not meta_path.is_file() or not params_path.is_file():
        raise CorruptCheckpoint(f"{path}: missing meta.json or params.npz")
    try:
        meta = json.loads(meta_path.read_text())
        config = ModelConfig.from_dict(meta["config"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable metadata ({exc})") from None

    version = str(meta.get("format_version", ""))
    if version.split(".")[0] != CHECKPOINT_FORMAT.split(".")[0]:
        raise VersionMismatch(f"{path}: unsupported format {version!r}")
    stored_layout = meta.get("feature_layout")
    if stored_layout != config.feature_layout:
        raise VersionMismatch(
            f"{path}: layout {stored_layout!r} does not match config "
            f"layout {config.feature_layout!r}")
    if expect_layout is not None and stored_layout != expect_layout:
        raise VersionMismatch(
            f"{path}: layout {stored_layout!r}, expected {expect_layout!r}")

    model = build_model(config)
    try:
        with np.load(params_path) as arrays:
            state = {name: torch.from_numpy(arrays[name].copy())
                     for name in arrays.files}
    except Exception as exc:
        raise CorruptCheckpoint(f"{path}: unreadable params.npz ({exc})") from None

    expected = model.state_dict()
    if set(state) != set(expected):
        raise CorruptCheckpoint(f"{path}: parameter names do not match config")
    for name, tensor in state.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CorruptCheckpoint(f"{path}: bad shape for {name}")
    model.load_state_dict(state)

    if meta.get("normalizer") is not None:
        model.normalizer = Normalizer.from_dict(meta["normalizer"])
    model.eval()
    return model
