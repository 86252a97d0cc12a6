"""Fully convolutional Q-network, SGD with momentum and norm clipping, checkpoints.

The reference net is a 6-layer conv stack (widths 16-32-64-64-32-A) that
downsamples twice with stride 2 and upsamples back bilinearly, so the output
Q-map is spatially aligned with the input. No batch-dependent normalization
anywhere: forward passes are pure functions of (params, input), which keeps
training deterministic and gradient checks exact.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

torch.set_num_threads(max(1, min(4, torch.get_num_threads())))

ARCH_WIDTHS = (16, 32, 64, 64, 32)
CHECKPOINT_MAGIC = b"BBQN"
CHECKPOINT_VERSION = 1


class QNetwork(nn.Module):
    """Input (B, 4, H, W) -> Q-maps (B, A, H, W); H and W must be multiples of 4."""

    def __init__(self, in_channels: int = 4, num_actions: int = 2,
                 widths: tuple[int, ...] = ARCH_WIDTHS):
        super().__init__()
        w1, w2, w3, w4, w5 = widths
        self.conv1 = nn.Conv2d(in_channels, w1, 3, stride=1, padding=1)
        self.conv2 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(w2, w3, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(w3, w4, 3, stride=1, padding=1)
        self.conv5 = nn.Conv2d(w4, w5, 3, stride=1, padding=1)
        self.head = nn.Conv2d(w5, num_actions, 3, stride=1, padding=1)
        self.in_channels = in_channels
        self.num_actions = num_actions
        self.widths = tuple(widths)
        self.reset_parameters()

    def reset_parameters(self):
        for m in (self.conv1, self.conv2, self.conv3, self.conv4, self.conv5):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)
        # Zero head: initial Q-values are 0, so the greedy policy starts unbiased.
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ConfigError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ConfigError(f"spatial size {tuple(x.shape[2:])} must be a multiple of 4")
        h = F.relu(self.conv1(x))
        h = F.relu(self.conv2(h))
        h = F.relu(self.conv3(h))
        h = F.relu(self.conv4(h))
        h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        h = F.relu(self.conv5(h))
        h = F.interpolate(h, scale_factor=2, mode="bilinear", align_corners=False)
        return self.head(h)

    def arch_descriptor(self) -> dict:
        return {
            "kind": "conv6",
            "in_channels": self.in_channels,
            "num_actions": self.num_actions,
            "widths": list(self.widths),
        }


def forward_qmaps(net: QNetwork, states: np.ndarray) -> np.ndarray:
    """Pure inference on a (B, 4, H, W) or (4, H, W) batch; returns float32 Q-maps."""
    single = states.ndim == 3
    if single:
        states = states[None]
    with torch.no_grad():
        out = net(torch.from_numpy(np.ascontiguousarray(states)))
    q = out.numpy()
    return q[0] if single else q


def huber(x: np.ndarray | float) -> np.ndarray | float:
    """Smooth L1: 0.5 x^2 for |x| < 1, |x| - 0.5 beyond."""
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def loss_and_grad(net: QNetwork, states: np.ndarray, actions: np.ndarray,
                  targets: np.ndarray) -> tuple[float, list[torch.Tensor]]:
    """Mean Huber loss at the selected action pixels, plus full parameter gradients.

    `actions` is (B, 3) of (channel, row, col) indices; gradients flow only
    through the selected pixels.
    """
    dtype = next(net.parameters()).dtype
    x = torch.from_numpy(np.ascontiguousarray(states)).to(dtype)
    y = torch.as_tensor(targets, dtype=dtype)
    net.zero_grad(set_to_none=True)
    out = net(x)
    b = torch.arange(out.shape[0])
    a = torch.as_tensor(actions, dtype=torch.long)
    q_sel = out[b, a[:, 0], a[:, 1], a[:, 2]]
    loss = F.smooth_l1_loss(q_sel, y, beta=1.0)
    loss.backward()
    grads = [p.grad.detach().clone() for p in net.parameters()]
    return float(loss.detach()), grads


@dataclass
class OptimizerState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0
    clip_norm: float = 100.0
    buffers: list[torch.Tensor] = field(default_factory=list)


def sgd_step(net: QNetwork, state: OptimizerState, grads: list[torch.Tensor]) -> None:
    """Global-norm clip, then v <- mu*v + g and p <- p - lr*v, in place."""
    params = list(net.parameters())
    if len(grads) != len(params):
        raise ConfigError("gradient list does not match parameter list")
    if not state.buffers:
        state.buffers = [torch.zeros_like(p) for p in params]
    total = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))
    scale = state.clip_norm / total if total > state.clip_norm else 1.0
    with torch.no_grad():
        for p, g, buf in zip(params, grads, state.buffers):
            eff = g * scale
            if state.weight_decay:
                eff = eff + state.weight_decay * p
            buf.mul_(state.momentum).add_(eff)
            p.add_(buf, alpha=-state.lr)


def global_grad_norm(grads: list[torch.Tensor]) -> float:
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads))


def grad_check(net: QNetwork, states: np.ndarray, actions: np.ndarray,
               targets: np.ndarray, eps: float = 1e-6, num_samples: int = 200,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error of analytic gradients vs central finite differences.

    Analytic gradients are evaluated at the net's own precision; the
    finite-difference oracle always runs in float64 on a copy of the
    parameters, independent of autograd.
    """
    import copy

    rng = rng or np.random.default_rng(0)
    _, grads = loss_and_grad(net, states, actions, targets)
    flat_analytic = torch.cat([g.reshape(-1).double() for g in grads]).numpy()

    net64 = copy.deepcopy(net).double()
    states64 = states.astype(np.float64)

    params = list(net64.parameters())
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    offsets = np.cumsum([0] + sizes)
    picks = rng.choice(total, size=min(num_samples, total), replace=False)

    def loss_at() -> float:
        with torch.no_grad():
            out = net64(torch.from_numpy(states64))
            b = torch.arange(out.shape[0])
            a = torch.as_tensor(actions, dtype=torch.long)
            q_sel = out[b, a[:, 0], a[:, 1], a[:, 2]]
            y = torch.as_tensor(targets, dtype=torch.float64)
            return float(F.smooth_l1_loss(q_sel, y, beta=1.0))

    max_rel = 0.0
    for flat_idx in picks:
        pi = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = int(flat_idx - offsets[pi])
        p = params[pi]
        orig = float(p.reshape(-1)[local])
        with torch.no_grad():
            p.reshape(-1)[local] = orig + eps
        up = loss_at()
        with torch.no_grad():
            p.reshape(-1)[local] = orig - eps
        down = loss_at()
        with torch.no_grad():
            p.reshape(-1)[local] = orig
        numeric = (up - down) / (2 * eps)
        analytic = float(flat_analytic[flat_idx])
        denom = max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, abs(analytic - numeric) / denom)
    return max_rel


def save_checkpoint(path, net: QNetwork, meta: dict | None = None) -> None:
    """Versioned binary checkpoint: header JSON + flat little-endian float32 params."""
    header = {
        "arch": net.arch_descriptor(),
        "shapes": [list(p.shape) for p in net.parameters()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for p in net.parameters():
            f.write(p.detach().to(torch.float32).numpy().astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[QNetwork, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a checkpoint file (magic {magic!r})")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen).decode())
        arch = header["arch"]
        net = QNetwork(arch["in_channels"], arch["num_actions"], tuple(arch["widths"]))
        for p, shape in zip(net.parameters(), header["shapes"]):
            if list(p.shape) != shape:
                raise ConfigError(f"{path}: shape mismatch {list(p.shape)} vs {shape}")
            n = int(np.prod(shape))
            raw = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            with torch.no_grad():
                p.copy_(torch.from_numpy(raw.copy()))
    return net, header["meta"]
