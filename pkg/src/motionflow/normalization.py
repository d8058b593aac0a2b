"""Reversible flow normalization, target construction, bilateral split,
timestep-scaled endpoint flows, and spatiotemporal coordinate grids.

The normalization maps signed pixel displacements into [0, 1] with an
instance-specific scale s: V = F / (2 s) + 0.5. Ground-truth targets stay
inside [0, 1] by construction of s; predictions are never clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import DegenerateDims, NonPositiveScale, ShapeMismatch, TimestepOutOfRange
from .flow_core import FlowField

SCALE_MARGIN = 1.25


@dataclass
class NormalizedFlow:
    """Scale-normalized displacement field with its instance scale attached."""

    data: torch.Tensor
    scale: float

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 2:
            raise ValueError(f"NormalizedFlow expects (H, W, 2), got {tuple(self.data.shape)}")
        if self.scale <= 0:
            raise NonPositiveScale(f"scale must be positive, got {self.scale}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class CoordGrid:
    """(H, W, 3) spatiotemporal coordinates (x, y, t), each channel in [-1, 1]."""

    data: torch.Tensor

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"CoordGrid expects (H, W, 3), got {tuple(self.data.shape)}")


def _check_dims(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ShapeMismatch(f"{what}: {tuple(a.shape[:2])} vs {tuple(b.shape[:2])}")


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise TimestepOutOfRange(f"t={t} outside [0, 1]")
    return t


def compute_scale(f01: FlowField, f10: FlowField) -> float:
    """Instance scale: margin * max(per-component max |f01|, max |f10|, 1)."""
    _check_dims(f01.data, f10.data, "compute_scale")
    m = max(float(f01.data.abs().max()), float(f10.data.abs().max()), 1.0)
    return SCALE_MARGIN * m


def normalize(f: FlowField, s: float) -> NormalizedFlow:
    """V = F / (2 s) + 0.5; with s from compute_scale the result lies in [0.1, 0.9]."""
    if s <= 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    return NormalizedFlow(f.data / (2.0 * s) + 0.5, float(s))


def denormalize(v: NormalizedFlow) -> FlowField:
    """Inverse of normalize: F = (V - 0.5) * 2 s."""
    return FlowField((v.data - 0.5) * (2.0 * v.scale))


def make_target(ft0: FlowField, ft1: FlowField, s: float) -> NormalizedFlow:
    """Normalized supervision target from bilateral flows: V_t = phi(ft1 - ft0)."""
    _check_dims(ft0.data, ft1.data, "make_target")
    if s <= 0:
        raise NonPositiveScale(f"scale must be positive, got {s}")
    return NormalizedFlow((ft1.data - ft0.data) / (2.0 * s) + 0.5, float(s))


def split_bilateral(v: NormalizedFlow, t: float) -> tuple[FlowField, FlowField]:
    """Denormalize and split into bilateral flows: (-t * D, (1 - t) * D)."""
    t = _check_t(t)
    d = denormalize(v).data
    return FlowField(-t * d), FlowField((1.0 - t) * d)


def scaled_bidirectional(f01: FlowField, f10: FlowField, t: float) -> tuple[FlowField, FlowField]:
    """Endpoint flows rescaled toward timestep t: (t * f01, (1 - t) * f10)."""
    _check_dims(f01.data, f10.data, "scaled_bidirectional")
    t = _check_t(t)
    return FlowField(t * f01.data), FlowField((1.0 - t) * f10.data)


def coord_grid(h: int, w: int, t: float, dtype: torch.dtype = torch.float32) -> CoordGrid:
    """Grid with x, y linearly spanning [-1, 1] and a constant t channel at 2t - 1."""
    if h < 2 or w < 2:
        raise DegenerateDims(f"coord_grid needs h, w >= 2, got {h}x{w}")
    t = _check_t(t)
    xs = torch.linspace(-1.0, 1.0, w, dtype=dtype)
    ys = torch.linspace(-1.0, 1.0, h, dtype=dtype)
    gx = xs.view(1, w, 1).expand(h, w, 1)
    gy = ys.view(h, 1, 1).expand(h, w, 1)
    gt = torch.full((h, w, 1), 2.0 * t - 1.0, dtype=dtype)
    return CoordGrid(torch.cat([gx, gy, gt], dim=2))
