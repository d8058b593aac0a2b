"""Comparison motion models sharing the (f01, f10, t) -> bilateral-flow contract:
a linear combination of the endpoint flows and a forward-warping predictor.
"""

from __future__ import annotations

import torch

from .errors import ShapeMismatch, TimestepOutOfRange
from .flow_core import FlowField
from .warping import forward_splat


def _check(f01: FlowField, f10: FlowField, t: float) -> float:
    if f01.data.shape != f10.data.shape:
        raise ShapeMismatch(f"{tuple(f01.data.shape)} vs {tuple(f10.data.shape)}")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise TimestepOutOfRange(f"t={t} outside [0, 1]")
    return t


def linear_motion(f01: FlowField, f10: FlowField, t: float) -> tuple[FlowField, FlowField]:
    """Constant-velocity combination of the endpoint flows.

    ft0 = -(1-t) t f01 + t^2 f10 and ft1 = (1-t)^2 f01 - t (1-t) f10; exact for
    constant translation, boundary-correct at t in {0, 1}.
    """
    t = _check(f01, f10, t)
    a, b = f01.data, f10.data
    ft0 = -(1.0 - t) * t * a + (t * t) * b
    ft1 = (1.0 - t) ** 2 * a - t * (1.0 - t) * b
    return FlowField(ft0), FlowField(ft1)


def fwarp_motion(f01: FlowField, f10: FlowField, t: float) -> tuple[FlowField, FlowField]:
    """Forward-splat the negated scaled flows to timestep t with uniform weights.

    Pixels no splat contribution reaches (coverage zero) fall back to the
    linear_motion prediction, keeping the baseline total and deterministic.
    """
    t = _check(f01, f10, t)
    lin0, lin1 = linear_motion(f01, f10, t)
    zeros = torch.zeros_like(f01.data[..., :1])

    out0, cov0 = forward_splat(-t * f01.data, t * f01.data, zeros, mode="softmax")
    out1, cov1 = forward_splat(-(1.0 - t) * f10.data, (1.0 - t) * f10.data, zeros, mode="softmax")
    hole0 = cov0 <= 1e-8
    hole1 = cov1 <= 1e-8
    ft0 = torch.where(hole0, lin0.data, out0)
    ft1 = torch.where(hole1, lin1.data, out1)
    return FlowField(ft0), FlowField(ft1)
