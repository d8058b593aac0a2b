"""Differentiable warping kernels: backward bilinear sampling, weighted forward
splatting, flow-consistency and flow-variance metrics, and the 3x3 Gaussian.

All kernels take channel-last tensors: fields are (H, W, C), flows (H, W, 2)
with (u, v) = (horizontal, vertical) pixel displacements, metric and weight
maps (H, W, 1). Everything is pure torch, differentiable with respect to field
values, flow values, splat weights, and the weight-map scalars; splat
accumulation is deterministic on CPU (serial index_add_).
"""

from __future__ import annotations

import torch

from .errors import DegenerateWeight, ShapeMismatch

# Type aliases for the shape conventions above.
FieldND = torch.Tensor   # (H, W, C)
MetricMap = torch.Tensor  # (H, W, 1), nonnegative
WeightMap = torch.Tensor  # (H, W, 1)

SPLAT_EPS = 1e-8


def _check_field(field: torch.Tensor, name: str) -> None:
    if field.ndim != 3:
        raise ShapeMismatch(f"{name} must be (H, W, C), got {tuple(field.shape)}")


def _check_flow(field: torch.Tensor, flow: torch.Tensor) -> None:
    _check_field(field, "field")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeMismatch(f"flow must be (H, W, 2), got {tuple(flow.shape)}")
    if field.shape[:2] != flow.shape[:2]:
        raise ShapeMismatch(
            f"field {tuple(field.shape[:2])} and flow {tuple(flow.shape[:2])} disagree"
        )


def backward_warp(field: FieldND, flow: torch.Tensor) -> FieldND:
    """Bilinear gather at (x + u, y + v) with replicate padding outside the frame."""
    _check_flow(field, flow)
    h, w, _ = field.shape
    dtype = field.dtype
    xs = torch.arange(w, dtype=dtype, device=field.device).view(1, w)
    ys = torch.arange(h, dtype=dtype, device=field.device).view(h, 1)
    sx = xs + flow[..., 0]
    sy = ys + flow[..., 1]

    x0 = sx.floor()
    y0 = sy.floor()
    fx = (sx - x0).unsqueeze(-1)
    fy = (sy - y0).unsqueeze(-1)
    x0l = x0.long().clamp(0, w - 1)
    x1l = (x0.long() + 1).clamp(0, w - 1)
    y0l = y0.long().clamp(0, h - 1)
    y1l = (y0.long() + 1).clamp(0, h - 1)

    v00 = field[y0l, x0l]
    v01 = field[y0l, x1l]
    v10 = field[y1l, x0l]
    v11 = field[y1l, x1l]
    return ((1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v01
            + (1 - fx) * fy * v10 + fx * fy * v11)


def gaussian3x3(field: FieldND) -> FieldND:
    """Separable [1, 2, 1]/4 blur per axis with replicate padding."""
    _check_field(field, "gaussian3x3")

    def blur(x: torch.Tensor, dim: int) -> torch.Tensor:
        first = x.narrow(dim, 0, 1)
        last = x.narrow(dim, x.shape[dim] - 1, 1)
        padded = torch.cat([first, x, last], dim=dim)
        n = x.shape[dim]
        a = padded.narrow(dim, 0, n)
        b = padded.narrow(dim, 1, n)
        c = padded.narrow(dim, 2, n)
        return (a + 2.0 * b + c) / 4.0

    return blur(blur(field, 0), 1)


def flow_consistency(f_fwd: torch.Tensor, f_bwd: torch.Tensor) -> MetricMap:
    """Per-pixel L1 norm of f_fwd + backward_warp(f_bwd, f_fwd)."""
    _check_flow(f_fwd, f_bwd)
    residual = f_fwd + backward_warp(f_bwd, f_fwd)
    return residual.abs().sum(dim=2, keepdim=True)


def flow_variance(f: torch.Tensor) -> MetricMap:
    """Local standard deviation under the Gaussian window, L2 over channels.

    Per channel: sqrt(max(G(F^2) - G(F)^2, 0)); the clamp absorbs negative
    excursions from floating-point cancellation.
    """
    _check_field(f, "flow_variance")
    mean = gaussian3x3(f)
    mean_sq = gaussian3x3(f * f)
    var = (mean_sq - mean * mean).clamp_min(0.0)
    std = torch.sqrt(var)
    return torch.sqrt((std * std).sum(dim=2, keepdim=True))


def splat_weights(
    u_flow: MetricMap,
    u_var: MetricMap,
    alpha_flow: torch.Tensor | float,
    alpha_var: torch.Tensor | float,
) -> WeightMap:
    """Importance scores 1/(1 + a_f U_f) + 1/(1 + a_v U_v); in (0, 2] for U, a >= 0."""
    if u_flow.shape != u_var.shape:
        raise ShapeMismatch(f"metric maps disagree: {tuple(u_flow.shape)} vs {tuple(u_var.shape)}")
    den_f = 1.0 + alpha_flow * u_flow
    den_v = 1.0 + alpha_var * u_var
    if float(den_f.detach().min()) <= 1e-6 or float(den_v.detach().min()) <= 1e-6:
        raise DegenerateWeight("splat weight denominator collapsed (alpha * U near -1)")
    return 1.0 / den_f + 1.0 / den_v


def forward_splat(
    field: FieldND,
    flow: torch.Tensor,
    z: WeightMap,
    mode: str = "softmax",
) -> tuple[FieldND, MetricMap]:
    """Scatter each source pixel to the four neighbors of its flow target.

    Weights are exp(z) in softmax mode or z directly in linear mode, times the
    bilinear fraction. Returns (normalized output, coverage map); pixels whose
    accumulated coverage is <= eps emit zero. Contributions landing outside the
    frame are dropped.
    """
    _check_flow(field, flow)
    if z.shape[:2] != field.shape[:2] or z.shape[2] != 1:
        raise ShapeMismatch(f"weight map must be (H, W, 1), got {tuple(z.shape)}")
    if mode not in ("softmax", "linear"):
        raise ValueError(f"unknown splat mode {mode!r}")
    h, w, c = field.shape
    dtype = field.dtype
    weight = torch.exp(z) if mode == "softmax" else z

    xs = torch.arange(w, dtype=dtype, device=field.device).view(1, w)
    ys = torch.arange(h, dtype=dtype, device=field.device).view(h, 1)
    tx = xs + flow[..., 0]
    ty = ys + flow[..., 1]
    x0 = tx.floor()
    y0 = ty.floor()
    fx = tx - x0
    fy = ty - y0
    x0l = x0.long()
    y0l = y0.long()

    num = field.new_zeros(h * w, c)
    den = field.new_zeros(h * w, 1)
    weighted = field * weight

    for xi, yi, frac in (
        (x0l, y0l, (1 - fx) * (1 - fy)),
        (x0l + 1, y0l, fx * (1 - fy)),
        (x0l, y0l + 1, (1 - fx) * fy),
        (x0l + 1, y0l + 1, fx * fy),
    ):
        inside = ((xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)).to(dtype)
        wgt = (frac * inside).unsqueeze(-1) * weight
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).reshape(-1)
        num.index_add_(0, idx, (weighted * (frac * inside).unsqueeze(-1)).reshape(h * w, c))
        den.index_add_(0, idx, wgt.reshape(h * w, 1))

    den = den.reshape(h, w, 1)
    num = num.reshape(h, w, c)
    covered = den > SPLAT_EPS
    safe_den = torch.where(covered, den, torch.ones_like(den))
    out = torch.where(covered, num / safe_den, torch.zeros_like(num))
    return out, den
