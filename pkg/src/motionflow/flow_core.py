"""Flow and frame data types, `.flo` I/O, flow visualization, and the analytic
synthetic-motion oracle.

All in-memory fields are channel-last torch tensors: flows are (H, W, 2) pixel
displacements with channel 0 horizontal (u) and channel 1 vertical (v), frames
are (H, W, 3) RGB in [0, 1]. The oracle evaluates closed-form trajectories and
an analytic texture, so generated frames and flows are mutually consistent by
construction (no discrete-warp rendering error).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import BadMagic, InvalidSpec, IoError, Truncated

FLO_MAGIC = b"PIEH"
RAW_MAGIC = b"MFL8"

MOTION_KINDS = ("translation", "quadratic", "rotation", "zoom")


def _as_tensor(data, channels: int, name: str) -> torch.Tensor:
    if isinstance(data, np.ndarray):
        data = torch.from_numpy(data)
    if not isinstance(data, torch.Tensor):
        data = torch.as_tensor(data)
    if data.ndim != 3 or data.shape[2] != channels:
        raise ValueError(f"{name} expects (H, W, {channels}) data, got {tuple(data.shape)}")
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError(f"{name} needs at least one row and column")
    if not data.dtype.is_floating_point:
        data = data.float()
    return data


@dataclass
class FlowField:
    """Per-pixel displacement map in pixels, (H, W, 2) with (u, v) channels."""

    data: torch.Tensor

    def __post_init__(self):
        self.data = _as_tensor(self.data, 2, "FlowField")
        if not torch.isfinite(self.data).all():
            raise ValueError("FlowField requires finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def zeros(cls, h: int, w: int, dtype: torch.dtype = torch.float32) -> "FlowField":
        return cls(torch.zeros(h, w, 2, dtype=dtype))


@dataclass
class FrameImage:
    """RGB frame, (H, W, 3), values clamped into [0, 1] at construction."""

    data: torch.Tensor

    def __post_init__(self):
        data = _as_tensor(self.data, 3, "FrameImage")
        if not torch.isfinite(data).all():
            raise ValueError("FrameImage requires finite values")
        self.data = data.clamp(0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class MotionSpec:
    """Parameters of one analytic motion trajectory.

    kind selects the trajectory family:
      translation  p(t) = p0 + velocity * t
      quadratic    p(t) = p0 + velocity * t + accel * t^2 / 2
      rotation     rotate about center with angular velocity omega (rad/unit t)
      zoom         scale about center by (1 + rate * t)

    center is in (x, y) pixel coordinates; None means the frame center.
    """

    kind: str
    velocity: tuple[float, float] = (0.0, 0.0)
    accel: tuple[float, float] = (0.0, 0.0)
    omega: float = 0.0
    rate: float = 0.0
    center: tuple[float, float] | None = None
    texture_seed: int = 0

    def resolved_center(self, h: int, w: int) -> tuple[float, float]:
        if self.center is None:
            return ((w - 1) / 2.0, (h - 1) / 2.0)
        return (float(self.center[0]), float(self.center[1]))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "texture_seed": self.texture_seed}
        if self.kind in ("translation", "quadratic"):
            out["velocity"] = list(self.velocity)
        if self.kind == "quadratic":
            out["accel"] = list(self.accel)
        if self.kind == "rotation":
            out["omega"] = self.omega
        if self.kind == "zoom":
            out["rate"] = self.rate
        if self.kind in ("rotation", "zoom") and self.center is not None:
            out["center"] = list(self.center)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MotionSpec":
        if "kind" not in d:
            raise InvalidSpec("motion spec missing field 'kind'")
        kind = d["kind"]
        if kind not in MOTION_KINDS:
            raise InvalidSpec(f"unknown motion kind {kind!r} (field 'kind')")
        kwargs = {"kind": kind, "texture_seed": int(d.get("texture_seed", 0))}
        try:
            if "velocity" in d:
                vx, vy = d["velocity"]
                kwargs["velocity"] = (float(vx), float(vy))
            if "accel" in d:
                ax, ay = d["accel"]
                kwargs["accel"] = (float(ax), float(ay))
            if "omega" in d:
                kwargs["omega"] = float(d["omega"])
            if "rate" in d:
                kwargs["rate"] = float(d["rate"])
            if d.get("center") is not None:
                cx, cy = d["center"]
                kwargs["center"] = (float(cx), float(cy))
        except (TypeError, ValueError) as exc:
            raise InvalidSpec(f"malformed motion spec field: {exc}") from exc
        return cls(**kwargs)


@dataclass
class MotionSample:
    """Frame pair with bidirectional flows and labeled intermediate flows.

    gt holds (t, flow_t_to_0, flow_t_to_1) sorted by strictly increasing t.
    scale is the instance normalization scale of (f01, f10).
    """

    frames: tuple[FrameImage, FrameImage]
    f01: FlowField
    f10: FlowField
    gt: list[tuple[float, FlowField, FlowField]] = field(default_factory=list)
    scale: float = 1.0
    spec: MotionSpec | None = None

    def __post_init__(self):
        h, w = self.f01.height, self.f01.width
        fields = [self.frames[0].data, self.frames[1].data, self.f10.data]
        for _, ft0, ft1 in self.gt:
            fields.extend([ft0.data, ft1.data])
        for f in fields:
            if f.shape[0] != h or f.shape[1] != w:
                raise ValueError("MotionSample fields must share H x W")
        ts = [t for t, _, _ in self.gt]
        if any(not (0.0 <= t <= 1.0) for t in ts):
            raise ValueError("gt timesteps must lie in [0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("gt timesteps must be strictly increasing")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        from .normalization import compute_scale

        expected = compute_scale(self.f01, self.f10)
        if abs(self.scale - expected) > 1e-6 * expected:
            raise ValueError(
                f"scale {self.scale} does not match compute_scale(f01, f10) = {expected}"
            )

    @property
    def height(self) -> int:
        return self.f01.height

    @property
    def width(self) -> int:
        return self.f01.width

    def gt_at(self, t: float, tol: float = 1e-9) -> tuple[FlowField, FlowField]:
        for tt, ft0, ft1 in self.gt:
            if abs(tt - t) <= tol:
                return ft0, ft1
        raise KeyError(f"no ground-truth flows labeled at t={t}")


# ---------------------------------------------------------------------------
# Middlebury .flo and raw float64 codecs
# ---------------------------------------------------------------------------


def read_flo(path) -> FlowField:
    """Read a Middlebury .flo file (magic, int32 W/H, float32 (u, v) pairs)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(data) < 4:
        raise Truncated(f"{path}: shorter than the 4-byte magic")
    if data[:4] != FLO_MAGIC:
        raise BadMagic(f"{path}: expected magic {FLO_MAGIC!r}, found {data[:4]!r}")
    if len(data) < 12:
        raise Truncated(f"{path}: missing width/height header")
    w, h = struct.unpack("<ii", data[4:12])
    if w < 1 or h < 1:
        raise Truncated(f"{path}: nonsensical dimensions {w}x{h}")
    count = h * w * 2
    expected = 12 + 4 * count
    if len(data) < expected:
        raise Truncated(f"{path}: expected {expected} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=12)
    arr = arr.reshape(h, w, 2).astype(np.float32)
    return FlowField(torch.from_numpy(arr.copy()))


def write_flo(flow: FlowField, path) -> None:
    """Write a FlowField to .flo, the exact byte layout accepted by read_flo."""
    arr = flow.data.detach().cpu().numpy().astype("<f4")
    payload = FLO_MAGIC + struct.pack("<ii", flow.width, flow.height) + arr.tobytes()
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_raw_flow(path) -> FlowField:
    """Read the internal float64 cache format (magic, int32 W/H, float64 pairs)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(data) < 4:
        raise Truncated(f"{path}: shorter than the 4-byte magic")
    if data[:4] != RAW_MAGIC:
        raise BadMagic(f"{path}: expected magic {RAW_MAGIC!r}, found {data[:4]!r}")
    if len(data) < 12:
        raise Truncated(f"{path}: missing width/height header")
    w, h = struct.unpack("<ii", data[4:12])
    count = h * w * 2
    if len(data) < 12 + 8 * count:
        raise Truncated(f"{path}: expected {12 + 8 * count} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f8", count=count, offset=12).reshape(h, w, 2)
    return FlowField(torch.from_numpy(arr.copy()))


def write_raw_flow(flow: FlowField, path) -> None:
    arr = flow.data.detach().cpu().numpy().astype("<f8")
    payload = RAW_MAGIC + struct.pack("<ii", flow.width, flow.height) + arr.tobytes()
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Analytic motion oracle
# ---------------------------------------------------------------------------


def validate_spec(spec: MotionSpec, h: int, w: int) -> None:
    """Check spec invariants against a frame size; raise InvalidSpec if violated."""
    if spec.kind not in MOTION_KINDS:
        raise InvalidSpec(f"unknown motion kind {spec.kind!r}")
    if spec.kind in ("rotation", "zoom"):
        cx, cy = spec.resolved_center(h, w)
        if not (0.0 <= cx <= w - 1 and 0.0 <= cy <= h - 1):
            raise InvalidSpec(f"center ({cx}, {cy}) lies outside the {h}x{w} frame")
    if spec.kind == "zoom" and spec.rate <= -1.0:
        raise InvalidSpec(f"zoom rate {spec.rate} collapses the scene within [0, 1]")
    xs, ys = _grid(h, w)
    dx, dy = _displacement(spec, xs, ys, 0.0, 1.0, h, w)
    max_disp = float(np.sqrt(dx * dx + dy * dy).max())
    limit = min(h, w) / 4.0 + 1e-9
    if max_disp > limit:
        raise InvalidSpec(
            f"displacement at t=1 reaches {max_disp:.3f} px, over the "
            f"min(H, W)/4 = {limit:.3f} px limit"
        )


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs, ys


def _advect(spec: MotionSpec, xs, ys, src_t: float, dst_t: float, h: int, w: int):
    """Positions at dst_t of particles located at (xs, ys) at src_t."""
    if spec.kind == "translation":
        vx, vy = spec.velocity
        dt = dst_t - src_t
        return xs + vx * dt, ys + vy * dt
    if spec.kind == "quadratic":
        vx, vy = spec.velocity
        ax, ay = spec.accel
        dt = dst_t - src_t
        dt2 = dst_t * dst_t - src_t * src_t
        return xs + vx * dt + 0.5 * ax * dt2, ys + vy * dt + 0.5 * ay * dt2
    cx, cy = spec.resolved_center(h, w)
    rx, ry = xs - cx, ys - cy
    if spec.kind == "rotation":
        theta = spec.omega * (dst_t - src_t)
        c, s = math.cos(theta), math.sin(theta)
        return cx + c * rx - s * ry, cy + s * rx + c * ry
    if spec.kind == "zoom":
        factor = (1.0 + spec.rate * dst_t) / (1.0 + spec.rate * src_t)
        return cx + factor * rx, cy + factor * ry
    raise InvalidSpec(f"unknown motion kind {spec.kind!r}")


def _displacement(spec, xs, ys, src_t, dst_t, h, w):
    xd, yd = _advect(spec, xs, ys, src_t, dst_t, h, w)
    return xd - xs, yd - ys


def synth_flow(spec: MotionSpec, src_t: float, dst_t: float, h: int, w: int) -> FlowField:
    """Exact displacement field from pixel positions at src_t to dst_t."""
    if not (0.0 <= src_t <= 1.0 and 0.0 <= dst_t <= 1.0):
        raise InvalidSpec(f"timesteps ({src_t}, {dst_t}) must lie in [0, 1]")
    validate_spec(spec, h, w)
    xs, ys = _grid(h, w)
    dx, dy = _displacement(spec, xs, ys, src_t, dst_t, h, w)
    data = np.stack([dx, dy], axis=-1).astype(np.float32)
    return FlowField(torch.from_numpy(data))


class _Texture:
    """Analytic scene texture: seeded sinusoid bank plus band-limited detail.

    Evaluable at arbitrary real positions, so frames rendered along a
    trajectory stay exactly consistent with the oracle flows.
    """

    PRIMARY_WAVES = 8
    DETAIL_WAVES = 16

    def __init__(self, seed: int):
        rng = np.random.default_rng((int(seed) & 0xFFFF_FFFF) + 0x5EED)
        rows = []
        for _ in range(3):  # per RGB channel
            lam_p = rng.uniform(12.0, 48.0, self.PRIMARY_WAVES)
            lam_d = rng.uniform(6.0, 12.0, self.DETAIL_WAVES)
            lam = np.concatenate([lam_p, lam_d])
            theta = rng.uniform(0.0, 2.0 * np.pi, lam.size)
            amp = np.concatenate(
                [
                    rng.uniform(0.5, 1.0, self.PRIMARY_WAVES),
                    rng.uniform(0.08, 0.25, self.DETAIL_WAVES),
                ]
            )
            amp *= 0.44 / amp.sum()
            fx = np.cos(theta) / lam
            fy = np.sin(theta) / lam
            phase = rng.uniform(0.0, 2.0 * np.pi, lam.size)
            rows.append((fx, fy, amp, phase))
        self._rows = rows

    def sample(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        out = np.empty(xs.shape + (3,), dtype=np.float64)
        tau = 2.0 * np.pi
        for c, (fx, fy, amp, phase) in enumerate(self._rows):
            acc = np.full(xs.shape, 0.5, dtype=np.float64)
            for k in range(fx.size):
                acc += amp[k] * np.sin(tau * (fx[k] * xs + fy[k] * ys) + phase[k])
            out[..., c] = acc
        return np.clip(out, 0.0, 1.0)


def synth_frame(spec: MotionSpec, t: float, h: int, w: int) -> FrameImage:
    """Render the scene at time t by analytic backward mapping to texture space."""
    if not 0.0 <= t <= 1.0:
        raise InvalidSpec(f"timestep {t} must lie in [0, 1]")
    validate_spec(spec, h, w)
    xs, ys = _grid(h, w)
    x0, y0 = _advect(spec, xs, ys, t, 0.0, h, w)
    tex = _Texture(spec.texture_seed)
    return FrameImage(torch.from_numpy(tex.sample(x0, y0).astype(np.float32)))


def synth_sample(spec: MotionSpec, h: int, w: int, timesteps: list[float]) -> MotionSample:
    """Build a full training/eval sample: frames, endpoint flows, labeled GT flows."""
    validate_spec(spec, h, w)
    ts = sorted(float(t) for t in timesteps)
    if any(not (0.0 <= t <= 1.0) for t in ts):
        raise InvalidSpec("timesteps must lie in [0, 1]")
    if any(b - a < 1e-12 for a, b in zip(ts, ts[1:])):
        raise InvalidSpec("timesteps must be distinct")
    frames = (synth_frame(spec, 0.0, h, w), synth_frame(spec, 1.0, h, w))
    f01 = synth_flow(spec, 0.0, 1.0, h, w)
    f10 = synth_flow(spec, 1.0, 0.0, h, w)
    gt = [(t, synth_flow(spec, t, 0.0, h, w), synth_flow(spec, t, 1.0, h, w)) for t in ts]

    from .normalization import compute_scale, make_target

    scale = compute_scale(f01, f10)
    for t, ft0, ft1 in gt:
        target = make_target(ft0, ft1, scale).data
        lo, hi = float(target.min()), float(target.max())
        if lo < 0.0 or hi > 1.0:
            raise InvalidSpec(
                f"normalized target at t={t} escapes [0, 1] (range [{lo:.4f}, {hi:.4f}]); "
                "motion too violent for the normalization margin"
            )
    return MotionSample(frames=frames, f01=f01, f10=f10, gt=gt, scale=scale, spec=spec)


# ---------------------------------------------------------------------------
# Flow visualization
# ---------------------------------------------------------------------------


def flow_to_rgb(flow: FlowField, max_mag: float | None = None) -> FrameImage:
    """Color-wheel flow encoding: hue from direction, saturation from magnitude.

    Zero flow maps to white. A degenerate all-zero field uses max_mag = 1.
    """
    if max_mag is not None and max_mag <= 0:
        raise ValueError("max_mag must be positive when given")
    u = flow.data[..., 0].double()
    v = flow.data[..., 1].double()
    mag = torch.sqrt(u * u + v * v)
    if max_mag is None:
        max_mag = float(mag.max())
        if max_mag <= 0.0:
            max_mag = 1.0
    hue = torch.atan2(v, u) / (2.0 * math.pi) % 1.0
    sat = (mag / max_mag).clamp(0.0, 1.0)
    val = torch.ones_like(sat)

    # standard HSV -> RGB
    h6 = hue * 6.0
    i = h6.floor()
    f = h6 - i
    p = val * (1.0 - sat)
    q = val * (1.0 - sat * f)
    t = val * (1.0 - sat * (1.0 - f))
    i = i.long() % 6
    r = torch.where(i == 0, val, torch.where(i == 1, q, torch.where(i == 2, p,
        torch.where(i == 3, p, torch.where(i == 4, t, val)))))
    g = torch.where(i == 0, t, torch.where(i == 1, val, torch.where(i == 2, val,
        torch.where(i == 3, q, torch.where(i == 4, p, p)))))
    b = torch.where(i == 0, p, torch.where(i == 1, p, torch.where(i == 2, t,
        torch.where(i == 3, val, torch.where(i == 4, val, q)))))
    rgb = torch.stack([r, g, b], dim=-1).float()
    return FrameImage(rgb)
