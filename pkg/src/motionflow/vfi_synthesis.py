"""Frame synthesis on top of predicted bilateral flows: backward-warp the two
input frames, predict a fusion mask with a small conv net, fuse convexly, and
train end to end with Laplacian + Charbonnier + census photometric losses plus
a boundary-flow reconstruction term.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import (
    ChecksumFailure,
    EmptyDataset,
    NonFiniteLoss,
    ScaleMismatch,
    ShapeMismatch,
    TimestepOutOfRange,
    TooSmall,
)
from .flow_core import FlowField, FrameImage, MotionSpec, synth_flow, synth_frame
from .gimm_model import GimmConfig, GimmModel, TrainLog, _norm_loss
from .gimm_model import load_sections, save_sections, load_checkpoint
from .normalization import NormalizedFlow
from .warping import backward_warp, gaussian3x3

CHARBONNIER_EPS = 1e-3
CENSUS_PATCH = 7
LAP_LEVELS = 5


@dataclass
class VfiConfig:
    lambda_rec: float = 1.0
    use_residual: bool = False
    w_lap: float = 1.0
    w_char: float = 1.0
    w_census: float = 1.0
    freeze_gimm: bool = False

    def __post_init__(self):
        for name in ("lambda_rec", "w_lap", "w_char", "w_census"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class VfiTrainConfig:
    steps: int = 800
    batch_size: int = 2
    lr: float = 8e-5
    min_lr: float = 8e-6
    warmup_steps: int = 50
    weight_decay: float = 4e-5
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0


@dataclass
class VfiSample:
    """One supervised interpolation triple: endpoint frames + flows, target at t."""

    frame0: FrameImage
    frame1: FrameImage
    f01: FlowField
    f10: FlowField
    t: float
    target: FrameImage


def make_vfi_samples(spec: MotionSpec, h: int, w: int, timesteps: list[float]) -> list[VfiSample]:
    """Render supervised triples along one analytic trajectory."""
    frame0 = synth_frame(spec, 0.0, h, w)
    frame1 = synth_frame(spec, 1.0, h, w)
    f01 = synth_flow(spec, 0.0, 1.0, h, w)
    f10 = synth_flow(spec, 1.0, 0.0, h, w)
    return [
        VfiSample(frame0, frame1, f01, f10, float(t), synth_frame(spec, float(t), h, w))
        for t in timesteps
    ]


class SynthesisNet(nn.Module):
    """Mask (and optional residual) head over warped frames and bilateral flows."""

    def __init__(self, use_residual: bool = False):
        super().__init__()
        self.use_residual = use_residual
        out_ch = 1 + (3 if use_residual else 0)
        self.net = nn.Sequential(
            nn.Conv2d(10, 32, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, 32, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, out_ch, 3, padding=1),
        )

    def forward(self, it0, it1, ft0, ft1):
        """Inputs channel-last; returns (mask (H,W,1) in [0,1], residual or None)."""
        x = torch.cat([it0, it1, ft0, ft1], dim=2).permute(2, 0, 1).unsqueeze(0)
        y = self.net(x).squeeze(0).permute(1, 2, 0)
        mask = torch.sigmoid(y[..., :1])
        residual = y[..., 1:4] if self.use_residual else None
        return mask, residual


@dataclass
class VfiModel:
    """GIMM motion model bundled with its synthesis head."""

    gimm: GimmModel
    synth: SynthesisNet
    config: VfiConfig


# ---------------------------------------------------------------------------
# Warping / fusion
# ---------------------------------------------------------------------------


def warp_frames(
    i0: FrameImage, i1: FrameImage, ft0: FlowField, ft1: FlowField
) -> tuple[FrameImage, FrameImage]:
    """Backward-warp each input frame by its bilateral flow."""
    if i0.data.shape != i1.data.shape or i0.data.shape[:2] != ft0.data.shape[:2]:
        raise ShapeMismatch("frames and flows must share H x W")
    return (
        FrameImage(backward_warp(i0.data, ft0.data)),
        FrameImage(backward_warp(i1.data, ft1.data)),
    )


def fuse(
    it0: FrameImage,
    it1: FrameImage,
    mask: torch.Tensor,
    residual: torch.Tensor | None = None,
) -> FrameImage:
    """Convex fusion mask * it0 + (1 - mask) * it1, optional residual then clip."""
    if it0.data.shape != it1.data.shape:
        raise ShapeMismatch(f"{tuple(it0.data.shape)} vs {tuple(it1.data.shape)}")
    if mask.shape != it0.data.shape[:2] + (1,):
        raise ShapeMismatch(f"mask must be (H, W, 1), got {tuple(mask.shape)}")
    if float(mask.min()) < 0.0 or float(mask.max()) > 1.0:
        raise ValueError("fusion mask must lie in [0, 1]")
    out = mask * it0.data + (1.0 - mask) * it1.data
    if residual is not None:
        out = out + residual
    return FrameImage(out.clamp(0.0, 1.0))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _frame_tensor(x) -> torch.Tensor:
    return x.data if isinstance(x, FrameImage) else x


def charbonnier_loss(a, b, eps: float = CHARBONNIER_EPS, gamma: float = 0.5) -> torch.Tensor:
    """Mean of ((a - b)^2 + eps^2)^gamma; equals eps for identical inputs."""
    ta, tb = _frame_tensor(a), _frame_tensor(b)
    if ta.shape != tb.shape:
        raise ShapeMismatch(f"{tuple(ta.shape)} vs {tuple(tb.shape)}")
    diff = ta - tb
    return ((diff * diff + eps * eps) ** gamma).mean()


def _downsample(x: torch.Tensor) -> torch.Tensor:
    return gaussian3x3(x)[::2, ::2]


def _upsample(x: torch.Tensor, h: int, w: int) -> torch.Tensor:
    return x.repeat_interleave(2, dim=0)[:h].repeat_interleave(2, dim=1)[:, :w]


def _laplacian_bands(x: torch.Tensor, levels: int) -> list[torch.Tensor]:
    bands = []
    cur = x
    for _ in range(levels - 1):
        down = _downsample(cur)
        bands.append(cur - _upsample(down, cur.shape[0], cur.shape[1]))
        cur = down
    bands.append(cur)  # low-pass residual
    return bands


def laplacian_loss(a, b, levels: int = LAP_LEVELS) -> torch.Tensor:
    """Sum over pyramid levels of 2^level * mean-L1 band distance.

    Levels 0..levels-2 are band-pass differences; the last is the low-pass
    residual, so constant offsets register only there.
    """
    ta, tb = _frame_tensor(a), _frame_tensor(b)
    if ta.shape != tb.shape:
        raise ShapeMismatch(f"{tuple(ta.shape)} vs {tuple(tb.shape)}")
    if min(ta.shape[0], ta.shape[1]) < 16:
        raise TooSmall(f"laplacian_loss needs min dim >= 16 for {levels} levels")
    bands_a = _laplacian_bands(ta, levels)
    bands_b = _laplacian_bands(tb, levels)
    loss = ta.new_zeros(())
    for level, (ba, bb) in enumerate(zip(bands_a, bands_b)):
        loss = loss + (2.0**level) * (ba - bb).abs().mean()
    return loss


_GRAY = (0.299, 0.587, 0.114)


def _gray255(x: torch.Tensor) -> torch.Tensor:
    return (_GRAY[0] * x[..., 0] + _GRAY[1] * x[..., 1] + _GRAY[2] * x[..., 2]) * 255.0


def _census_descriptor(gray: torch.Tensor, patch: int) -> torch.Tensor:
    """Soft-sign differences of each patch neighbor to the center pixel."""
    h, w = gray.shape
    r = patch // 2
    out = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            shifted = gray.new_zeros(h, w)
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            shifted[ys0:ys1, xs0:xs1] = gray[ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx]
            d = shifted - gray
            out.append(d / torch.sqrt(0.81 + d * d))
    return torch.stack(out, dim=-1)


def census_loss(a, b, patch: int = CENSUS_PATCH, eps: float = CHARBONNIER_EPS) -> torch.Tensor:
    """Soft Hamming distance between census descriptors, Charbonnier-robustified.

    Grayscale census over patch x patch neighborhoods; a border of patch // 2
    pixels is excluded from the average.
    """
    ta, tb = _frame_tensor(a), _frame_tensor(b)
    if ta.shape != tb.shape:
        raise ShapeMismatch(f"{tuple(ta.shape)} vs {tuple(tb.shape)}")
    h, w = ta.shape[:2]
    if min(h, w) < patch:
        raise TooSmall(f"census_loss needs min dim >= {patch}")
    da = _census_descriptor(_gray255(ta), patch)
    db = _census_descriptor(_gray255(tb), patch)
    dist = (da - db) ** 2
    ham = (dist / (0.1 + dist)).sum(dim=-1)
    charb = (ham * ham + eps * eps) ** 0.5
    border = patch // 2
    return charb[border : h - border, border : w - border].mean()


def rec_loss(
    v0_hat: NormalizedFlow, v1_hat: NormalizedFlow, v0: NormalizedFlow, v1: NormalizedFlow
) -> torch.Tensor:
    """Boundary-flow reconstruction: pixel-mean L2 norms at t=0 and t=1, summed."""
    for pred, ref in ((v0_hat, v0), (v1_hat, v1)):
        if abs(pred.scale - ref.scale) > 1e-9 * max(pred.scale, ref.scale):
            raise ScaleMismatch(f"scales differ: {pred.scale} vs {ref.scale}")
        if pred.data.shape != ref.data.shape:
            raise ShapeMismatch(f"{tuple(pred.data.shape)} vs {tuple(ref.data.shape)}")
    return _norm_loss(v0_hat.data, v0.data) + _norm_loss(v1_hat.data, v1.data)


def total_loss(
    pred_frame: FrameImage,
    gt_frame: FrameImage,
    boundary_flows: tuple[NormalizedFlow, NormalizedFlow, NormalizedFlow, NormalizedFlow] | None,
    config: VfiConfig,
) -> tuple[torch.Tensor, dict]:
    """Weighted photometric losses plus lambda_rec * reconstruction term.

    Returns (total, breakdown); the breakdown holds the weighted contributions
    and they sum to the total.
    """
    lap = config.w_lap * laplacian_loss(pred_frame, gt_frame)
    char = config.w_char * charbonnier_loss(pred_frame, gt_frame)
    census = config.w_census * census_loss(pred_frame, gt_frame)
    interp = lap + char + census
    breakdown = {"lap": lap, "char": char, "census": census, "interp": interp}
    if config.lambda_rec > 0 and boundary_flows is not None:
        rec = config.lambda_rec * rec_loss(*boundary_flows)
    else:
        rec = interp.new_zeros(())
    breakdown["rec"] = rec
    total = interp + rec
    breakdown["total"] = total
    return total, breakdown


# ---------------------------------------------------------------------------
# Training and inference
# ---------------------------------------------------------------------------


def _cosine_lr(step: int, hyper: VfiTrainConfig) -> float:
    if hyper.warmup_steps > 0 and step < hyper.warmup_steps:
        return hyper.lr * (step + 1) / hyper.warmup_steps
    span = max(1, hyper.steps - hyper.warmup_steps)
    progress = min(1.0, (step - hyper.warmup_steps) / span)
    return hyper.min_lr + 0.5 * (hyper.lr - hyper.min_lr) * (1.0 + math.cos(math.pi * progress))


def _vfi_step_output(gimm: GimmModel, synth: SynthesisNet, sample: VfiSample, config: VfiConfig):
    f01, f10 = sample.f01.data, sample.f10.data
    v_hat, ft0, ft1, s = gimm(f01, f10, sample.t)
    it0 = backward_warp(sample.frame0.data, ft0)
    it1 = backward_warp(sample.frame1.data, ft1)
    mask, residual = synth(it0, it1, ft0, ft1)
    out = mask * it0 + (1.0 - mask) * it1
    if residual is not None:
        out = out + residual
    pred = FrameImage(out.clamp(0.0, 1.0))

    boundary = None
    if config.lambda_rec > 0:
        v0_hat, _, _, s0 = gimm(f01, f10, 0.0)
        v1_hat, _, _, s1 = gimm(f01, f10, 1.0)
        v0 = NormalizedFlow(f01 / (2.0 * s0) + 0.5, s0)
        v1 = NormalizedFlow(-f10 / (2.0 * s1) + 0.5, s1)
        boundary = (
            NormalizedFlow(v0_hat, s0),
            NormalizedFlow(v1_hat, s1),
            v0,
            v1,
        )
    return pred, boundary


def train_vfi(
    dataset: list[VfiSample],
    gimm_ckpt,
    config: VfiConfig | None = None,
    hyper: VfiTrainConfig | None = None,
) -> tuple[VfiModel, TrainLog]:
    """Joint (or synthesis-only, if frozen) optimization from a trained motion model.

    gimm_ckpt is a checkpoint path or an existing GimmModel. Deterministic
    under hyper.seed.
    """
    config = config or VfiConfig()
    hyper = hyper or VfiTrainConfig()
    if not dataset:
        raise EmptyDataset("VFI training needs at least one sample")
    if isinstance(gimm_ckpt, GimmModel):
        gimm = gimm_ckpt
    else:
        gimm, _ = load_checkpoint(gimm_ckpt)

    torch.manual_seed(hyper.seed)
    synth = SynthesisNet(use_residual=config.use_residual)
    params = list(synth.parameters())
    if config.freeze_gimm:
        for p in gimm.parameters():
            p.requires_grad_(False)
    else:
        params += list(gimm.parameters())
    opt = torch.optim.AdamW(
        params, lr=hyper.lr, betas=hyper.betas, weight_decay=hyper.weight_decay
    )
    gen = torch.Generator().manual_seed(hyper.seed * 0x9E3779B1 % (2**31) + 13)
    log = TrainLog()

    for step in range(hyper.steps):
        lr = _cosine_lr(step, hyper)
        for group in opt.param_groups:
            group["lr"] = lr
        loss_sum = None
        for _ in range(hyper.batch_size):
            si = int(torch.randint(len(dataset), (1,), generator=gen))
            sample = dataset[si]
            pred, boundary = _vfi_step_output(gimm, synth, sample, config)
            term, _ = total_loss(pred, sample.target, boundary, config)
            loss_sum = term if loss_sum is None else loss_sum + term
        loss = loss_sum / hyper.batch_size
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"VFI loss became non-finite at step {step} (lr={lr})")
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.losses.append(float(loss.detach()))
    if config.freeze_gimm:
        for p in gimm.parameters():
            p.requires_grad_(True)
    return VfiModel(gimm=gimm, synth=synth, config=config), log


def interpolate(
    i0: FrameImage,
    i1: FrameImage,
    flows: tuple[FlowField, FlowField],
    ts: list[float],
    model: VfiModel,
) -> list[FrameImage]:
    """Synthesize one frame per requested timestep, in the given order."""
    f01, f10 = flows
    if i0.data.shape != i1.data.shape or i0.data.shape[:2] != f01.data.shape[:2]:
        raise ShapeMismatch("frames and flows must share H x W")
    for t in ts:
        if not 0.0 <= float(t) <= 1.0:
            raise TimestepOutOfRange(f"t={t} outside [0, 1]")
    out = []
    with torch.no_grad():
        for t in ts:
            _, ft0, ft1, _ = model.gimm(f01.data, f10.data, float(t))
            it0 = backward_warp(i0.data, ft0)
            it1 = backward_warp(i1.data, ft1)
            mask, residual = model.synth(it0, it1, ft0, ft1)
            outf = mask * it0 + (1.0 - mask) * it1
            if residual is not None:
                outf = outf + residual
            out.append(FrameImage(outf.clamp(0.0, 1.0)))
    return out


def save_vfi_checkpoint(model: VfiModel, path) -> None:
    """Bundle the motion-model section with the synthesis section."""
    save_sections(
        path,
        [
            ("gimm", asdict(model.gimm.config), dict(model.gimm.state_dict())),
            ("synth", asdict(model.config), dict(model.synth.state_dict())),
        ],
    )


def load_vfi_checkpoint(path) -> VfiModel:
    sections = {name: (cfg, state) for name, cfg, state in load_sections(path)}
    if "gimm" not in sections or "synth" not in sections:
        raise ChecksumFailure(f"{path}: missing gimm/synth sections")
    gimm_cfg, gimm_state = sections["gimm"]
    gimm = GimmModel(GimmConfig(**gimm_cfg))
    gimm.load_state_dict(gimm_state)
    vfi_cfg, synth_state = sections["synth"]
    config = VfiConfig(**vfi_cfg)
    synth = SynthesisNet(use_residual=config.use_residual)
    synth.load_state_dict(synth_state)
    return VfiModel(gimm=gimm, synth=synth, config=config)
