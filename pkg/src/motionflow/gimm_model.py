"""The GIMM motion model: a motion encoder, forward-warped motion features,
a latent refiner, and a latent-conditioned sinusoidal coordinate network that
predicts normalized flows at arbitrary timesteps, plus its training loop and
checkpoint format.

Ablation variants are config switches: non_fwarp (time-blend instead of
splatting), non_imp (1x1 conv head, no coordinates), non_me (raw normalized
flows as features), non_refiner (fixed linear projection), t_coord_only
(spatial coordinates zeroed).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    ChecksumFailure,
    EmptyDataset,
    NonFiniteLoss,
    ScaleMismatch,
    ShapeMismatch,
    TimestepOutOfRange,
    VersionMismatch,
)
from .flow_core import FlowField
from .normalization import NormalizedFlow, coord_grid
from .warping import flow_consistency, flow_variance, forward_splat, splat_weights

logger = logging.getLogger(__name__)

ABLATIONS = ("full", "non_fwarp", "non_imp", "non_me", "non_refiner", "t_coord_only")
REFINER_INPUTS = ("warped_only", "warped_plus_initial")
SPLAT_MODES = ("softmax", "linear")

CKPT_MAGIC = b"MFCK"
CKPT_VERSION = 1


@dataclass
class GimmConfig:
    d_enc: int = 16
    d_lat: int = 32
    siren_width: int = 128
    siren_omega0: float = 30.0
    refiner_input: str = "warped_plus_initial"
    ablation: str = "full"
    splat_mode: str = "softmax"
    squared_loss: bool = False

    def __post_init__(self):
        if self.d_enc <= 0 or self.d_lat <= 0 or self.siren_width <= 0:
            raise ValueError("d_enc, d_lat and siren_width must be positive")
        if self.refiner_input not in REFINER_INPUTS:
            raise ValueError(f"refiner_input must be one of {REFINER_INPUTS}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.splat_mode not in SPLAT_MODES:
            raise ValueError(f"splat_mode must be one of {SPLAT_MODES}")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-4
    min_lr: float | None = None  # None keeps the rate constant; else cosine decay
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    crop: int | None = None
    log_every: int = 200


@dataclass
class TrainLog:
    losses: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        lines = ["step,loss"]
        lines += [f"{i},{v:.8e}" for i, v in enumerate(self.losses)]
        Path(path).write_text("\n".join(lines) + "\n")


class ResidualUnit(nn.Module):
    """Two 3x3 convolutions with a skip connection."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))


class MotionEncoder(nn.Module):
    """Two conv layers plus two residual units, resolution preserving."""

    def __init__(self, d_enc: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(2, d_enc, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(d_enc, d_enc, 3, padding=1),
            nn.SiLU(),
            ResidualUnit(d_enc),
            ResidualUnit(d_enc),
        )

    def forward(self, x):
        return self.net(x)


class LatentRefiner(nn.Module):
    """Entry conv to the latent width followed by three residual units."""

    def __init__(self, in_channels: int, d_lat: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, d_lat, 3, padding=1),
            nn.SiLU(),
            ResidualUnit(d_lat),
            ResidualUnit(d_lat),
            ResidualUnit(d_lat),
        )

    def forward(self, x):
        return self.net(x)


class SineLayer(nn.Module):
    def __init__(self, in_features: int, out_features: int, omega0: float, is_first: bool):
        super().__init__()
        self.omega0 = omega0
        self.linear = nn.Linear(in_features, out_features)
        with torch.no_grad():
            if is_first:
                bound = 1.0 / in_features
            else:
                bound = math.sqrt(6.0 / in_features) / omega0
            self.linear.weight.uniform_(-bound, bound)

    def forward(self, x):
        return torch.sin(self.omega0 * self.linear(x))


class SirenFirstLayer(nn.Module):
    """First sinusoidal layer of the conditioned network.

    The frequency scale multiplies only the spatiotemporal coordinates; the
    auxiliary latent enters at unit scale, keeping the function smooth in the
    (trainable) latent values.
    """

    def __init__(self, coord_features: int, aux_features: int, out_features: int, omega0: float):
        super().__init__()
        self.omega0 = omega0
        self.coord = nn.Linear(coord_features, out_features)
        self.aux = nn.Linear(aux_features, out_features, bias=False)
        with torch.no_grad():
            # low-frequency init over the combined fan so the response stays
            # smooth between supervised timesteps
            bound = 1.0 / (coord_features + aux_features)
            self.coord.weight.uniform_(-bound, bound)

    def forward(self, coords, aux):
        return torch.sin(self.omega0 * self.coord(coords) + self.aux(aux))


class Siren(nn.Module):
    """Five fully connected layers: four sinusoidal, one final linear."""

    def __init__(self, coord_features: int, aux_features: int, width: int,
                 out_features: int, omega0: float):
        super().__init__()
        self.first = SirenFirstLayer(coord_features, aux_features, width, omega0)
        self.hidden = nn.ModuleList(
            [
                SineLayer(width, width, omega0, is_first=False),
                SineLayer(width, width, omega0, is_first=False),
                SineLayer(width, width, omega0, is_first=False),
            ]
        )
        self.final = nn.Linear(width, out_features)
        with torch.no_grad():
            bound = math.sqrt(6.0 / width) / omega0
            self.final.weight.uniform_(-bound, bound)

    def forward(self, coords, aux):
        x = self.first(coords, aux)
        for layer in self.hidden:
            x = layer(x)
        return self.final(x)


def _to_nchw(x: torch.Tensor) -> torch.Tensor:
    return x.permute(2, 0, 1).unsqueeze(0)


def _to_hwc(x: torch.Tensor) -> torch.Tensor:
    return x.squeeze(0).permute(1, 2, 0)


class GimmModel(nn.Module):
    """Bilateral-flow predictor G(f01, f10, t) built from the config.

    Works on channel-last tensors; parameter count is recorded at
    construction as .parameter_count.
    """

    def __init__(self, config: GimmConfig | None = None):
        super().__init__()
        self.config = config or GimmConfig()
        cfg = self.config

        d_feat = 2 if cfg.ablation == "non_me" else cfg.d_enc
        if cfg.ablation != "non_me":
            self.encoder = MotionEncoder(cfg.d_enc)
        n_warped = 1 if cfg.ablation == "non_fwarp" else 2
        n_initial = 2 if cfg.refiner_input == "warped_plus_initial" else 0
        self._pre_channels = d_feat * (n_warped + n_initial)

        if cfg.ablation == "non_refiner":
            gen = torch.Generator().manual_seed(0)
            bound = 1.0 / math.sqrt(self._pre_channels)
            proj = torch.empty(self._pre_channels, cfg.d_lat)
            proj.uniform_(-bound, bound, generator=gen)
            self.register_buffer("fixed_proj", proj)
        else:
            self.refiner = LatentRefiner(self._pre_channels, cfg.d_lat)

        if cfg.ablation == "non_imp":
            self.head = nn.Sequential(
                nn.Conv2d(cfg.d_lat, cfg.siren_width, 1),
                nn.SiLU(),
                nn.Conv2d(cfg.siren_width, cfg.siren_width, 1),
                nn.SiLU(),
                nn.Conv2d(cfg.siren_width, 2, 1),
            )
        else:
            self.siren = Siren(3, cfg.d_lat, cfg.siren_width, 2, cfg.siren_omega0)

        if cfg.ablation != "non_fwarp":
            init = math.log(math.expm1(1.0))  # softplus(raw) == 1
            self.alpha_flow_raw = nn.Parameter(torch.tensor(init))
            self.alpha_var_raw = nn.Parameter(torch.tensor(init))

        self.parameter_count = sum(p.numel() for p in self.parameters())
        logger.debug("GimmModel(%s): %d parameters", cfg.ablation, self.parameter_count)

    # -- pipeline stages ---------------------------------------------------

    def encode_motion(self, v: torch.Tensor) -> torch.Tensor:
        """Motion features from a normalized flow, (H, W, 2) -> (H, W, d_enc)."""
        if v.ndim != 3 or v.shape[2] != 2:
            raise ShapeMismatch(f"normalized flow must be (H, W, 2), got {tuple(v.shape)}")
        if self.config.ablation == "non_me":
            return v
        return _to_hwc(self.encoder(_to_nchw(v)))

    def warped_features(self, k0, k1, f01, f10, t: float) -> list[torch.Tensor]:
        """Time-aligned motion features, either splatted or blended (non_fwarp)."""
        if self.config.ablation == "non_fwarp":
            return [(1.0 - t) * k0 + t * k1]
        alpha_f = F.softplus(self.alpha_flow_raw)
        alpha_v = F.softplus(self.alpha_var_raw)
        z0 = splat_weights(flow_consistency(f01, f10), flow_variance(f01), alpha_f, alpha_v)
        z1 = splat_weights(flow_consistency(f10, f01), flow_variance(f10), alpha_f, alpha_v)
        w0, _ = forward_splat(k0, t * f01, z0, mode=self.config.splat_mode)
        w1, _ = forward_splat(k1, (1.0 - t) * f10, z1, mode=self.config.splat_mode)
        return [w0, w1]

    def build_latent(self, f01, f10, v0, v1, t: float) -> torch.Tensor:
        """Motion latent at timestep t, (H, W, d_lat)."""
        if not 0.0 <= t <= 1.0:
            raise TimestepOutOfRange(f"t={t} outside [0, 1]")
        if f01.shape != f10.shape or v0.shape != v1.shape or f01.shape[:2] != v0.shape[:2]:
            raise ShapeMismatch("flows and normalized flows must share H x W")
        k0 = self.encode_motion(v0)
        k1 = self.encode_motion(v1)
        parts = self.warped_features(k0, k1, f01, f10, t)
        if self.config.refiner_input == "warped_plus_initial":
            parts = parts + [k0, k1]
        pre = torch.cat(parts, dim=2)
        if self.config.ablation == "non_refiner":
            return pre @ self.fixed_proj.to(pre.dtype)
        return _to_hwc(self.refiner(_to_nchw(pre)))

    def siren_forward(self, coords: torch.Tensor, latent: torch.Tensor) -> torch.Tensor:
        """Per-pixel normalized-flow prediction from coordinates and latent."""
        if latent.shape[:2] != coords.shape[:2]:
            raise ShapeMismatch("coords and latent must share H x W")
        if self.config.ablation == "non_imp":
            return _to_hwc(self.head(_to_nchw(latent)))
        h, w, _ = coords.shape
        if self.config.ablation == "t_coord_only":
            keep = coords.new_tensor([0.0, 0.0, 1.0])
            coords = coords * keep
        out = self.siren(coords.reshape(h * w, 3), latent.reshape(h * w, -1))
        return out.reshape(h, w, 2)

    def forward(self, f01: torch.Tensor, f10: torch.Tensor, t: float):
        """Full pipeline; returns (v_hat, flow_t_to_0, flow_t_to_1, scale)."""
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise TimestepOutOfRange(f"t={t} outside [0, 1]")
        if f01.shape != f10.shape:
            raise ShapeMismatch(f"{tuple(f01.shape)} vs {tuple(f10.shape)}")
        s = _tensor_scale(f01, f10)
        v0 = f01 / (2.0 * s) + 0.5
        v1 = -f10 / (2.0 * s) + 0.5
        latent = self.build_latent(f01, f10, v0, v1, t)
        coords = coord_grid(f01.shape[0], f01.shape[1], t, dtype=f01.dtype).data
        v_hat = self.siren_forward(coords, latent)
        d = (v_hat - 0.5) * (2.0 * s)
        return v_hat, -t * d, (1.0 - t) * d, s


def _tensor_scale(f01: torch.Tensor, f10: torch.Tensor) -> float:
    from .normalization import SCALE_MARGIN

    m = max(float(f01.abs().max()), float(f10.abs().max()), 1.0)
    return SCALE_MARGIN * m


def gimm_forward(
    model: GimmModel, f01: FlowField, f10: FlowField, t: float
) -> tuple[NormalizedFlow, FlowField, FlowField]:
    """Domain-typed entry point: normalized prediction plus bilateral flows."""
    v_hat, ft0, ft1, s = model(f01.data, f10.data, t)
    return NormalizedFlow(v_hat, s), FlowField(ft0), FlowField(ft1)


def _norm_loss(pred: torch.Tensor, target: torch.Tensor, squared: bool = False) -> torch.Tensor:
    diff = pred - target
    sq = (diff * diff).sum(dim=-1)
    if squared:
        return sq.mean()
    # guard sqrt(0) so exact matches keep finite (zero) gradients; the guard
    # keys on == 0 specifically so NaNs still propagate to the loss
    is_zero = sq == 0
    safe = torch.where(is_zero, torch.ones_like(sq), sq)
    return torch.where(is_zero, torch.zeros_like(sq), torch.sqrt(safe)).mean()


def gimm_loss(pred: NormalizedFlow, target: NormalizedFlow, squared: bool = False) -> torch.Tensor:
    """Mean over pixels of the per-pixel L2 norm of the prediction error.

    The squared variant averages squared norms instead.
    """
    if abs(pred.scale - target.scale) > 1e-9 * max(pred.scale, target.scale):
        raise ScaleMismatch(f"scales differ: {pred.scale} vs {target.scale}")
    if pred.data.shape != target.data.shape:
        raise ShapeMismatch(f"{tuple(pred.data.shape)} vs {tuple(target.data.shape)}")
    return _norm_loss(pred.data, target.data, squared=squared)


def train_gimm(
    dataset: list,
    config: GimmConfig | None = None,
    hyper: TrainConfig | None = None,
) -> tuple[GimmModel, TrainLog]:
    """Train on randomly sampled (sample, labeled timestep) pairs.

    Deterministic for a fixed seed: model init, batch composition, timestep
    draws and crop positions all derive from hyper.seed.
    """
    config = config or GimmConfig()
    hyper = hyper or TrainConfig()
    if not dataset:
        raise EmptyDataset("training needs at least one sample")
    for i, sample in enumerate(dataset):
        if not sample.gt:
            raise EmptyDataset(f"sample {i} has no ground-truth timesteps")

    torch.manual_seed(hyper.seed)
    model = GimmModel(config)
    opt = torch.optim.AdamW(
        model.parameters(), lr=hyper.lr, betas=hyper.betas, weight_decay=hyper.weight_decay
    )
    gen = torch.Generator().manual_seed(hyper.seed * 0x9E3779B1 % (2**31) + 7)
    log = TrainLog()

    for step in range(hyper.steps):
        if hyper.min_lr is not None and hyper.steps > 1:
            progress = step / (hyper.steps - 1)
            lr = hyper.min_lr + 0.5 * (hyper.lr - hyper.min_lr) * (1.0 + math.cos(math.pi * progress))
            for group in opt.param_groups:
                group["lr"] = lr
        loss_sum = None
        for _ in range(hyper.batch_size):
            si = int(torch.randint(len(dataset), (1,), generator=gen))
            sample = dataset[si]
            ti = int(torch.randint(len(sample.gt), (1,), generator=gen))
            t, ft0, ft1 = sample.gt[ti]
            f01, f10 = sample.f01.data, sample.f10.data
            d0, d1 = ft0.data, ft1.data
            h, w = f01.shape[:2]
            if hyper.crop is not None and hyper.crop < min(h, w):
                cs = hyper.crop
                y0 = int(torch.randint(h - cs + 1, (1,), generator=gen))
                x0 = int(torch.randint(w - cs + 1, (1,), generator=gen))
                f01 = f01[y0 : y0 + cs, x0 : x0 + cs]
                f10 = f10[y0 : y0 + cs, x0 : x0 + cs]
                d0 = d0[y0 : y0 + cs, x0 : x0 + cs]
                d1 = d1[y0 : y0 + cs, x0 : x0 + cs]
            s = _tensor_scale(f01, f10)
            target = (d1 - d0) / (2.0 * s) + 0.5
            v_hat, _, _, _ = model(f01, f10, float(t))
            term = _norm_loss(v_hat, target, squared=config.squared_loss)
            loss_sum = term if loss_sum is None else loss_sum + term
        loss = loss_sum / hyper.batch_size
        if not torch.isfinite(loss):
            raise NonFiniteLoss(
                f"loss became non-finite at step {step} "
                f"(lr={hyper.lr}, batch={hyper.batch_size}, ablation={config.ablation})"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        log.losses.append(float(loss.detach()))
        if hyper.log_every and step % hyper.log_every == 0:
            logger.info("step %d loss %.6f", step, log.losses[-1])
    return model, log


# ---------------------------------------------------------------------------
# Checkpoint container: magic, version, JSON header, fp32 payload, sha256
# ---------------------------------------------------------------------------


def save_sections(path, sections: list[tuple[str, dict, dict]]) -> None:
    """Write named sections of (config dict, state dict) to one container file."""
    header = {"version": CKPT_VERSION, "sections": []}
    payload = bytearray()
    for name, config_dict, state in sections:
        params = []
        for pname, tensor in state.items():
            arr = tensor.detach().cpu().to(torch.float32).numpy().astype("<f4")
            params.append({"name": pname, "shape": list(tensor.shape)})
            payload.extend(arr.tobytes())
        header["sections"].append({"name": name, "config": config_dict, "params": params})
    header_bytes = json.dumps(header, sort_keys=True).encode()
    body = CKPT_MAGIC + struct.pack("<I", CKPT_VERSION)
    body += struct.pack("<I", len(header_bytes)) + header_bytes + bytes(payload)
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_sections(path) -> list[tuple[str, dict, dict]]:
    data = Path(path).read_bytes()
    if len(data) < 44 or data[:4] != CKPT_MAGIC:
        raise ChecksumFailure(f"{path}: not a checkpoint container")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumFailure(f"{path}: checksum mismatch (truncated or corrupt)")
    (version,) = struct.unpack("<I", body[4:8])
    if version != CKPT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {CKPT_VERSION}")
    (hlen,) = struct.unpack("<I", body[8:12])
    header = json.loads(body[12 : 12 + hlen].decode())
    offset = 12 + hlen
    out = []
    for section in header["sections"]:
        state = {}
        for rec in section["params"]:
            count = int(math.prod(rec["shape"])) if rec["shape"] else 1
            nbytes = 4 * count
            if offset + nbytes > len(body):
                raise ChecksumFailure(f"{path}: payload shorter than the header declares")
            arr = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
            state[rec["name"]] = torch.from_numpy(arr.copy().reshape(rec["shape"]))
            offset += nbytes
        out.append((section["name"], section["config"], state))
    return out


def save_checkpoint(model: GimmModel, path) -> None:
    """Persist model parameters and config; round trip is bit-exact for fp32."""
    save_sections(path, [("gimm", asdict(model.config), dict(model.state_dict()))])


def load_checkpoint(path, expected_config: GimmConfig | None = None) -> tuple[GimmModel, GimmConfig]:
    sections = dict((name, (cfg, state)) for name, cfg, state in load_sections(path))
    if "gimm" not in sections:
        raise VersionMismatch(f"{path}: container has no 'gimm' section")
    cfg_dict, state = sections["gimm"]
    config = GimmConfig(**cfg_dict)
    if expected_config is not None and config != expected_config:
        diffs = [
            f"{k}: checkpoint={getattr(config, k)!r} expected={getattr(expected_config, k)!r}"
            for k in asdict(config)
            if getattr(config, k) != getattr(expected_config, k)
        ]
        raise VersionMismatch("checkpoint config mismatch: " + "; ".join(diffs))
    model = GimmModel(config)
    model.load_state_dict(state)
    return model, config
