"""Dataset plumbing: seeded random motion specs, manifest parsing, and the
on-disk layout (PNG frames, .flo flows, JSON manifest) written by the CLI.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import InvalidSpec, IoError
from .flow_core import (
    FrameImage,
    MotionSample,
    MotionSpec,
    read_flo,
    synth_sample,
    write_flo,
)

LINEAR_KINDS = ("translation",)
NONLINEAR_KINDS = ("quadratic", "rotation", "zoom")


def random_spec(
    kind: str, rng: np.random.Generator, h: int, w: int, texture_seed: int
) -> MotionSpec:
    """Sample spec parameters comfortably inside the displacement invariant."""
    m = min(h, w)
    dcap = m / 8.0  # half the hard min(H, W)/4 bound
    if kind == "translation":
        r = rng.uniform(0.2 * dcap, dcap)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        return MotionSpec(
            kind="translation",
            velocity=(r * math.cos(ang), r * math.sin(ang)),
            texture_seed=texture_seed,
        )
    if kind == "quadratic":
        r = rng.uniform(0.15 * dcap, 0.85 * dcap)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        net = np.array([r * math.cos(ang), r * math.sin(ang)])  # velocity + accel / 2
        amag = rng.uniform(0.2 * dcap, m / 6.0)
        aang = rng.uniform(0.0, 2.0 * math.pi)
        accel = np.array([amag * math.cos(aang), amag * math.sin(aang)])
        vel = net - accel / 2.0
        return MotionSpec(
            kind="quadratic",
            velocity=(float(vel[0]), float(vel[1])),
            accel=(float(accel[0]), float(accel[1])),
            texture_seed=texture_seed,
        )
    cx = (w - 1) / 2.0 + rng.uniform(-0.08, 0.08) * w
    cy = (h - 1) / 2.0 + rng.uniform(-0.08, 0.08) * h
    corners = [(0.0, 0.0), (w - 1.0, 0.0), (0.0, h - 1.0), (w - 1.0, h - 1.0)]
    rho = max(math.hypot(x - cx, y - cy) for x, y in corners)
    if kind == "rotation":
        omega_max = 2.0 * math.asin(min(1.0, m / (8.0 * rho)))
        omega = rng.uniform(0.35, 0.92) * omega_max * rng.choice([-1.0, 1.0])
        return MotionSpec(
            kind="rotation", omega=float(omega), center=(cx, cy), texture_seed=texture_seed
        )
    if kind == "zoom":
        rate_max = min(0.30, m / (4.0 * rho) * 0.9)
        rate = rng.uniform(0.35, 1.0) * rate_max
        if rng.uniform() < 0.35:
            rate = -min(0.12, rate)
        return MotionSpec(kind="zoom", rate=float(rate), center=(cx, cy), texture_seed=texture_seed)
    raise InvalidSpec(f"unknown motion kind {kind!r}")


def random_specs(
    kinds: list[str], count: int, h: int, w: int, seed: int
) -> list[MotionSpec]:
    """count specs cycling through kinds, deterministically from seed."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        out.append(random_spec(kind, rng, h, w, texture_seed=seed * 100003 + i))
    return out


def build_dataset(
    specs: list[MotionSpec], h: int, w: int, timesteps: list[float]
) -> list[MotionSample]:
    return [synth_sample(spec, h, w, timesteps) for spec in specs]


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def parse_manifest(doc: dict) -> tuple[int, int, list[float], int, list[MotionSpec]]:
    """Validate a manifest document, raising InvalidSpec naming the bad field."""
    for fieldname in ("height", "width"):
        if fieldname not in doc:
            raise InvalidSpec(f"manifest missing field {fieldname!r}")
        if not isinstance(doc[fieldname], int) or doc[fieldname] < 8:
            raise InvalidSpec(f"manifest field {fieldname!r} must be an int >= 8")
    h, w = doc["height"], doc["width"]
    timesteps = doc.get("timesteps", [0.0, 0.5, 1.0])
    if not isinstance(timesteps, list) or not timesteps:
        raise InvalidSpec("manifest field 'timesteps' must be a nonempty list")
    try:
        timesteps = [float(t) for t in timesteps]
    except (TypeError, ValueError) as exc:
        raise InvalidSpec(f"manifest field 'timesteps' has a non-numeric entry: {exc}") from exc
    if any(not 0.0 <= t <= 1.0 for t in timesteps):
        raise InvalidSpec("manifest field 'timesteps' must lie in [0, 1]")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise InvalidSpec("manifest field 'seed' must be an int")

    if "samples" in doc:
        if not isinstance(doc["samples"], list) or not doc["samples"]:
            raise InvalidSpec("manifest field 'samples' must be a nonempty list")
        specs = []
        for i, entry in enumerate(doc["samples"]):
            try:
                specs.append(MotionSpec.from_dict(entry))
            except InvalidSpec as exc:
                raise InvalidSpec(f"manifest sample {i}: {exc}") from exc
    elif "generate" in doc:
        gen = doc["generate"]
        kinds = gen.get("kinds")
        count = gen.get("count")
        if not isinstance(kinds, list) or not kinds:
            raise InvalidSpec("manifest field 'generate.kinds' must be a nonempty list")
        bad = [k for k in kinds if k not in LINEAR_KINDS + NONLINEAR_KINDS]
        if bad:
            raise InvalidSpec(f"manifest field 'generate.kinds' has unknown kinds {bad}")
        if not isinstance(count, int) or count < 1:
            raise InvalidSpec("manifest field 'generate.count' must be a positive int")
        specs = random_specs(kinds, count, h, w, seed)
    else:
        raise InvalidSpec("manifest needs either a 'samples' list or a 'generate' block")
    return h, w, timesteps, seed, specs


def load_manifest(path) -> tuple[int, int, list[float], int, list[MotionSpec]]:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidSpec("manifest must be a JSON object")
    return parse_manifest(doc)


# ---------------------------------------------------------------------------
# On-disk dataset
# ---------------------------------------------------------------------------


def _frame_to_png(frame: FrameImage, path: Path) -> None:
    arr = (frame.data.detach().cpu().numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def _png_to_frame(path: Path) -> FrameImage:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return FrameImage(torch.from_numpy(arr))


def save_dataset(
    samples: list[MotionSample],
    out_dir,
    manifest: dict | None = None,
) -> None:
    """Write sample directories (2 PNG + 2 + 2 * |gt| .flo each) plus the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if manifest is not None:
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    for i, sample in enumerate(samples):
        d = out / f"sample_{i:04d}"
        d.mkdir(exist_ok=True)
        _frame_to_png(sample.frames[0], d / "frame_0.png")
        _frame_to_png(sample.frames[1], d / "frame_1.png")
        write_flo(sample.f01, d / "f01.flo")
        write_flo(sample.f10, d / "f10.flo")
        for t, ft0, ft1 in sample.gt:
            write_flo(ft0, d / f"ft0_t{t:.6f}.flo")
            write_flo(ft1, d / f"ft1_t{t:.6f}.flo")


def load_dataset(data_dir) -> list[MotionSample]:
    """Load a dataset directory written by save_dataset / the gen command."""
    from .normalization import compute_scale

    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise IoError(f"{data_dir}: no manifest.json found")
    h, w, timesteps, _, specs = load_manifest(manifest_path)
    sample_dirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("sample_"))
    samples = []
    for i, d in enumerate(sample_dirs):
        frames = (_png_to_frame(d / "frame_0.png"), _png_to_frame(d / "frame_1.png"))
        f01 = read_flo(d / "f01.flo")
        f10 = read_flo(d / "f10.flo")
        gt = []
        for t in sorted(timesteps):
            gt.append(
                (t, read_flo(d / f"ft0_t{t:.6f}.flo"), read_flo(d / f"ft1_t{t:.6f}.flo"))
            )
        spec = specs[i] if i < len(specs) else None
        samples.append(
            MotionSample(
                frames=frames,
                f01=f01,
                f10=f10,
                gt=gt,
                scale=compute_scale(f01, f10),
                spec=spec,
            )
        )
    return samples
