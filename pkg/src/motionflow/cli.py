"""Command-line entry point binding the pipeline: dataset generation, motion
model training, VFI training, evaluation, interpolation, and flow
visualization.

Exit codes: 0 success, 2 bad arguments, 3 data errors, 4 numerical failure.
Every command is deterministic under a fixed seed and echoes its effective
configuration (run_config.json) next to its outputs. Config files use a
key = value line format; command-line flags override file values. The MF_OUT
environment variable provides the default output root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import dataset as ds
from .baselines import fwarp_motion, linear_motion
from .errors import MotionFlowError, NonFiniteLoss
from .evaluation import run_interp_benchmark, run_motion_benchmark
from .flow_core import flow_to_rgb, read_flo, synth_flow, synth_frame
from .gimm_model import (
    GimmConfig,
    TrainConfig,
    gimm_forward,
    load_checkpoint,
    save_checkpoint,
    train_gimm,
)
from .vfi_synthesis import (
    VfiConfig,
    VfiSample,
    VfiTrainConfig,
    interpolate,
    load_vfi_checkpoint,
    save_vfi_checkpoint,
    train_vfi,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _default_out(command: str) -> str:
    root = os.environ.get("MF_OUT", "runs")
    return str(Path(root) / command)


def read_config_file(path) -> dict:
    """Parse the documented key = value format; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MotionFlowError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def _coerce(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value


def _merge_config(args: argparse.Namespace, keys: list[str]) -> dict:
    """File values first, then non-default flags override."""
    merged = {}
    if getattr(args, "config", None):
        fileconf = read_config_file(args.config)
        for k, v in fileconf.items():
            if k not in keys:
                raise MotionFlowError(f"unknown config key {k!r} (expected one of {keys})")
            merged[k] = _coerce(v)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


def _write_run_config(out_dir: Path, command: str, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, **config}
    (out_dir / "run_config.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    from .errors import InvalidSpec, IoError

    try:
        doc = json.loads(Path(args.spec_file).read_text())
    except OSError as exc:
        raise IoError(f"cannot read manifest {args.spec_file}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InvalidSpec("manifest must be a JSON object")
    # flags override manifest values before spec generation
    if args.timesteps:
        doc["timesteps"] = _parse_floats(args.timesteps)
    if args.seed is not None:
        doc["seed"] = args.seed
    h, w, timesteps, seed, specs = ds.parse_manifest(doc)
    if args.size is not None:
        specs = specs[: args.size]
    out = Path(args.out)
    samples = ds.build_dataset(specs, h, w, timesteps)
    manifest = {
        "height": h,
        "width": w,
        "timesteps": timesteps,
        "seed": seed,
        "samples": [spec.to_dict() for spec in specs],
    }
    ds.save_dataset(samples, out, manifest=manifest)
    _write_run_config(out, "gen", {"spec_file": str(args.spec_file), **manifest})
    print(f"wrote {len(samples)} samples to {out}")
    return EXIT_OK


_TRAIN_KEYS = ["steps", "batch", "lr", "seed", "crop", "ablation", "splat_mode"]


def cmd_train_gimm(args) -> int:
    conf = _merge_config(args, _TRAIN_KEYS)
    steps = int(conf.get("steps", 2000))
    batch = int(conf.get("batch", 4))
    lr = float(conf.get("lr", 1e-4))
    seed = int(conf.get("seed", 0))
    crop = conf.get("crop", 64)
    crop = None if crop in (None, "none") else int(crop)
    ablation = str(conf.get("ablation", "full"))
    splat_mode = str(conf.get("splat_mode", "softmax"))

    samples = ds.load_dataset(args.data)
    config = GimmConfig(ablation=ablation, splat_mode=splat_mode)
    hyper = TrainConfig(steps=steps, batch_size=batch, lr=lr, seed=seed, crop=crop)
    model, log = train_gimm(samples, config, hyper)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "gimm.ckpt")
    log.write_csv(out / "loss.csv")
    _write_run_config(
        out,
        "train-gimm",
        {
            "data": str(args.data),
            "steps": steps,
            "batch": batch,
            "lr": lr,
            "seed": seed,
            "crop": crop,
            "ablation": ablation,
            "splat_mode": splat_mode,
        },
    )
    final = log.losses[-1] if log.losses else float("nan")
    print(f"trained {steps} steps (final loss {final:.6f}); checkpoint at {out / 'gimm.ckpt'}")
    return EXIT_OK


def cmd_train_vfi(args) -> int:
    samples = ds.load_dataset(args.data)
    triples: list[VfiSample] = []
    for sample in samples:
        if sample.spec is None:
            raise MotionFlowError(
                "train-vfi needs specs in the dataset manifest to render target frames"
            )
        for t, _, _ in sample.gt:
            if 0.0 < t < 1.0:
                triples.append(
                    VfiSample(
                        frame0=sample.frames[0],
                        frame1=sample.frames[1],
                        f01=sample.f01,
                        f10=sample.f10,
                        t=t,
                        target=synth_frame(sample.spec, t, sample.height, sample.width),
                    )
                )
    config = VfiConfig(lambda_rec=args.lambda_rec, freeze_gimm=args.freeze_gimm)
    hyper = VfiTrainConfig(steps=args.steps, lr=args.lr, seed=args.seed)
    model, log = train_vfi(triples, args.gimm_ckpt, config, hyper)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_vfi_checkpoint(model, out / "vfi.ckpt")
    log.write_csv(out / "loss.csv")
    _write_run_config(
        out,
        "train-vfi",
        {
            "data": str(args.data),
            "gimm_ckpt": str(args.gimm_ckpt),
            "steps": args.steps,
            "lr": args.lr,
            "seed": args.seed,
            "lambda_rec": args.lambda_rec,
            "freeze_gimm": args.freeze_gimm,
        },
    )
    print(f"VFI checkpoint at {out / 'vfi.ckpt'}")
    return EXIT_OK


def _motion_methods(args) -> list[tuple[str, object]]:
    methods: list[tuple[str, object]] = []
    for name in (args.baselines or "").split(","):
        name = name.strip()
        if not name:
            continue
        if name == "linear":
            methods.append(("linear", linear_motion))
        elif name == "fwarp":
            methods.append(("fwarp", fwarp_motion))
        else:
            raise MotionFlowError(f"unknown baseline {name!r} (expected linear, fwarp)")
    for ckpt in args.ckpt or []:
        model, config = load_checkpoint(ckpt)
        model.eval()
        label = f"gimm[{config.ablation}]"

        def run(f01, f10, t, _model=model):
            import torch

            with torch.no_grad():
                _, ft0, ft1 = gimm_forward(_model, f01, f10, t)
            return ft0, ft1

        methods.append((label, run))
    if not methods:
        raise MotionFlowError("no methods selected: pass --baselines and/or --ckpt")
    return methods


def cmd_eval_motion(args) -> int:
    samples = ds.load_dataset(args.data)
    timesteps = _parse_floats(args.timesteps)
    methods = _motion_methods(args)
    report = run_motion_benchmark(samples, methods, timesteps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "motion_summary.csv").write_text(report.to_csv())
    (out / "motion_per_sample.csv").write_text(report.records_to_csv())
    (out / "motion_table.txt").write_text(report.to_text())
    _write_run_config(
        out,
        "eval-motion",
        {
            "data": str(args.data),
            "timesteps": timesteps,
            "methods": [name for name, _ in methods],
            "digest": report.config_digest,
        },
    )
    print(report.to_text())
    return EXIT_OK


def cmd_eval_interp(args) -> int:
    samples = ds.load_dataset(args.data)
    specs = [s.spec for s in samples]
    if any(spec is None for spec in specs):
        raise MotionFlowError("eval-interp needs specs in the dataset manifest")
    h, w = samples[0].height, samples[0].width
    model = load_vfi_checkpoint(args.ckpt)

    def run_vfi(i0, i1, f01, f10, t):
        return interpolate(i0, i1, (f01, f10), [t], model)[0]

    def run_average(i0, i1, f01, f10, t):
        from .flow_core import FrameImage

        return FrameImage((i0.data + i1.data) / 2.0)

    models = [("vfi", run_vfi), ("frame_average", run_average)]
    report = run_interp_benchmark(specs, h, w, models, _parse_ints(args.multiples))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "interp_summary.csv").write_text(report.to_csv())
    (out / "interp_per_sample.csv").write_text(report.records_to_csv())
    (out / "interp_table.txt").write_text(report.to_text())
    _write_run_config(
        out,
        "eval-interp",
        {"data": str(args.data), "multiples": args.multiples, "digest": report.config_digest},
    )
    print(report.to_text())
    return EXIT_OK


def cmd_interp(args) -> int:
    from .flow_core import FrameImage
    import numpy as np
    import torch
    from PIL import Image

    if args.synthetic_spec:
        import json as _json

        spec_doc = _json.loads(Path(args.synthetic_spec).read_text())
        from .flow_core import MotionSpec

        spec = MotionSpec.from_dict(spec_doc)
        h, w = args.height, args.width
        i0 = synth_frame(spec, 0.0, h, w)
        i1 = synth_frame(spec, 1.0, h, w)
        f01 = synth_flow(spec, 0.0, 1.0, h, w)
        f10 = synth_flow(spec, 1.0, 0.0, h, w)
    else:
        if not (args.frame0 and args.frame1 and args.flow0 and args.flow1):
            raise MotionFlowError(
                "interp needs --frame0/--frame1/--flow0/--flow1 or --synthetic-spec"
            )
        i0 = _load_png(args.frame0)
        i1 = _load_png(args.frame1)
        f01 = read_flo(args.flow0)
        f10 = read_flo(args.flow1)
        if i0.data.shape != i1.data.shape or i0.data.shape[:2] != f01.data.shape[:2]:
            raise MotionFlowError("frames and flows must share the same size")

    model = load_vfi_checkpoint(args.ckpt)
    ts = _parse_floats(args.times)
    frames = interpolate(i0, i1, (f01, f10), ts, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, frame in zip(ts, frames):
        arr = (frame.data.numpy() * 255.0).round().astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(out / f"frame_t{t:.6f}.png")
        if args.viz_flow:
            with torch.no_grad():
                _, ft0, ft1, _ = model.gimm(f01.data, f10.data, t)
            for tag, flow in (("ft0", ft0), ("ft1", ft1)):
                from .flow_core import FlowField

                rgb = flow_to_rgb(FlowField(flow))
                arr = (rgb.data.numpy() * 255.0).round().astype(np.uint8)
                Image.fromarray(arr, mode="RGB").save(out / f"{tag}_t{t:.6f}.png")
    _write_run_config(
        out, "interp", {"times": ts, "ckpt": str(args.ckpt), "viz_flow": bool(args.viz_flow)}
    )
    print(f"wrote {len(frames)} frames to {out}")
    return EXIT_OK


def _load_png(path):
    import numpy as np
    import torch
    from PIL import Image

    from .flow_core import FrameImage

    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return FrameImage(torch.from_numpy(arr))


def cmd_viz_flow(args) -> int:
    import numpy as np
    from PIL import Image

    flow = read_flo(args.flow)
    rgb = flow_to_rgb(flow, max_mag=args.max_mag)
    arr = (rgb.data.numpy() * 255.0).round().astype(np.uint8)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(out)
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionflow",
        description="Implicit motion modeling and frame interpolation at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset from a manifest")
    p.add_argument("--spec-file", required=True)
    p.add_argument("--out", default=_default_out("gen"))
    p.add_argument("--size", type=int, default=None, help="use only the first N specs")
    p.add_argument("--timesteps", default=None, help="comma list overriding the manifest")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-gimm", help="train the motion model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=_default_out("train-gimm"))
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--ablation", default=None)
    p.add_argument("--splat-mode", dest="splat_mode", default=None)
    p.set_defaults(func=cmd_train_gimm)

    p = sub.add_parser("train-vfi", help="train the synthesis head end to end")
    p.add_argument("--data", required=True)
    p.add_argument("--gimm-ckpt", required=True)
    p.add_argument("--out", default=_default_out("train-vfi"))
    p.add_argument("--steps", type=int, default=800)
    p.add_argument("--lr", type=float, default=8e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-rec", dest="lambda_rec", type=float, default=1.0)
    p.add_argument("--freeze-gimm", dest="freeze_gimm", action="store_true")
    p.set_defaults(func=cmd_train_vfi)

    p = sub.add_parser("eval-motion", help="run the motion benchmark")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", action="append", default=None)
    p.add_argument("--baselines", default="", help="comma list from {linear, fwarp}")
    p.add_argument("--timesteps", default="0.5")
    p.add_argument("--out", default=_default_out("eval-motion"))
    p.set_defaults(func=cmd_eval_motion)

    p = sub.add_parser("eval-interp", help="run the interpolation benchmark")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True, help="VFI checkpoint")
    p.add_argument("--multiples", default="2,4,8")
    p.add_argument("--out", default=_default_out("eval-interp"))
    p.set_defaults(func=cmd_eval_interp)

    p = sub.add_parser("interp", help="interpolate frames at requested timesteps")
    p.add_argument("--frame0", default=None)
    p.add_argument("--frame1", default=None)
    p.add_argument("--flow0", default=None, help=".flo from frame0 to frame1")
    p.add_argument("--flow1", default=None, help=".flo from frame1 to frame0")
    p.add_argument("--synthetic-spec", dest="synthetic_spec", default=None)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--ckpt", required=True, help="VFI checkpoint")
    p.add_argument("--times", required=True, help="comma list of timesteps in [0, 1]")
    p.add_argument("--viz-flow", dest="viz_flow", action="store_true")
    p.add_argument("--out", default=_default_out("interp"))
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("viz-flow", help="render a .flo file with the flow color wheel")
    p.add_argument("--flow", required=True)
    p.add_argument("--max-mag", dest="max_mag", type=float, default=None)
    p.add_argument("--out", default="flow.png")
    p.set_defaults(func=cmd_viz_flow)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MotionFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
