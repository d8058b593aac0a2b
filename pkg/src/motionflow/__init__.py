"""motionflow: latent-conditioned implicit motion modeling over bidirectional
optical flows, with forward-splatting warping kernels, comparison baselines,
frame synthesis, and benchmark tooling -- all verified against an analytic
synthetic-motion oracle at desk scale.
"""

from .errors import (
    BadMagic,
    ChecksumFailure,
    ContractViolation,
    DegenerateDims,
    DegenerateWeight,
    EmptyDataset,
    InvalidSpec,
    IoError,
    MotionFlowError,
    NonFiniteLoss,
    NonPositiveScale,
    ScaleMismatch,
    ShapeMismatch,
    TimestepOutOfRange,
    TooSmall,
    Truncated,
    VersionMismatch,
)
from .flow_core import (
    FlowField,
    FrameImage,
    MotionSample,
    MotionSpec,
    flow_to_rgb,
    read_flo,
    read_raw_flow,
    synth_flow,
    synth_frame,
    synth_sample,
    write_flo,
    write_raw_flow,
)
from .normalization import (
    CoordGrid,
    NormalizedFlow,
    compute_scale,
    coord_grid,
    denormalize,
    make_target,
    normalize,
    scaled_bidirectional,
    split_bilateral,
)
from .warping import (
    backward_warp,
    flow_consistency,
    flow_variance,
    forward_splat,
    gaussian3x3,
    splat_weights,
)
from .gimm_model import (
    GimmConfig,
    GimmModel,
    TrainConfig,
    TrainLog,
    gimm_forward,
    gimm_loss,
    load_checkpoint,
    save_checkpoint,
    train_gimm,
)
from .baselines import fwarp_motion, linear_motion
from .vfi_synthesis import (
    SynthesisNet,
    VfiConfig,
    VfiModel,
    VfiSample,
    VfiTrainConfig,
    census_loss,
    charbonnier_loss,
    fuse,
    interpolate,
    laplacian_loss,
    load_vfi_checkpoint,
    make_vfi_samples,
    rec_loss,
    save_vfi_checkpoint,
    total_loss,
    train_vfi,
    warp_frames,
)
from .evaluation import EvalReport, epe, flow_psnr, image_psnr, run_interp_benchmark, run_motion_benchmark

__version__ = "0.1.0"
