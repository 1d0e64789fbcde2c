"""Region-aware rectified-flow sampling for instruction-based image editing."""

from .avd import (
    GammaTable,
    VelocityCacheState,
    accumulate_criterion,
    decay_factor,
    decide_and_velocity,
    fit_gamma,
    residual_cache_velocity,
)
from .errors import (
    AlreadyTerminalError,
    CacheMissError,
    CalibrationDegenerateError,
    InvalidArgumentError,
    InvalidConfigError,
    RegionEError,
)
from .metrics import MetricReport, psnr, speedup, ssim
from .models import (
    AnalyticField,
    AnalyticModel,
    ModelOutput,
    SegmentedSequence,
    ToyDiT,
    ToyDiTWeights,
    analytic_velocity,
    cfg_combine,
    toy_forward,
)
from .partition import (
    RegionMask,
    adaptive_region_partition,
    morphological_clean,
    threshold_partition,
    token_cosine,
)
from .pipeline import RegionEConfig, RunReport, find_mask, gather_scatter, regione_sample, vanilla_sample
from .rikv import KVStore, region_attention, snapshot
from .scenario import BenchScenario
from .schedule import (
    LatentState,
    TimestepSchedule,
    euler_step,
    interpolate,
    make_schedule,
    one_step_estimate,
)

__version__ = "0.1.0"
