"""Sparse-to-sparse training for toy diffusion models.

Dense, static-sparse, and dynamic-sparse (gradient- or random-regrowth)
training of small noise-prediction networks, with DDIM sampling, layer-wise
Erdos-Renyi density allocation, compute accounting, and desk-scale sample
quality metrics.
"""

from .config import ExperimentConfig, load_config, resolve_config
from .datasets import Dataset, make_dataset
from .diffusion import NoiseSchedule, ddim_sample, diffusion_loss, forward_noise, linear_schedule
from .errors import (
    CapacityError,
    CheckpointError,
    ConfigError,
    DataError,
    ShapeError,
    SparseDmError,
    SparsityError,
)
from .metrics import (
    FlopsReport,
    QualityReport,
    frechet_distance,
    kid_mmd,
    layer_flops,
    quality_report,
    train_flops,
)
from .models import (
    ConvDenoiser,
    DenoiserSpec,
    MlpDenoiser,
    ParamRegistry,
    build_denoiser,
    masked_param_count,
    sinusoidal_embed,
)
from .rng import Rng
from .runner import RunRecord, run_experiment, run_sweep
from .tensor import Tensor
from .topology import (
    LayerGeom,
    SparsityMask,
    TopologyPlan,
    allocate_er,
    allocate_erk,
    apply_mask,
    global_sparsity,
    grow_gradient,
    grow_random,
    sample_mask,
    top_mag_prune,
)
from .training import (
    ExplorationSchedule,
    OptimizerState,
    TrainResult,
    adamw_step,
    train,
    train_dense,
    train_dynamic,
    train_static,
)

__version__ = "0.1.0"
