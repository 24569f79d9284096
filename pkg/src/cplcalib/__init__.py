"""Camera calibration through a camera projection loss.

Differentiable stereo projection chain, disentangled and adaptively weighted
projection losses, an Adam-based parameter estimator, and a synthetic
CVGL-style dataset generator.
"""

from .camera_model import (
    CameraParams,
    CameraPoint,
    Extrinsics,
    ImageObservation,
    Intrinsics,
    RigParams,
    WorldPoint,
    camera_to_world,
    image_to_camera_normalized,
    image_to_camera_stereo,
    inverse_full_projection,
    project_to_world,
)
from .diff import Dual, Gradient13, finite_difference_grad, grad_cpl
from .estimator import EstimatorConfig, EstimateResult, adam_step, estimate, update_adaptive_weights
from .projection_loss import (
    AdaptiveWeights,
    LossBreakdown,
    ParamVector13,
    cpl,
    cpl_disentangled,
    cpl_weighted,
    nmae,
    reconstruct,
)
from .scene_gen import Dataset, SceneConfig, build_config_grid, fov_to_focal, generate, load, save

__version__ = "0.1.0"
