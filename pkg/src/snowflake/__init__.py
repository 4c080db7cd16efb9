"""Point-cloud generation by snowflake point deconvolution, on a small numpy autodiff core."""
from .checkpoint import CheckpointError
from .data import ShapeSample, crop_viewpoint, normalize, read_cloud, synth_shape, write_cloud
from .metrics import (
    MetricReport,
    chamfer_l1,
    chamfer_l2,
    completion_loss,
    emd,
    evaluate_pair,
    f_score,
    generation_metrics,
    hausdorff,
    partial_matching,
)
from .model import ModelConfig, SnowflakeNet, build_model, point_wise_splitting
from .tensor import DimensionError, NumericError, Parameter, Tensor, backward, grad_check
from .train import OptimizerConfig, train

__all__ = [
    "CheckpointError", "DimensionError", "MetricReport", "ModelConfig", "NumericError", "OptimizerConfig",
    "Parameter", "ShapeSample", "SnowflakeNet", "Tensor", "backward", "build_model", "chamfer_l1", "chamfer_l2",
    "completion_loss", "crop_viewpoint", "emd", "evaluate_pair", "f_score", "generation_metrics", "grad_check",
    "hausdorff", "normalize", "partial_matching", "point_wise_splitting", "read_cloud", "synth_shape", "train",
    "write_cloud",
]
