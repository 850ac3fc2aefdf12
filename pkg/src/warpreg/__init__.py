"""warpreg: differentiable coarse-to-fine deformable 2D image registration.

Everything runs on plain numpy arrays in float64.  The package provides the
tensor/autodiff core, the convolutional layers (including deformable
convolutions), interpolation kernels and differentiable warping, the
coarse-to-fine registration model, the unsupervised objective with Adam,
synthetic data generation, metrics, binary file formats, a scikit-learn
style estimator, and the ``warpreg`` CLI.
"""

from .tensor import (
    Param,
    Shape,
    ShapeError,
    Tensor,
    add,
    backprop,
    concat_channels,
    make,
    mean_std,
    zero_grads,
)
from .layers import BatchNormParams, ConvParams, avgpool2, batchnorm, conv2d, elu
from .deform import DeformConvParams, deform_conv2d
from .sampling import (
    KernelKind,
    bspline3_weights,
    cr_weights,
    downsample2_mean,
    resample_error,
    sample_bilinear,
    sample_bspline3,
    sample_cr_bicubic,
    sample_with_grad,
    smooth_test_field,
    upsample_dvf,
    warp_image,
)
from .model import (
    Checkpoint,
    CoarseToFineResult,
    LayerParams,
    ModelConfig,
    ModelParams,
    PyramidPair,
    build_pyramid,
    coarse_to_fine_batch,
    coarse_to_fine_forward,
    displacement_net,
    register,
    scaled_channels,
    upsample_head,
)
from .loss import (
    Adam,
    LossBreakdown,
    LossConfig,
    mean_scalars,
    ncc_ssd,
    reg_term,
    sum_scalars,
    total_loss,
)
from .gradcheck import check_gradients, relative_error, run_suite, suite_tolerances
from .synth import SynthConfig, gen_smooth_dvf, make_pair, make_texture, write_dataset
from .metrics import dice_jaccard, endpoint_error, threshold_mask
from .formats import (
    FormatError,
    load_checkpoint,
    read_dvf2,
    read_imgf,
    read_pgm,
    read_ppm,
    save_checkpoint,
    write_dvf2,
    write_imgf,
    write_pgm,
    write_ppm,
)
from .train import NumericalError, TrainResult, train_model, write_history_csv
from .estimator import DeformableRegistration

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BatchNormParams",
    "Checkpoint",
    "CoarseToFineResult",
    "ConvParams",
    "DeformConvParams",
    "DeformableRegistration",
    "FormatError",
    "KernelKind",
    "LayerParams",
    "LossBreakdown",
    "LossConfig",
    "ModelConfig",
    "ModelParams",
    "NumericalError",
    "Param",
    "PyramidPair",
    "Shape",
    "ShapeError",
    "SynthConfig",
    "Tensor",
    "TrainResult",
    "add",
    "avgpool2",
    "backprop",
    "batchnorm",
    "bspline3_weights",
    "build_pyramid",
    "check_gradients",
    "coarse_to_fine_batch",
    "coarse_to_fine_forward",
    "concat_channels",
    "conv2d",
    "cr_weights",
    "deform_conv2d",
    "dice_jaccard",
    "displacement_net",
    "downsample2_mean",
    "elu",
    "endpoint_error",
    "gen_smooth_dvf",
    "load_checkpoint",
    "make",
    "make_pair",
    "make_texture",
    "mean_scalars",
    "mean_std",
    "ncc_ssd",
    "read_dvf2",
    "read_imgf",
    "read_pgm",
    "read_ppm",
    "reg_term",
    "register",
    "relative_error",
    "resample_error",
    "run_suite",
    "sample_bilinear",
    "sample_bspline3",
    "sample_cr_bicubic",
    "sample_with_grad",
    "save_checkpoint",
    "scaled_channels",
    "smooth_test_field",
    "suite_tolerances",
    "sum_scalars",
    "threshold_mask",
    "total_loss",
    "train_model",
    "upsample_dvf",
    "upsample_head",
    "warp_image",
    "write_dataset",
    "write_dvf2",
    "write_history_csv",
    "write_imgf",
    "write_pgm",
    "write_ppm",
    "zero_grads",
]
