"""Variational spatial attention with learnable-anchor quantization.

A numpy-backed library: reverse-mode autodiff tensors, the
attention-bottleneck classifier and its quantized attention codebook,
SGD training on the Monte-Carlo objective, dataset modifications, and
the attention-consistency interpretability metric.
"""

from .checkpoint import load_arrays, save_arrays
from .config import RunConfig, load_run_config
from .data import (
    ImageDataset,
    Modification,
    apply_modification,
    augment,
    dft2,
    freq_filter,
    freq_mask,
    idft2,
    load_cifar10,
    load_mnist,
    occlude,
    radius_grid,
    read_cifar_batch,
    read_idx,
    subset,
    write_cifar_batch,
    write_idx,
)
from .exceptions import (
    AibError,
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    DomainError,
    FormatError,
    InputError,
)
from .gradcheck import CheckResult, check_gradients, numeric_gradients, run_suite
from .interpret import (
    InterpReport,
    attention_cosine,
    export_attention,
    interpretability_score,
)
from .model import AibModel, ForwardResult, ModelConfig, modulate
from .quantizer import (
    AnchorSet,
    AttentionMaps,
    commitment_loss,
    init_anchors,
    quantization_loss,
    quantize,
    straight_through,
)
from .tensor import Parameter, Tape, Tensor, backward
from .training import (
    EvalResult,
    LossBreakdown,
    OptimState,
    TrainResult,
    compute_loss,
    evaluate,
    loss_terms,
    lr_schedule,
    sgd_step,
    train,
)
from .variational import (
    DiagonalGaussian,
    NoiseDraw,
    NoiseSource,
    kl_to_standard_normal,
    reparam_sample,
    standard_normal_source,
)

__version__ = "0.1.0"
