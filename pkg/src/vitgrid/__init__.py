"""vitgrid: native-resolution ViT encoding with progressive 2x2 token pooling.

Public surface: numerics primitives, the patch-embedding resize transform,
the three window compressors, the encoder assembly, the analytic cost model,
probe-dataset generators, and the portable tensor container.
"""

from .errors import NumericalError, ValidationError
from .tokens import TokenGrid
from .numerics import (
    SvdFactors,
    channelwise_softmax,
    layer_norm,
    pseudo_inverse,
    psd_sqrt,
    scaled_dot_attention,
    svd,
)
from .patch_embed import (
    CovarianceEstimate,
    PatchEmbedWeights,
    PatchGrid,
    ResizeMap,
    build_resize_map,
    embed,
    estimate_patch_covariance,
    patchify,
    pi_resize_weights,
    pi_resize_weights_sigma,
)
from .pooling import (
    CAPoolParams,
    PixelUnshuffleParams,
    avg_init_pixel_unshuffle,
    avg_pool_compress,
    ca_pool_compress,
    ca_pool_gradients,
    pixel_unshuffle_compress,
    window_partition,
    zero_init_ca_params,
)
from .encoder import (
    EncoderConfig,
    EncoderState,
    CompressionPlan,
    desk_config,
    forward,
    init_state,
    preprocess,
    sinusoidal_pos_2d,
    token_count,
)
from .costmodel import (
    CostReport,
    LlmProxy,
    compression_ratio,
    cost_report,
    encoder_flops,
    micro_bench,
    prefill_proxy,
    sweep_insertions,
)
from .probes import gen_shapegrid, gen_sudoku, rasterize, render_item
from .tensorio import load_patch_weights, load_state, read_tensors, save_patch_weights, save_state, write_tensors

__version__ = "0.1.0"
