"""Gaussian-process identification of unknown relay functions in relay networks."""

from .errors import (
    CapacityError,
    ConfigError,
    DegeneracyError,
    ParameterDomainError,
    RelayGPError,
    SingularityError,
)
from .kernel_algebra import (
    GramState,
    GroupedGram,
    InputGroups,
    downsize_inverse,
    gram_derivative,
    gram_matrix,
    se_kernel,
    sq_dist_matrix,
    upsize_inverse,
)
from .gp_core import (
    HyperParams,
    HyperPriors,
    TrainingSet,
    gp_predict,
    log_joint_posterior,
    mean_vector,
)
from .icm import IcmConfig, IcmResult, run_icm, update_d, update_f, update_theta
from .relay_sim import (
    ChannelRealization,
    Constellation,
    FrameBatch,
    RelayFunctionSpec,
    apply_relay_function,
    draw_channels,
    make_pam,
    simulate_batch,
    simulate_frame,
    snr_to_noise,
    substream,
    zf_inputs,
)
from .pipelines import (
    GridAggregate,
    RelayEstimate,
    approach_frame_by_frame,
    approach_full,
    approach_sliding,
    estimate,
    quantize_to_grid,
)
from .metrics import bit_errors, mean_abs_error, ml_detect, relative_total_error
from .experiment import ExperimentConfig, ber_curve, load_config, parse_config, run_experiment

__version__ = "0.1.0"
