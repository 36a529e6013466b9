"""Unbiased multi-channel watermarking for token sequences."""

from .core import (
    DistributionError,
    InvalidParameterError,
    Partition,
    TokenSequence,
    WatermarkError,
    WatermarkParams,
    as_distribution,
    context_window,
    derive_partition,
    prf_uniform,
    select_channel,
)
from .channels import (
    all_channel_distributions,
    build_channel_matrix,
    channel_matrix_row,
    channel_distribution,
    diagonal_objective,
    segment_mass,
)
from .providers import BigramProvider, DistributionProvider, StaticProvider, SyntheticLM
from .generator import (
    GenerationRecord,
    generate_sequence,
    sample_from_channel,
    sample_token,
    unwatermarked_sequence,
    watermarked_next_token,
)
from .detector import (
    DetectionReport,
    binomial_tail_pvalue,
    detect,
    log_binomial_tail_pvalue,
    score_sequence,
)
from .analysis import (
    SweepResult,
    closed_form_etn_moments,
    etn_dipmark,
    etn_mcmark,
    etn_sta,
    expected_etn_uniform,
    nested_replacement_attacks,
    replacement_count,
    token_replacement_attack,
    tradeoff_sweep,
)

__version__ = "0.1.0"
