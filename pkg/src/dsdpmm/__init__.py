"""Doubly stochastic Dirichlet process mixture clustering.

A DP mixture whose atoms are thinned by a marked sigmoidal-GP Cox process,
with exact partition-law oracles, a split-merge sampler, a DPMM baseline and
an experiment harness for block-count consistency studies.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DataFormatError,
    NumericalError,
    ResourceLimitError,
    ValidationError,
)
from .expfam_model import (
    ExpFamSpec,
    SplitTriple,
    SuffStats,
    accumulate,
    laplace_log_integral,
    log_marginal_mq,
    log_ratio_c_phi,
    log_ratio_mass_marked,
    map_topic,
)
from .partition_laws import (
    MarkedHyper,
    Partition,
    enumerate_set_partitions,
    enumerated_partition_pmf,
    log_cond_size_weight,
    log_marked_q_asymptotic,
    log_marked_q_exact,
    log_partition_mass,
    ordered_size_prob_by_enumeration,
    size_law_compare,
)
from .samplers import (
    ChainState,
    SamplerConfig,
    Trace,
    assignment_step,
    dpmm_baseline_step,
    init_chain_state,
    prior_partition_step,
    run_chain,
    run_prior_partition_chain,
    split_merge_step,
)
from .sgp_prior import (
    KernelParams,
    SgpState,
    kernel_matrix,
    latent_birth_death_step,
    solve_intensity_values,
    thinning_value,
)

__all__ = [name for name in dir() if not name.startswith("_")]
