"""Block-sparse recovery with the latent optimally partitioned l2/l1 penalty."""

from .baselines import hybrid_model_data, nnls
from .bench import ExperimentConfig, ResultsTable, emit_results, load_config, nmse, run_experiment
from .certificate import Certificate, VerificationReport, construct_certificate, verify_conditions
from .gme import GmeConfig, build_B_factor, check_boundedness, gme_value, solve_aps_problem
from .penalty import (
    BlockPartition,
    PenaltyEvaluation,
    eval_lop_constrained,
    eval_lop_penalized,
    mixed_l21,
    nonconvex_oracle,
    phi,
    prox_lop,
)

__version__ = "0.1.0"
