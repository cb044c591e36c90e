"""Exit laws of blocks: exact oracles, Monte Carlo estimates and checks."""

from .dist import LatticeDist, Region, aligned, l1_distance
from .exact import ExitLaw, exact_exit, exit_distribution, propagate_exit
from .histogram import ExitHistogram, estimate_exit
from .profile import (DerivativeProfile, LowerBoundReport, derivative_profile, front_masses, grid_differences,
                      lower_bound_check)
from .llt import LLTReport, convolution_power, fourier_power, llt_bounds
from .closeness import (
    ClosenessCertificate,
    ClosenessRefusal,
    audit_certificate,
    CompanionSampler,
    CouplingPlan,
    check_closeness,
    companion_sampler,
    coupling_plans,
    smallest_lambda,
)
from .classify import BlockClassification, BlockClassifier, classify_block, cube_discrepancy_bound, default_probes
from .ladder import (
    DecompositionReport,
    LadderReport,
    adversarial_summand,
    annealed_front_table,
    convolution_decomposition_check,
    ladder_budget,
    sum_ladder_check,
)
