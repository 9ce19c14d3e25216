"""Effective coefficients and limiting equations."""

from .fokker_planck import RadialSeries, SolverError, fp_evolve, gaussian_blob
from .gaussian import (
    MainTermSeries,
    NotGaussianError,
    PlaneField,
    RadialMatrixField,
    TBetaOperator,
    apply_T_beta,
    diffusion_field_gaussian,
    gaussian_main_term,
    t_beta_operator,
)
from .resolvent import (
    CoefficientField,
    KernelContentError,
    NeumannDivergence,
    ResolventSolution,
    TwoParticleField,
    compute_a_beta,
    omega_grid,
    resolvent_L2,
    resolvent_residual,
)
from .torus import DiffusionMatrix, WaveSeries, diffusion_matrix_torus, next_order_B, wave_evolve
