"""Solvers, strategies and verification tools for regime-switching
linear-quadratic Stackelberg games with a zero-sum follower pair."""

from .chains import (ChainPath, Generator, MartingaleLedger, brownian_stream,
                     chain_stream, martingale_ledger, project_to_grid,
                     sample_chain, validate_generator)
from .follower import (Envelope, EnvelopeCheck, FeedbackCoeffs, FollowerRiccati,
                       check_envelope, envelope, feedback_coeffs, solve_PF,
                       solve_PFbar, solve_phi)
from .grids import (JumpIntegrand, RegimeGrid, grid_to_csv, integrate_backward,
                    solve_linear_regime_bsde)
from .leader import (AugmentedSystem, LeaderGains, LeaderRiccati,
                     build_augmented, extract_block_regime, leader_feedback,
                     solve_PL, solve_PL_blockform, solve_PLbar, solve_leader,
                     solve_tau)
from .model import (AssumptionReport, BoundConstants, DynamicsCoefficients,
                    FollowerCost, LeaderCost, ProblemSpec, check_assumptions,
                    derive_constants, load_problem, regrid, required_checks)
from .simulate import (EnsembleResult, LeaderLayer, MCEstimate,
                       PerturbationReport, ResidualStats, default_directions,
                       filter_consistency, hamiltonian_residual, leader_test,
                       martingale_residual_means, mc_estimate, saddle_test,
                       simulate_paths)
from .strategies import (StrategyProfile, follower_feedback, pricing_strategies,
                         stackelberg_profile)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
