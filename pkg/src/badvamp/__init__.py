"""Bilinear adaptive VAMP for Y = A(theta_A) X + W."""
from .denoisers import PriorParams, DenoiseOutput, denoise, em_update_prior, retune_gamma1
from .operators import AffineOperator, GramTables, OperatorEig, evaluate, precompute_grams, eig_gram
from .vamp import ColumnState, SolverConfig, extrinsic, lmmse_denoise, run_vamp
from .solver import (EmWorkspace, Hyperparams, RunResult, em_update_A_unstructured,
                     em_update_gamma_w, em_update_thetaA, retune_gamma2, run_badvamp)
from .problems import ProblemInstance, gen_csmu, gen_dl, gen_selfcal, oracles
from .metrics import nmse_db, nmse_genperm_ambiguity, nmse_scalar_ambiguity, rank1_nmse

__version__ = "0.1.0"
