"""Nested-logit quantal response equilibria of two-player zero-sum sequential games.

Sequence-form games, a Newton baseline, first-order forward and backward
solvers, implicit-differentiation gradients, and parameter learning.
"""

import logging

from .backward import (BackwardProblem, direct_backward_solve, fom_backward_solve,
                       quadratic_best_response)
from .forward import duality_gap, fom_forward_solve, smoothed_best_response
from .game import EquilibriumSolution, Game, RationalityParams, SparsePayoff
from .gradients import ObservedPlay, Record, grad_lambda, grad_payoff, log_loss
from .learning import LambdaModel, TrainConfig, lambda_forward, sample_dataset, train
from .newton import ConvergenceError, build_xi, newton_solve
from .treeplex import Treeplex, TreeplexBuilder, validate_treeplex

logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "0.1.0"

__all__ = [
    "BackwardProblem", "ConvergenceError", "EquilibriumSolution", "Game", "LambdaModel",
    "ObservedPlay", "RationalityParams", "Record", "SparsePayoff", "TrainConfig",
    "Treeplex", "TreeplexBuilder", "build_xi", "direct_backward_solve", "duality_gap",
    "fom_backward_solve", "fom_forward_solve", "grad_lambda", "grad_payoff",
    "lambda_forward", "log_loss", "newton_solve", "quadratic_best_response",
    "sample_dataset", "smoothed_best_response", "train", "validate_treeplex",
]
