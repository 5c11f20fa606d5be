"""No-regret dynamics for robust Markov decision processes.

Tabular MDP evaluation with exact gradients, projections onto norm-ball
uncertainty sets, perturbed-leader online learners backed by projected
gradient descent, the policy/dynamics game loop and an experiment harness.
"""
from .environments import GridSpec, make_gridworld, make_uncertainty_set, random_mdp
from .game import (
    GameConfig,
    GameTrace,
    RegretReport,
    alg4,
    alg5,
    alg6,
    compute_regrets,
    drpg_baseline,
    evaluate_robustness,
    run_game,
)
from .geometry import UncertaintySet, project_simplex, project_uncertainty
from .mdp_core import Mdp, PolicyParams, TransitionParams, solve_value
from .pgd import PgdConfig, pgd_minimize

__version__ = "0.1.0"
