"""Environment generators: the GridWorld benchmark and seeded random MDPs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import UncertaintySet, project_simplex
from .mdp_core import Mdp, TransitionParams, _as_array

# (row, col) displacement of up, down, left, right
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class GridSpec:
    width: int = 5
    height: int = 5
    goal_reward: float = 10.0
    step_reward: float = -1.0
    slip: float = 0.1
    gamma: float = 0.95
    sink: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("grid must be at least 2x2")
        if not 0.0 <= self.slip < 1.0:
            raise ValueError("slip must lie in [0, 1)")

    @property
    def n_states(self):
        return self.width * self.height + (1 if self.sink else 0)

    def state(self, row, col):
        return row * self.width + col

    @property
    def start(self):
        return 0

    @property
    def goal(self):
        return self.state(self.height - 1, self.width - 1)


def make_gridworld(spec: GridSpec = GridSpec()):
    """Return ``(mdp, nominal_transitions)`` for a corner-to-corner grid.

    The agent starts in cell (0, 0); the opposite corner pays
    ``goal_reward`` and then moves to a zero-reward absorbing sink, every
    other cell pays ``step_reward``.  The intended move happens with
    probability ``1 - slip``; the rest is spread evenly over the other three
    directions.  Moves off the grid leave the agent in place.
    """
    n = spec.n_states
    goal = spec.goal
    w = np.zeros((n, 4, n))
    for row in range(spec.height):
        for col in range(spec.width):
            s = spec.state(row, col)
            if s == goal:
                continue
            for a in range(4):
                for b, (dr, dc) in enumerate(MOVES):
                    p = 1.0 - spec.slip if a == b else spec.slip / 3.0
                    r2, c2 = row + dr, col + dc
                    if not (0 <= r2 < spec.height and 0 <= c2 < spec.width):
                        r2, c2 = row, col
                    w[spec.state(r2, c2), a, s] += p
    if spec.sink:
        sink = n - 1
        w[sink, :, goal] = 1.0
        w[sink, :, sink] = 1.0
    else:
        w[goal, :, goal] = 1.0

    reward = np.full((n, 4), spec.step_reward)
    reward[goal] = spec.goal_reward
    if spec.sink:
        reward[n - 1] = 0.0
    mu = np.zeros(n)
    mu[spec.start] = 1.0
    r_max = max(abs(spec.goal_reward), abs(spec.step_reward))
    return Mdp(reward=reward, gamma=spec.gamma, mu=mu, r_max=r_max), TransitionParams(w)


def random_mdp(n_states, n_actions, gamma, seed):
    """Rewards uniform on [-1, 1], flat-Dirichlet transition rows, uniform mu."""
    if n_states < 1 or n_actions < 1:
        raise ValueError("state and action counts must be positive")
    rng = np.random.default_rng(seed)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    w = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states)).transpose(2, 0, 1)
    mu = np.full(n_states, 1.0 / n_states)
    return Mdp(reward=reward, gamma=gamma, mu=mu, r_max=1.0), TransitionParams(w)


def make_uncertainty_set(nominal, q, tau, rng=None, randomize_nominal=False, jitter=0.1):
    """Norm ball of radius ``tau`` around a (possibly randomized) centre.

    With ``randomize_nominal`` the centre is
    ``(1 - jitter) * nominal + jitter * D`` for a flat-Dirichlet tensor
    ``D``, pushed through the simplex projection.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    base = np.array(_as_array(nominal), dtype=float)
    if randomize_nominal:
        if rng is None:
            raise ValueError("randomize_nominal requires a random generator")
        n, a, _ = base.shape
        noise = rng.dirichlet(np.ones(n), size=(a, n)).transpose(2, 0, 1)
        base = project_simplex((1.0 - jitter) * base + jitter * noise, axis=0)
    return UncertaintySet(TransitionParams(base), q, tau)
