"""Shared helpers: seeded random instances and brute-force oracles."""
import itertools

import numpy as np
import pytest

from noregret_rmdp.environments import random_mdp
from noregret_rmdp.mdp_core import Mdp, TransitionParams, solve_value


def random_instance(seed, n_states=None, n_actions=None, gamma=None):
    """``(mdp, policy, w)`` with random sizes up to 5 states and 3 actions."""
    rng = np.random.default_rng(seed)
    n = n_states or int(rng.integers(2, 6))
    a = n_actions or int(rng.integers(1, 4))
    g = float(rng.uniform(0.5, 0.95)) if gamma is None else gamma
    mdp, w = random_mdp(n, a, g, seed)
    pi = rng.dirichlet(np.ones(a), size=n)
    return mdp, pi, w.probs


def random_policy(rng, n, a):
    return rng.dirichlet(np.ones(a), size=n)


def random_tensor(rng, n, a):
    return rng.dirichlet(np.ones(n), size=(a, n)).transpose(2, 0, 1)


def value(mdp, pi, w):
    return float(mdp.mu @ solve_value(mdp, pi, w).v)


def two_state_w_grid(points_per_axis=100):
    """All 2-state transition tensors on a grid: one free probability per
    ``(a, s)`` column, so ``points^4`` tensors for 2 actions."""
    p = np.linspace(0.0, 1.0, points_per_axis)
    combos = np.array(list(itertools.product(p, repeat=4)))  # (N, 4) for (a, s) pairs
    ws = np.empty((combos.shape[0], 2, 2, 2))
    ws[:, 0] = combos.reshape(-1, 2, 2)
    ws[:, 1] = 1.0 - ws[:, 0]
    return ws


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_mdp(seed=0, gamma=0.9):
    """2-state, 2-action instance with a uniform start distribution."""
    mdp, w = random_mdp(2, 2, gamma, seed)
    return mdp, w


def zoom_grid_min(f, lo, hi, per_axis=10, levels=8, shrink=2.0):
    """Gradient-free brute force: evaluate ``f`` on a ``per_axis^dim`` grid
    over the box ``[lo, hi]``, re-centre a smaller box on the best point and
    repeat.  ``f`` maps an ``(N, dim)`` batch to ``(N,)`` values (``inf``
    marks infeasible points).  Returns ``(best_value, best_point)``."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    box_lo, box_hi = lo.copy(), hi.copy()
    best_x, best_v = None, np.inf
    for _ in range(levels):
        axes = [np.linspace(a, b, per_axis) for a, b in zip(box_lo, box_hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, lo.size)
        vals = f(pts)
        i = int(np.argmin(vals))
        if vals[i] < best_v:
            best_v, best_x = float(vals[i]), pts[i]
        half = shrink * (box_hi - box_lo) / (per_axis - 1)
        box_lo, box_hi = np.maximum(best_x - half, lo), np.minimum(best_x + half, hi)
    return best_v, best_x


def two_state_ws(p):
    """Free coordinates ``p[:, (a, s)] = W[0, a, s]`` to full 2-state tensors."""
    w0 = p.reshape(-1, 2, 2)
    return np.stack([w0, 1.0 - w0], axis=1)


def two_state_pis(p):
    """Free coordinates ``p[:, s] = pi[s, 0]`` to full 2-action policies."""
    return np.stack([p, 1.0 - p], axis=-1)


def batch_values(mdp, pis, ws):
    """``mu^T v`` for paired batches of policies and tensors."""
    from noregret_rmdp.mdp_core import evaluate_batch
    v, _, _ = evaluate_batch(mdp.reward, mdp.gamma, mdp.mu, pis, ws)
    return v @ mdp.mu


def w_grid_min(mdp, uset, policies, levels=8):
    """``min_W mean_k V_W^{pi_k}`` over a 2-state 2-action uncertainty set."""
    c = uset.nominal.probs[0].ravel()
    tau, q = uset.tau, uset.q
    policies = np.atleast_3d(policies) if np.ndim(policies) == 3 else np.asarray(policies)[None]

    def f(p):
        d = p - c
        norm = (2 * np.sum(np.abs(d) ** q, axis=1)) ** (1 / q)
        ws = two_state_ws(p)
        out = np.zeros(len(p))
        for pi in policies:
            out += batch_values(mdp, np.broadcast_to(pi, (len(p), 2, 2)), ws)
        out /= len(policies)
        return np.where(norm <= tau + 1e-12, out, np.inf)

    reach = tau / 2 ** (1 / q)
    return zoom_grid_min(f, np.clip(c - reach, 0, 1), np.clip(c + reach, 0, 1), levels=levels)


# one line per acceptance criterion, repeated at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
