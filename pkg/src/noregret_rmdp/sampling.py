"""Value estimation from noisy reward samples and the sample-allocation rule.

With rewards observed through noise, the value vector solves
``M v_hat = r_hat`` with ``M = I - gamma P_pi``.  The start-state error is a
linear combination of the per-state reward errors weighted by the first row
of ``M^-1``; allocating samples in proportion to the square roots of those
weights minimizes the Chebyshev-style bound below.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .mdp_core import Mdp, _as_array, induced_chain


@dataclass(frozen=True, eq=False)
class ValueSystem:
    """Bellman linear system ``m @ v = r``; ``m_inv_row0`` is row ``start``
    of ``m^-1``."""

    m: np.ndarray
    r: np.ndarray
    m_inv_row0: np.ndarray
    start: int = 0

    @property
    def weights(self):
        return np.abs(self.m_inv_row0)

    def solve(self, r=None):
        return np.linalg.solve(self.m, self.r if r is None else r)


@dataclass(frozen=True, eq=False)
class SampleAllocation:
    h: np.ndarray
    budget: float

    def __post_init__(self):
        if np.any(self.h < 0):
            raise ValueError("sample counts must be nonnegative")
        if self.h.sum() > self.budget + 1e-9:
            raise ValueError(f"allocation {self.h.sum()} exceeds the budget {self.budget}")


def build_value_system(mdp: Mdp, policy, w, start=0) -> ValueSystem:
    pi, wt = _as_array(policy), _as_array(w)
    n = mdp.n_states
    m = np.eye(n) - mdp.gamma * induced_chain(pi, wt)
    r = np.sum(pi * mdp.reward, axis=1)
    unit = np.zeros(n)
    unit[start] = 1.0
    # row `start` of m^-1 is the solution of m^T x = e_start
    row = np.linalg.solve(m.T, unit)
    if not np.all(np.isfinite(row)):
        raise np.linalg.LinAlgError("Bellman system is singular")
    return ValueSystem(m=m, r=r, m_inv_row0=row, start=start)


def allocate_samples(system: ValueSystem, budget) -> SampleAllocation:
    """Spend ``budget`` samples as ``h_i = budget sqrt(w_i) / sum_k sqrt(w_k)``
    with ``w = |m_inv_row0|``."""
    if not budget > 0:
        raise ValueError("budget must be positive")
    root = np.sqrt(system.weights)
    total = root.sum()
    if total == 0:
        warnings.warn("inverse row is all zero; falling back to a uniform allocation", RuntimeWarning)
        return SampleAllocation(np.full(root.size, budget / root.size), float(budget))
    h = budget * root / total
    return SampleAllocation(h, float(budget))


def uniform_allocation(n_states, budget) -> SampleAllocation:
    return SampleAllocation(np.full(n_states, budget / n_states), float(budget))


def allocation_objective(system: ValueSystem, alloc: SampleAllocation, noise_sd, psi=1.0):
    """``sum_i w_i psi sigma^2 / h_i``; states with ``w_i = 0`` contribute nothing."""
    w = system.weights
    scale = psi * noise_sd**2
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * scale / alloc.h, 0.0)
    return float(terms.sum())


def optimal_objective(system: ValueSystem, budget, noise_sd, psi=1.0):
    """Closed-form minimum ``(sum_k sqrt(psi sigma^2 w_k))^2 / budget``."""
    return float(np.sum(np.sqrt(psi * noise_sd**2 * system.weights)) ** 2 / budget)


def sample_counts(alloc: SampleAllocation):
    """Integer draws per state: nearest integer, at least 1 where ``h > 0``."""
    return np.where(alloc.h > 0, np.maximum(np.rint(alloc.h), 1), 0).astype(int)


def estimate_value(mdp: Mdp, policy, w, alloc: SampleAllocation, noise_sd, rng, system=None):
    """One noisy estimate ``(v_hat, v_hat[start])``.

    Each state's reward is the mean of ``sample_counts(alloc)`` Gaussian
    draws around the true expected reward; the mean is drawn directly from
    its ``N(r, sigma^2 / n)`` law.  States given no samples keep the true
    reward.
    """
    if not alloc.h.sum() > 0:
        raise ValueError("allocation has zero total budget")
    system = build_value_system(mdp, policy, w) if system is None else system
    counts = sample_counts(alloc)
    if np.any(counts == 0):
        warnings.warn("states without samples use their true reward", RuntimeWarning)
    sd = np.where(counts > 0, noise_sd / np.sqrt(np.maximum(counts, 1)), 0.0)
    r_hat = system.r + sd * rng.standard_normal(system.r.shape)
    v_hat = system.solve(r_hat)
    return v_hat, float(v_hat[system.start])


def estimate_value_trials(system: ValueSystem, alloc: SampleAllocation, noise_sd, rng, trials):
    """``trials`` independent estimates stacked as rows (vectorized)."""
    counts = sample_counts(alloc)
    sd = np.where(counts > 0, noise_sd / np.sqrt(np.maximum(counts, 1)), 0.0)
    r_hat = system.r[None] + sd[None] * rng.standard_normal((trials, system.r.size))
    return np.linalg.solve(system.m, r_hat.T).T


@dataclass(frozen=True)
class ErrorBound:
    bound: float
    confidence: float
    infinite: bool = False


BOUND_FORMS = ("printed", "std")


def chebyshev_error_bound(system: ValueSystem, alloc: SampleAllocation, noise_sd, psi, form="printed") -> ErrorBound:
    """High-probability bound on ``|v_hat(start) - v(start)|``.

    Parameters
    ----------
    form : {"printed", "std"}
        ``"printed"`` is ``sum_i |M^-1_{0i}| psi sigma^2 / h_i``, the
        objective the allocation rule minimizes.  It mixes variance and
        deviation units, so its coverage drifts with ``sigma`` and the
        budget.  ``"std"`` is Chebyshev applied to the total error,
        ``psi sigma sqrt(sum_i (M^-1_{0i})^2 / n_i)`` with ``n_i`` the
        integer sample counts; it holds with the stated confidence.

    Both report confidence ``1 - 1 / psi^2``.
    """
    if not psi > 1:
        raise ValueError("psi must exceed 1")
    if form not in BOUND_FORMS:
        raise ValueError(f"form must be one of {BOUND_FORMS}, got {form!r}")
    w = system.weights
    starved = (alloc.h <= 0) & (w > 0)
    conf = 1.0 - 1.0 / psi**2
    if np.any(starved) and noise_sd > 0:
        return ErrorBound(math.inf, conf, infinite=True)
    if form == "std":
        counts = sample_counts(alloc)
        with np.errstate(divide="ignore", invalid="ignore"):
            var = np.where(w > 0, w**2 / counts, 0.0).sum() * noise_sd**2
        return ErrorBound(float(psi * math.sqrt(var)), conf)
    return ErrorBound(allocation_objective(system, alloc, noise_sd, psi), conf)


def bound_terms(system: ValueSystem, alloc: SampleAllocation, noise_sd, psi):
    """Per-state contributions to the printed form of
    :func:`chebyshev_error_bound`."""
    w = system.weights
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(w > 0, w * psi * noise_sd**2 / alloc.h, 0.0)
