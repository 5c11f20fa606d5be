"""Nonconvex online learners that delegate to an approximate minimization
oracle: FTPL, optimistic FTPL, Best-Response and FTPL+.

A *loss* is any callable ``x -> (value, gradient)``.  An *oracle* is any
callable ``(objective, warm_start) -> report`` whose report exposes
``final_point`` (see :class:`~noregret_rmdp.pgd.PgdOracle`).
"""
from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np

from .geometry import NoiseSpec, sample_exp_noise


class LearnerError(RuntimeError):
    """Oracle failure inside a learner, tagged with the round index."""

    def __init__(self, round_index, cause):
        super().__init__(f"oracle failed in round {round_index}: {cause}")
        self.round_index = round_index
        self.__cause__ = cause


class Step(NamedTuple):
    point: np.ndarray
    report: object
    sigma: Optional[np.ndarray]


def zero_loss(x):
    return 0.0, np.zeros_like(x)


class LossHistory:
    """Append-only sequence of losses; entry ``i`` is the loss of round i+1.

    Subclasses may override :meth:`cumulative` with a vectorized sum.
    """

    def __init__(self, losses=()):
        self._losses = list(losses)

    def append(self, loss):
        self._losses.append(loss)

    def __len__(self):
        return len(self._losses)

    def __getitem__(self, i):
        return self._losses[i]

    def cumulative(self, upto=None):
        """Objective summing the first ``upto`` losses (all by default)."""
        parts = self._losses[: len(self) if upto is None else upto]
        if not parts:
            return zero_loss

        def total(x):
            value, grad = 0.0, np.zeros_like(x)
            for loss in parts:
                v, g = loss(x)
                value += v
                grad = grad + g
            return value, grad

        return total


def add_losses(*losses):
    def total(x):
        value, grad = 0.0, np.zeros_like(x)
        for loss in losses:
            v, g = loss(x)
            value += v
            grad = grad + g
        return value, grad

    return total


def perturbed(objective, sigma):
    """``x -> objective(x) - <sigma, x>``."""

    def f(x):
        v, g = objective(x)
        return v - float(np.vdot(sigma, x)), g - sigma

    return f


def scaled(objective, factor):
    """Positive rescaling; leaves the minimizer unchanged."""
    if factor == 1.0:
        return objective

    def f(x):
        v, g = objective(x)
        return factor * v, factor * g

    return f


def _draw(noise, rng, sigma, shape):
    if sigma is not None:
        return np.asarray(sigma, dtype=float).reshape(shape)
    if rng is None:
        raise ValueError("a random generator is required unless sigma is given")
    return sample_exp_noise(noise, rng).reshape(shape)


def _call(oracle, objective, x0, round_index):
    try:
        return oracle(objective, x0)
    except Exception as exc:  # noqa: BLE001 - re-raised with the round attached
        raise LearnerError(round_index, exc) from exc


def ftpl_step(history: LossHistory, noise: NoiseSpec, oracle, rng, warm_start, sigma=None, scale=1.0) -> Step:
    """Follow the Perturbed Leader: minimize past losses minus ``<sigma, x>``.

    ``history`` holds rounds ``1..t-1``.  ``sigma`` overrides the random draw
    (a deterministic hook for tests).  ``scale`` multiplies the objective
    handed to the oracle, e.g. ``1/t`` to keep gradient magnitudes steady
    as the history grows; the minimizer is unaffected.
    """
    x0 = np.asarray(warm_start, dtype=float)
    s = _draw(noise, rng, sigma, x0.shape)
    objective = scaled(perturbed(history.cumulative(), s), scale)
    report = _call(oracle, objective, x0, len(history) + 1)
    return Step(report.final_point, report, s)


def oftpl_step(history: LossHistory, optimistic, noise: NoiseSpec, oracle, rng, warm_start, sigma=None, scale=1.0) -> Step:
    """Optimistic FTPL: as :func:`ftpl_step` plus a guess ``optimistic`` of
    the coming loss."""
    x0 = np.asarray(warm_start, dtype=float)
    s = _draw(noise, rng, sigma, x0.shape)
    guess = zero_loss if optimistic is None else optimistic
    objective = scaled(perturbed(add_losses(history.cumulative(), guess), s), scale)
    report = _call(oracle, objective, x0, len(history) + 1)
    return Step(report.final_point, report, s)


def best_response_step(current_loss, oracle, warm_start, round_index=None) -> Step:
    """Minimize the (already visible) current loss; no perturbation."""
    report = _call(oracle, current_loss, np.asarray(warm_start, dtype=float), round_index)
    return Step(report.final_point, report, None)


def ftpl_plus_step(history: LossHistory, noise: NoiseSpec, oracle, rng, warm_start, sigma=None, scale=1.0) -> Step:
    """FTPL+: like FTPL but ``history`` already contains the current round."""
    x0 = np.asarray(warm_start, dtype=float)
    s = _draw(noise, rng, sigma, x0.shape)
    objective = scaled(perturbed(history.cumulative(), s), scale)
    report = _call(oracle, objective, x0, len(history))
    return Step(report.final_point, report, s)


def theory_eta(lipschitz, rounds, dim):
    """Noise rate ``1 / (L sqrt(T d))`` from the FTPL regret tuning."""
    return 1.0 / (lipschitz * np.sqrt(max(rounds, 1) * dim))
