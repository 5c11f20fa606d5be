"""Projected gradient descent used as the approximate optimization oracle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

# objective(x) -> (value, gradient)
Objective = Callable[[np.ndarray], tuple]


class OracleError(RuntimeError):
    """Non-finite objective or gradient; ``iterate`` holds the offending point."""

    def __init__(self, msg, iterate):
        super().__init__(msg)
        self.iterate = iterate


@dataclass(frozen=True)
class PgdConfig:
    """Settings for :func:`pgd_minimize`.

    ``step_size=None`` picks ``1 / (2 max ||grad||)`` over a handful of
    feasible points near the start.  ``mode`` only changes which convergence
    bound :func:`rate_bound` reports; the iteration itself is identical.
    ``grow`` > 1 lets an accepted step enlarge the next one (the halving
    guard still prevents ascent).
    """

    step_size: Optional[float] = None
    max_iters: int = 200
    stagnation_tol: float = 1e-8
    mode: str = "plain"
    grow: float = 1.0
    max_step: float = math.inf
    lipschitz: Optional[float] = None
    grad_bound: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("plain", "strong_dominance"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.step_size is not None:
            limits = [1.0 / v for v in (self.lipschitz, self.grad_bound) if v]
            if limits and self.step_size > min(limits) * (1 + 1e-12):
                raise ValueError(
                    f"step_size {self.step_size} exceeds min(1/sup|grad|, 1/L) = {min(limits)}"
                )


@dataclass(eq=False)
class PgdReport:
    final_point: np.ndarray
    final_value: float
    iterations_used: int
    gradient_mapping_norm: float
    value_trace: list = field(default_factory=list)
    step_size: float = math.nan


class AlphaEstimate(NamedTuple):
    alpha: float
    heuristic: bool


def _check_finite(f, g, x):
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise OracleError("objective or gradient is not finite", x)


def estimate_step_size(objective, projection, x0, rng=None, n_points=10, scale=0.1):
    """``1 / (2 * max observed gradient norm)`` over feasible points near x0."""
    rng = np.random.default_rng(0) if rng is None else rng
    x0 = np.asarray(x0, dtype=float)
    worst = np.linalg.norm(objective(x0)[1])
    for _ in range(n_points - 1):
        x = projection(x0 + scale * rng.standard_normal(x0.shape))
        worst = max(worst, np.linalg.norm(objective(x)[1]))
    return 1.0 / (2.0 * worst) if worst > 0 else 1.0


def pgd_minimize(objective: Objective, projection, x0, cfg: PgdConfig = PgdConfig(), rng=None) -> PgdReport:
    """Minimize ``objective`` over the set behind ``projection``.

    Iterates ``x <- Proj(x - beta grad f(x))``.  A step that would raise the
    objective is retried with half the step size, so the value trace never
    increases.  Stops after ``cfg.max_iters`` steps or once the gradient
    mapping norm ``||x - Proj(x - beta grad)|| / beta`` drops below
    ``cfg.stagnation_tol``.
    """
    x = np.asarray(x0, dtype=float)
    f, g = objective(x)
    _check_finite(f, g, x)
    beta = cfg.step_size if cfg.step_size is not None else estimate_step_size(objective, projection, x, rng)
    trace = [f]
    used = 0
    gmap = math.inf
    for _ in range(cfg.max_iters):
        while True:
            x_new = projection(x - beta * g)
            f_new, g_new = objective(x_new)
            _check_finite(f_new, g_new, x_new)
            if f_new <= f + 1e-12 * max(1.0, abs(f)) or beta < 1e-14:
                break
            beta *= 0.5
        gmap = float(np.linalg.norm(x - x_new)) / beta
        used += 1
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if gmap < cfg.stagnation_tol:
            break
        if cfg.grow != 1.0:
            beta = min(beta * cfg.grow, cfg.max_step)
    if used == 0 or gmap >= cfg.stagnation_tol:
        # report the mapping at the returned point, not at the previous one
        gmap = float(np.linalg.norm(x - projection(x - beta * g))) / beta
    return PgdReport(
        final_point=x,
        final_value=float(f),
        iterations_used=used,
        gradient_mapping_norm=gmap,
        value_trace=trace,
        step_size=beta,
    )


class PgdOracle:
    """Approximate minimization oracle ``(objective, warm_start) -> PgdReport``.

    With ``remember_step`` the step size that the previous call ended with
    seeds the next call, which skips the step-size probe when a sequence of
    similar objectives is minimized.
    """

    def __init__(self, projection, cfg: PgdConfig = PgdConfig(), rng=None, remember_step=False):
        self.projection = projection
        self.cfg = cfg
        self.rng = rng
        self.remember_step = remember_step
        self._beta = None

    def __call__(self, objective, x0):
        cfg = self.cfg
        if self.remember_step and cfg.step_size is None and self._beta is not None:
            cfg = replace(cfg, step_size=self._beta, lipschitz=None, grad_bound=None)
        report = pgd_minimize(objective, self.projection, x0, cfg, self.rng)
        if self.remember_step:
            self._beta = report.step_size
        return report


def estimate_alpha(report: PgdReport, reference_min: Optional[float] = None) -> AlphaEstimate:
    """Oracle error: the gap to a known minimum, else the gradient mapping
    norm flagged as a heuristic proxy."""
    if reference_min is not None:
        return AlphaEstimate(report.final_value - reference_min, False)
    return AlphaEstimate(report.gradient_mapping_norm, True)


def rate_bound(mode, iters, initial_gap, dominance, beta=None, diameter=None, lipschitz=None, delta=None):
    """Worst-case suboptimality after ``iters`` steps.

    plain:            sqrt(2 D^2 K^2 (f(x0) - f*) / (beta T))
    strong_dominance: (1 - delta / (K^2 L))^T (f(x0) - f*)
    """
    if mode == "plain":
        return math.sqrt(2 * diameter**2 * dominance**2 * initial_gap / (beta * max(iters, 1)))
    if mode == "strong_dominance":
        rho = 1.0 - delta / (dominance**2 * lipschitz)
        return max(rho, 0.0) ** iters * initial_gap
    raise ValueError(f"unknown mode {mode!r}")
