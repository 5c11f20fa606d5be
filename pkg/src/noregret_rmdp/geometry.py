"""Feasible-set geometry: simplex and norm-ball projections, projection onto
the transition uncertainty set, and exponential perturbations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp_core import TransitionParams, _as_array

FEAS_TOL = 1e-8


class ProjectionError(RuntimeError):
    """Alternating projection failed to converge.

    ``violations`` holds the final (simplex, ball) constraint violations.
    """

    def __init__(self, msg, violations):
        super().__init__(msg)
        self.violations = violations


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """``{T : ||T - nominal||_q <= tau}`` intersected with the per-(a, s)
    simplices.  The norm is taken over the flattened tensor."""

    nominal: TransitionParams
    q: int
    tau: float

    def __post_init__(self):
        if self.q not in (1, 2):
            raise ValueError(f"q must be 1 or 2, got {self.q}")
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")
        if not isinstance(self.nominal, TransitionParams):
            object.__setattr__(self, "nominal", TransitionParams(self.nominal))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def shape(self):
        return self.nominal.probs.shape

    def distance(self, w):
        return tensor_norm(_as_array(w) - self.nominal.probs, self.q)

    def contains(self, w, tol=FEAS_TOL):
        w = _as_array(w)
        return (
            w.shape == self.shape
            and bool(np.all(w >= -1e-10))
            and bool(np.max(np.abs(w.sum(axis=0) - 1.0)) <= tol)
            and self.distance(w) <= self.tau + tol
        )

    def project(self, w):
        return project_uncertainty(w, self)

    def sample(self, rng):
        """A random member: a Dirichlet tensor pulled into the set."""
        shape = self.shape
        raw = rng.dirichlet(np.ones(shape[0]), size=shape[1:]).transpose(2, 0, 1)
        return project_uncertainty(raw, self).probs


@dataclass(frozen=True)
class NoiseSpec:
    """Exponential perturbation with rate ``eta`` (mean ``1/eta``) in ``dim``
    coordinates."""

    eta: float
    dim: int

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")


def tensor_norm(x, q):
    x = np.ravel(x)
    return float(np.sum(np.abs(x))) if q == 1 else float(np.sqrt(x @ x))


def project_simplex(x, axis=-1):
    """Euclidean projection onto the probability simplex along ``axis``.

    Sort-and-threshold construction; works on any array, projecting each
    1-d slice along ``axis`` independently.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("cannot project an empty vector")
    xm = np.moveaxis(x, axis, -1)
    n = xm.shape[-1]
    u = -np.sort(-xm, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - css / ind > 0
    rho = n - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = np.take_along_axis(css, rho[..., None], axis=-1) / (rho[..., None] + 1.0)
    out = np.maximum(xm - theta, 0.0)
    return np.moveaxis(out, -1, axis)


def project_l1_ball(x, tau):
    """Projection of ``x`` onto ``{y : ||y||_1 <= tau}`` (flattened)."""
    x = np.asarray(x, dtype=float)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    flat = x.ravel()
    if np.abs(flat).sum() <= tau:
        return x.copy()
    if tau == 0:
        return np.zeros_like(x)
    u = np.sort(np.abs(flat))[::-1]
    css = np.cumsum(u)
    ind = np.arange(1, u.size + 1)
    rho = np.nonzero(u * ind > css - tau)[0][-1]
    theta = (css[rho] - tau) / (rho + 1.0)
    return (np.sign(flat) * np.maximum(np.abs(flat) - theta, 0.0)).reshape(x.shape)


def project_ball(x, center, q, tau):
    """Projection onto ``{y : ||y - center||_q <= tau}`` for q in {1, 2}."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=float)
    center = np.asarray(center, dtype=float)
    if x.shape != center.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {center.shape}")
    diff = x - center
    if q == 2:
        nrm = np.sqrt(np.sum(diff * diff))
        if nrm <= tau:
            return x.copy()
        return center + diff * (tau / nrm)
    if q == 1:
        return center + project_l1_ball(diff, tau)
    raise ValueError(f"unsupported norm order {q}")


def _l1_penalized_simplex(x, c, lam):
    """Row-wise ``argmin_{y in simplex} ||y - x||^2 + 2 lam ||y - c||_1``.

    Rows are the last axis of the 2-d inputs.  Each coordinate of the
    solution is ``max(0, c + soft(x + nu - c, lam))`` for a per-row shift
    ``nu``.  The row sum is piecewise linear and nondecreasing in ``nu``
    with slope changes +1, -1, +1 at three breakpoints per coordinate, so
    the root is located exactly by a sorted cumulative-slope scan.
    """
    rows, n = x.shape
    breaks = np.concatenate([-x - lam, c - x - lam, c - x + lam], axis=1)
    deltas = np.concatenate([np.ones(n), -np.ones(n), np.ones(n)])
    order = np.argsort(breaks, axis=1)
    b = np.take_along_axis(breaks, order, axis=1)
    slope = np.cumsum(deltas[order], axis=1)
    g = np.zeros_like(b)
    np.cumsum(slope[:, :-1] * np.diff(b, axis=1), axis=1, out=g[:, 1:])
    hit = g >= 1.0
    k = np.where(hit.any(axis=1), np.argmax(hit, axis=1), b.shape[1])
    idx = (np.arange(rows), k - 1)
    nu = b[idx] + (1.0 - g[idx]) / slope[idx]
    u = x + nu[:, None] - c
    y = np.maximum(c + np.sign(u) * np.maximum(np.abs(u) - lam, 0.0), 0.0)
    return y


def _l2_piece(y, c, delta):
    """Affine model ``y(t) - c = a + t b`` of ``P(c + t delta) - c`` on the
    active set of ``y`` (rows along axis 0)."""
    on = y > 0
    cnt = on.sum(axis=0)
    shift_c = (np.where(on, c, 0.0).sum(axis=0) - 1.0) / cnt
    mean_d = np.where(on, delta, 0.0).sum(axis=0) / cnt
    a = np.where(on, -shift_c, -c)
    b = np.where(on, delta - mean_d, 0.0)
    return a, b


def _l1_piece(y, x, c, lam):
    """Affine model ``y(lam) - c = a + lam b`` of the penalized row solution
    on its current active pattern (rows along the last axis)."""
    diff = y - c
    zero = y <= 0
    up = (diff > 0) & ~zero
    down = (diff < 0) & ~zero
    mov = up | down
    m = mov.sum(axis=1)
    sgn = np.where(up, 1.0, np.where(down, -1.0, 0.0))
    safe = np.maximum(m, 1)
    nu0 = (-np.where(mov, x - c, 0.0).sum(axis=1) + np.where(zero, c, 0.0).sum(axis=1)) / safe
    dnu = sgn.sum(axis=1) / safe
    a = np.where(mov, x - c + nu0[:, None], np.where(zero, -c, 0.0))
    b = np.where(mov, dnu[:, None] - sgn, 0.0)
    return a, b, sgn


def _solve_l2(w, c, tau, t0):
    # parametrize the Lagrangian path by t = 1 / (1 + lam) in (0, 1]
    delta = w - c
    lo, hi = 0.0, 1.0
    t = 1.0 if t0 is None else min(max(t0, 1e-12), 1.0)
    for _ in range(100):
        y = project_simplex(c + t * delta, axis=0)
        dist = tensor_norm(y - c, 2)
        if abs(dist - tau) <= 1e-13 * max(1.0, tau):
            return y, t
        if dist > tau:
            hi = t
        else:
            lo = t
        a, b = _l2_piece(y, c, delta)
        bb, ab, aa = float(np.sum(b * b)), float(np.sum(a * b)), float(np.sum(a * a))
        disc = ab * ab - bb * (aa - tau * tau)
        t_new = (-ab + np.sqrt(disc)) / bb if bb > 0 and disc >= 0 else -1.0
        if not lo < t_new < hi or t_new == t:
            t_new = 0.5 * (lo + hi)
        t = t_new
    return project_simplex(c + lo * delta, axis=0), lo


def _solve_l1(xr, cr, tau, lam0):
    # dist(lam) is piecewise linear with long flat stretches; Newton on the
    # current piece, else an Illinois-weighted secant across the bracket
    lo, hi = 0.0, float(np.max(np.abs(xr - cr))) + 1.0
    f_lo, f_hi = None, -tau
    side = 0
    lam = lo if lam0 is None else min(lam0, hi)
    for _ in range(200):
        y = _l1_penalized_simplex(xr, cr, lam)
        dist = float(np.abs(y - cr).sum())
        f = dist - tau
        if abs(f) <= 1e-13 * max(1.0, tau):
            return y, lam
        if f > 0:
            lo, f_lo = lam, f
            if side == 1:
                f_hi *= 0.5
            side = 1
        else:
            hi, f_hi = lam, f
            if side == -1 and f_lo is not None:
                f_lo *= 0.5
            side = -1
        a, b, sgn = _l1_piece(y, xr, cr, lam)
        zero_mass = float(np.where(y <= 0, cr, 0.0).sum())
        slope = float(np.sum(sgn * b))
        lam_new = (tau - zero_mass - float(np.sum(sgn * a))) / slope if slope != 0 else -1.0
        if not lo < lam_new < hi or lam_new == lam:
            if f_lo is not None and f_lo != f_hi:
                lam_new = lo + (hi - lo) * f_lo / (f_lo - f_hi)
            if not lo < lam_new < hi or lam_new == lam:
                lam_new = 0.5 * (lo + hi)
        lam = lam_new
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return _l1_penalized_simplex(xr, cr, hi), hi


def _project_exact(w, uset, warm=None):
    """Exact projection; returns ``(point, multiplier)`` for warm starts."""
    n, a, _ = w.shape
    c = uset.nominal.probs
    tau = uset.tau
    base = project_simplex(w, axis=0)
    if tensor_norm(base - c, uset.q) <= tau:
        return base, None
    if tau == 0:
        return c.copy(), None
    if uset.q == 2:
        y, mult = _solve_l2(w, c, tau, warm)
    else:
        xr = w.reshape(n, -1).T
        cr = c.reshape(n, -1).T
        yr, mult = _solve_l1(xr, cr, tau, warm)
        y = yr.T.reshape(n, a, n)
    y = y / y.sum(axis=0, keepdims=True)
    return _pull_inside(y, c, uset), mult


def _pull_inside(y, c, uset):
    # the active-set solve stops at |excess| ~ 1e-13; shrink toward the centre
    dist = tensor_norm(y - c, uset.q)
    if dist > uset.tau:
        y = c + (y - c) * (uset.tau / dist)
    return y


class UncertaintyProjector:
    """Callable exact projector that warm-starts from its previous call.

    Successive projections inside a gradient loop have nearly identical
    Lagrange multipliers, so the active-set solve usually finishes in one
    or two piece evaluations.
    """

    def __init__(self, uset: UncertaintySet):
        self.uset = uset
        self._mult = None

    def __call__(self, w):
        y, mult = _project_exact(np.asarray(w, dtype=float), self.uset, self._mult)
        if mult is not None:
            self._mult = mult
        return np.maximum(y, 0.0)


def project_uncertainty_dykstra(w, uset, tol=1e-10, max_sweeps=1000, feas_tol=1e-11):
    """Dykstra's alternating projection between the simplices and the ball.

    Converges to the Euclidean projection onto the intersection.  Dykstra
    can stall on polyhedral pieces, so stagnation alone does not stop the
    loop: the iterate must also satisfy both constraints to ``feas_tol``.
    """
    x = np.array(_as_array(w), dtype=float)
    c = uset.nominal.probs
    p = np.zeros_like(x)
    r = np.zeros_like(x)
    for _ in range(max_sweeps):
        y = project_simplex(x + p, axis=0)
        p = x + p - y
        x_new = project_ball(y + r, c, uset.q, uset.tau)
        r = y + r - x_new
        moved = np.max(np.abs(x_new - x))
        x = x_new
        if moved < tol and max(_violations(x, uset)) <= feas_tol:
            return x
    raise ProjectionError(f"Dykstra did not converge in {max_sweeps} sweeps", _violations(x, uset))


def _violations(x, uset):
    simplex = max(float(np.max(np.abs(x.sum(axis=0) - 1.0))), float(-min(x.min(), 0.0)))
    ball = max(0.0, uset.distance(x) - uset.tau)
    return simplex, ball


def project_uncertainty(w, uset: UncertaintySet, method="exact") -> TransitionParams:
    """Euclidean projection of a raw tensor onto the uncertainty set.

    ``method="exact"`` solves the one-dimensional Lagrangian dual of the ball
    constraint by root finding (each dual evaluation is a closed-form
    row-wise projection); ``method="dykstra"`` runs Dykstra's algorithm.
    Both return the same point up to solver tolerance.
    """
    w = np.asarray(_as_array(w), dtype=float)
    if w.shape != uset.shape:
        raise ValueError(f"tensor shape {w.shape} does not match uncertainty set {uset.shape}")
    if method == "exact":
        out, _ = _project_exact(w, uset)
    elif method == "dykstra":
        out = project_uncertainty_dykstra(w, uset)
    else:
        raise ValueError(f"unknown projection method {method!r}")
    out = np.maximum(out, 0.0)
    return TransitionParams(out)


def sample_exp_noise(spec: NoiseSpec, rng) -> np.ndarray:
    """``spec.dim`` i.i.d. exponential draws with rate ``spec.eta``."""
    return rng.exponential(1.0 / spec.eta, size=spec.dim)
