"""Exact tabular MDP machinery.

Array conventions used throughout the package:

* ``reward[s, a]``      -- reward for taking action ``a`` in state ``s``
* ``policy[s, a]``      -- probability of action ``a`` in state ``s``
* ``w[s_next, a, s]``   -- probability of moving to ``s_next`` from ``(s, a)``

Every value quantity is computed by a dense direct solve of the Bellman
linear system, so gradients match finite differences to rounding error.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_SIMPLEX_TOL = 1e-9


class MdpError(ValueError):
    """Raised for malformed MDP data or a failed value solve."""


def _check_simplex(probs, axis, what):
    if np.any(probs < -_SIMPLEX_TOL):
        raise MdpError(f"{what} has negative entries (min {probs.min():.3e})")
    err = np.max(np.abs(probs.sum(axis=axis) - 1.0))
    if err > _SIMPLEX_TOL:
        raise MdpError(f"{what} rows do not sum to 1 (max error {err:.3e})")


@dataclass(frozen=True, eq=False)
class Mdp:
    """Tabular discounted MDP without its transition kernel.

    The dynamics are kept separate (see :class:`TransitionParams`) because
    they are the adversary's decision variable.
    """

    reward: np.ndarray
    gamma: float
    mu: np.ndarray
    r_max: Optional[float] = None

    def __post_init__(self):
        reward = np.array(self.reward, dtype=float)
        mu = np.array(self.mu, dtype=float)
        if reward.ndim != 2 or reward.size == 0:
            raise MdpError("reward must be a non-empty (n_states, n_actions) table")
        if mu.shape != (reward.shape[0],):
            raise MdpError(f"mu has shape {mu.shape}, expected ({reward.shape[0]},)")
        if not 0.0 <= self.gamma < 1.0:
            raise MdpError(f"gamma must lie in [0, 1), got {self.gamma}")
        _check_simplex(mu, 0, "mu")
        r_max = float(np.max(np.abs(reward))) if self.r_max is None else float(self.r_max)
        if np.max(np.abs(reward)) > r_max:
            raise MdpError("reward magnitude exceeds declared r_max")
        reward.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """Direct policy parameterization, ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise MdpError("policy table must be 2-d (n_states, n_actions)")
        _check_simplex(probs, 1, "policy")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)


@dataclass(frozen=True, eq=False)
class TransitionParams:
    """Direct dynamics parameterization, ``probs[s_next, a, s]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 3 or probs.shape[0] != probs.shape[2]:
            raise MdpError("transition tensor must have shape (n_states, n_actions, n_states)")
        _check_simplex(probs, 0, "transition tensor")
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True, eq=False)
class ValueBundle:
    """Output of :func:`solve_value`.

    ``d_mu`` is the (1 - gamma)-normalized discounted state visitation
    distribution, so it sums to one.
    """

    v: np.ndarray
    q: np.ndarray
    d_mu: np.ndarray
    policy: np.ndarray = field(repr=False)
    condition_estimate: float = np.nan


def _as_array(x):
    return x.probs if hasattr(x, "probs") else np.asarray(x, dtype=float)


def induced_chain(policy, w):
    """State-to-state matrix ``P[s, s_next]`` under ``policy`` and ``w``."""
    return np.einsum("sa,tas->st", policy, w)


def evaluate(reward, gamma, mu, policy, w):
    """Unchecked fast path used inside the optimizers.

    Returns ``(v, q, d_mu, lu_matrix)``; no validation is performed.
    """
    n = reward.shape[0]
    m = np.eye(n) - gamma * induced_chain(policy, w)
    r_pi = np.einsum("sa,sa->s", policy, reward)
    # one LU, two right-hand sides: v = M^-1 r_pi, d^T = (1-gamma) mu^T M^-1
    sol = np.linalg.solve(np.stack([m, m.T]), np.stack([r_pi, mu])[..., None])[..., 0]
    v = sol[0]
    d = (1.0 - gamma) * sol[1]
    q = reward + gamma * np.einsum("tas,t->sa", w, v)
    return v, q, d, m


def evaluate_batch(reward, gamma, mu, policies, ws):
    """Vectorized :func:`evaluate` over a leading batch axis.

    ``policies`` has shape (k, S, A) or (S, A); ``ws`` has shape (k, S, A, S)
    or (S, A, S).  Returns ``(v, q, d)`` with a leading axis of length k.
    """
    policies = np.asarray(policies)
    ws = np.asarray(ws)
    if policies.ndim == 2 and ws.ndim == 4:
        chain = np.einsum("sa,ktas->kst", policies, ws)
        r_pi = np.broadcast_to(np.einsum("sa,sa->s", policies, reward), (ws.shape[0], reward.shape[0]))
    elif policies.ndim == 3 and ws.ndim == 3:
        chain = (policies[:, :, None, :] @ ws.transpose(2, 1, 0))[:, :, 0, :]
        r_pi = np.einsum("ksa,sa->ks", policies, reward)
    else:
        chain = np.einsum("ksa,ktas->kst", policies, ws)
        r_pi = np.einsum("ksa,sa->ks", policies, reward)
    k, n = chain.shape[0], chain.shape[1]
    m = np.eye(n)[None] - gamma * chain
    a = np.concatenate([m, np.swapaxes(m, 1, 2)])
    b = np.concatenate([r_pi, np.broadcast_to(mu, (k, n))])[..., None]
    sol = np.linalg.solve(a, b)[..., 0]
    v = sol[:k]
    d = (1.0 - gamma) * sol[k:]
    if ws.ndim == 4:
        q = reward[None] + gamma * np.einsum("ktas,kt->ksa", ws, v)
    else:
        q = reward[None] + gamma * np.einsum("tas,kt->ksa", ws, v)
    return v, q, d


def solve_value(mdp: Mdp, policy, w) -> ValueBundle:
    """Exact policy evaluation of ``policy`` under dynamics ``w``.

    Solves ``(I - gamma P_pi) v = r_pi`` by LU factorization and derives the
    Q-table and the normalized occupancy measure from the same system.

    Raises
    ------
    MdpError
        On shape mismatch or if the solve residual exceeds 1e-6.
    """
    pi = _as_array(policy)
    wt = _as_array(w)
    n, a = mdp.n_states, mdp.n_actions
    if pi.shape != (n, a):
        raise MdpError(f"policy shape {pi.shape} does not match MDP ({n}, {a})")
    if wt.shape != (n, a, n):
        raise MdpError(f"transition shape {wt.shape} does not match MDP ({n}, {a}, {n})")
    v, q, d, m = evaluate(mdp.reward, mdp.gamma, mdp.mu, pi, wt)
    r_pi = np.einsum("sa,sa->s", pi, mdp.reward)
    residual = np.max(np.abs(m @ v - r_pi), initial=0.0)
    if not np.all(np.isfinite(v)) or residual > 1e-6:
        raise MdpError(f"Bellman solve failed (residual {residual:.3e})")
    return ValueBundle(v=v, q=q, d_mu=d, policy=pi, condition_estimate=float(np.linalg.cond(m, 1)))


def value_at(mdp: Mdp, bundle: ValueBundle) -> float:
    """``V(mu) = mu^T v``."""
    return float(mdp.mu @ bundle.v)


def policy_advantage(bundle: ValueBundle) -> np.ndarray:
    """``A(s, a) = Q(s, a) - V(s)``."""
    return bundle.q - bundle.v[:, None]


def w_advantage(mdp: Mdp, bundle: ValueBundle) -> np.ndarray:
    """Transition-side advantage ``gamma V(s') + r(s, a) - V(s)``.

    Indexed ``[s_next, a, s]`` like the transition tensor.
    """
    v = bundle.v
    return mdp.gamma * v[:, None, None] + mdp.reward.T[None, :, :] - v[None, None, :]


def grad_value_wrt_policy(mdp: Mdp, policy, w) -> np.ndarray:
    """Gradient of ``V(mu)`` w.r.t. each raw policy entry ``pi[s, a]``."""
    b = solve_value(mdp, policy, w)
    return b.d_mu[:, None] * b.q / (1.0 - mdp.gamma)


def grad_value_wrt_transitions(mdp: Mdp, policy, w) -> np.ndarray:
    """Gradient of ``V(mu)`` w.r.t. each raw transition entry ``w[s', a, s]``.

    Equals ``gamma / (1 - gamma) * d(s) * pi(s, a) * v(s')``.
    """
    b = solve_value(mdp, policy, w)
    scale = mdp.gamma / (1.0 - mdp.gamma)
    return scale * b.v[:, None, None] * (b.d_mu[:, None] * b.policy).T[None, :, :]


def iterative_policy_evaluation(mdp: Mdp, policy, w, tol=1e-12, max_iter=100_000):
    """Fixed-point Bellman iteration; slow and only meant as a cross-check."""
    pi = _as_array(policy)
    chain = induced_chain(pi, _as_array(w))
    r_pi = np.einsum("sa,sa->s", pi, mdp.reward)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        v_new = r_pi + mdp.gamma * chain @ v
        if np.max(np.abs(v_new - v)) < tol:
            return v_new
        v = v_new
    return v


# -- text serialization ------------------------------------------------------

def _fmt(values):
    return " ".join(repr(float(x)) for x in np.ravel(values))


def dumps_mdp(mdp: Mdp, nominal=None) -> str:
    """Serialize to the flat key-value text format.

    Layout::

        n_states <int>
        n_actions <int>
        gamma <float>
        r_max <float>
        reward <n_states*n_actions floats, row-major (s, a)>
        mu <n_states floats>
        transitions <S*A*S floats, row-major (s', a, s)>     # optional

    Floats are written with ``repr`` so the round trip is bit exact.
    """
    lines = [
        f"n_states {mdp.n_states}",
        f"n_actions {mdp.n_actions}",
        f"gamma {mdp.gamma!r}",
        f"r_max {mdp.r_max!r}",
        f"reward {_fmt(mdp.reward)}",
        f"mu {_fmt(mdp.mu)}",
    ]
    if nominal is not None:
        lines.append(f"transitions {_fmt(_as_array(nominal))}")
    return "\n".join(lines) + "\n"


def loads_mdp(text: str):
    """Inverse of :func:`dumps_mdp`; returns ``(mdp, nominal_or_None)``."""
    fields = {}
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key in fields:
            raise MdpError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = (lineno, rest.split())
    for key in ("n_states", "n_actions", "gamma", "reward", "mu"):
        if key not in fields:
            raise MdpError(f"missing key {key!r}")

    def scalar(key, kind):
        lineno, toks = fields[key]
        if len(toks) != 1:
            raise MdpError(f"line {lineno}: {key} expects one value")
        try:
            return kind(toks[0])
        except ValueError as exc:
            raise MdpError(f"line {lineno}: {exc}") from None

    def array(key, size):
        lineno, toks = fields[key]
        if len(toks) != size:
            raise MdpError(f"line {lineno}: {key} expects {size} values, got {len(toks)}")
        try:
            return np.array([float(t) for t in toks])
        except ValueError as exc:
            raise MdpError(f"line {lineno}: {exc}") from None

    n = scalar("n_states", int)
    a = scalar("n_actions", int)
    mdp = Mdp(
        reward=array("reward", n * a).reshape(n, a),
        gamma=scalar("gamma", float),
        mu=array("mu", n),
        r_max=scalar("r_max", float) if "r_max" in fields else None,
    )
    nominal = None
    if "transitions" in fields:
        nominal = TransitionParams(array("transitions", n * a * n).reshape(n, a, n))
    return mdp, nominal


def save_mdp(path, mdp: Mdp, nominal=None):
    with open(path, "w") as fh:
        fh.write(dumps_mdp(mdp, nominal))


def load_mdp(path):
    with open(path) as fh:
        return loads_mdp(fh.read())


def dumps_policy(policy) -> str:
    pi = _as_array(policy)
    return f"n_states {pi.shape[0]}\nn_actions {pi.shape[1]}\npolicy {_fmt(pi)}\n"


def loads_policy(text: str) -> PolicyParams:
    fields = {}
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, rest = line.partition(" ")
            fields[key] = (lineno, rest.split())
    for key in ("n_states", "n_actions", "policy"):
        if key not in fields:
            raise MdpError(f"missing key {key!r}")

    def parse(key, kind):
        lineno, toks = fields[key]
        try:
            return lineno, [kind(t) for t in toks]
        except ValueError as exc:
            raise MdpError(f"line {lineno}: {exc}") from None

    (_, (n,)), (_, (a,)) = parse("n_states", int), parse("n_actions", int)
    lineno, vals = parse("policy", float)
    if len(vals) != n * a:
        raise MdpError(f"line {lineno}: policy expects {n * a} values, got {len(vals)}")
    return PolicyParams(np.array(vals).reshape(n, a))
