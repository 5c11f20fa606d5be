"""No-regret game between a policy player and an adversarial dynamics player.

The policy player maximizes ``g(pi, W) = V_W^pi(mu) - reg * ||pi||^2`` and
the dynamics player minimizes it over the uncertainty set.  Losses follow
the zero-sum wiring ``h_t(pi) = -g(pi, W_t)``; the dynamics player's loss is
``V_W^{pi_t}(mu) + reg * ||pi_t||^2``, which differs from ``g(pi_t, W)``
only by a constant in ``W``.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .geometry import NoiseSpec, UncertaintyProjector, UncertaintySet, project_simplex
from .mdp_core import Mdp, _as_array, evaluate, evaluate_batch
from .online import (
    LearnerError,
    LossHistory,
    best_response_step,
    ftpl_plus_step,
    ftpl_step,
    oftpl_step,
    theory_eta,
)
from .pgd import PgdConfig, PgdOracle, estimate_step_size, pgd_minimize

PI_STRATEGIES = ("ftpl", "oftpl_last_loss")
W_STRATEGIES = ("best_response", "ftpl_plus")
ETA_SCHEDULES = ("constant", "anytime")

DEFAULT_ORACLE = PgdConfig(max_iters=200, stagnation_tol=1e-6, grow=1.25)


class GameError(RuntimeError):
    """A round failed; ``trace`` holds the rounds completed before it."""

    def __init__(self, msg, round_index, trace):
        super().__init__(msg)
        self.round_index = round_index
        self.trace = trace


def policy_lipschitz(mdp: Mdp):
    """``2 gamma R_max |A| / (1 - gamma)^2``."""
    return 2.0 * mdp.gamma * mdp.r_max * mdp.n_actions / (1.0 - mdp.gamma) ** 2


@dataclass(frozen=True, eq=False)
class GameConfig:
    """One game.  ``eta_pi``/``eta_w`` of ``None`` use the FTPL tuning
    ``1 / (L sqrt(T d))`` with ``L = 2 gamma R_max |A| / (1 - gamma)^2``.

    ``eta_schedule="anytime"`` rescales the rates each round (see
    :meth:`eta_at`).  ``eval_stride`` of ``None`` evaluates robustness every
    ``max(1, rounds // 50)`` rounds; ``0`` disables evaluation.
    """

    mdp: Mdp
    uncertainty: UncertaintySet
    rounds: int
    pi_strategy: str = "ftpl"
    w_strategy: str = "best_response"
    regularizer_weight: float = 0.0
    eta_pi: Optional[float] = None
    eta_w: Optional[float] = None
    oracle_cfg_pi: PgdConfig = DEFAULT_ORACLE
    oracle_cfg_w: PgdConfig = DEFAULT_ORACLE
    seed: int = 0
    eval_stride: Optional[int] = None
    eval_restarts: int = 0
    eval_cfg: PgdConfig = DEFAULT_ORACLE
    mixture_eval: bool = False
    drpg_step: Optional[float] = None
    record_timing: bool = True
    eta_schedule: str = "constant"

    def __post_init__(self):
        if self.pi_strategy not in PI_STRATEGIES:
            raise ValueError(f"pi_strategy must be one of {PI_STRATEGIES}")
        if self.w_strategy not in W_STRATEGIES:
            raise ValueError(f"w_strategy must be one of {W_STRATEGIES}")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")
        if self.eta_schedule not in ETA_SCHEDULES:
            raise ValueError(f"eta_schedule must be one of {ETA_SCHEDULES}")
        if self.regularizer_weight < 0:
            raise ValueError("regularizer_weight must be nonnegative")
        if self.uncertainty.shape != (self.mdp.n_states, self.mdp.n_actions, self.mdp.n_states):
            raise ValueError("uncertainty set does not match the MDP dimensions")

    @property
    def pi_dim(self):
        return self.mdp.n_states * self.mdp.n_actions

    @property
    def w_dim(self):
        return self.pi_dim * self.mdp.n_states

    def resolved_eta_pi(self):
        if self.eta_pi is not None:
            return self.eta_pi
        return theory_eta(policy_lipschitz(self.mdp), self.rounds, self.pi_dim)

    def resolved_eta_w(self):
        return self.eta_w if self.eta_w is not None else self.resolved_eta_pi()

    def eta_at(self, eta, t):
        """Noise rate in round ``t``.  ``anytime`` uses ``eta sqrt(T / t)``:
        noise grows like ``sqrt(t)`` and matches ``eta`` at the horizon."""
        if self.eta_schedule == "anytime":
            return eta * math.sqrt(self.rounds / t)
        return eta

    @property
    def stride(self):
        if self.eval_stride is None:
            return max(1, self.rounds // 50)
        return self.eval_stride


def alg4(mdp, uncertainty, rounds, **kw):
    """FTPL policy player against a Best-Response dynamics player."""
    return GameConfig(mdp, uncertainty, rounds, "ftpl", "best_response", 0.0, **kw)


def alg5(mdp, uncertainty, rounds, **kw):
    """Optimistic FTPL (last loss as the guess) against FTPL+."""
    return GameConfig(mdp, uncertainty, rounds, "oftpl_last_loss", "ftpl_plus", 0.0, **kw)


def alg6(mdp, uncertainty, rounds, regularizer_weight=1.0, **kw):
    """Alg. 4 wiring on the l2-regularized objective."""
    return GameConfig(mdp, uncertainty, rounds, "ftpl", "best_response", regularizer_weight, **kw)


PRESETS = {"alg4": alg4, "alg5": alg5, "alg6": alg6}


# -- losses -------------------------------------------------------------------

def w_value_loss(mdp: Mdp, policy, offset=0.0):
    """``W -> V_W^pi(mu) + offset`` with its gradient."""
    pi = _as_array(policy)
    scale = mdp.gamma / (1.0 - mdp.gamma)

    def loss(w):
        v, _, d, _ = evaluate(mdp.reward, mdp.gamma, mdp.mu, pi, w)
        grad = scale * v[:, None, None] * (d[:, None] * pi).T[None, :, :]
        return float(mdp.mu @ v) + offset, grad

    return loss


def policy_value_loss(mdp: Mdp, w, reg=0.0):
    """``pi -> -V_W^pi(mu) + reg ||pi||^2`` with its gradient."""
    wt = _as_array(w)

    def loss(pi):
        v, q, d, _ = evaluate(mdp.reward, mdp.gamma, mdp.mu, pi, wt)
        grad = -d[:, None] * q / (1.0 - mdp.gamma) + 2.0 * reg * pi
        return -float(mdp.mu @ v) + reg * float(np.sum(pi * pi)), grad

    return loss


def _policy_sum(mdp: Mdp, pi, ws_sat):
    """``sum_k V_{W_k}^pi(mu)`` and its policy gradient.

    ``ws_sat`` stacks the tensors as ``[k, s, a, s']`` so the induced chains
    come from one batched matmul.
    """
    k, n, na, _ = ws_sat.shape
    gamma = mdp.gamma
    chain = (pi[None, :, None, :] @ ws_sat)[:, :, 0, :]
    m = np.eye(n)[None] - gamma * chain
    a = np.concatenate([m, np.swapaxes(m, 1, 2)])
    b = np.concatenate([np.broadcast_to(np.sum(pi * mdp.reward, axis=1), (k, n)), np.broadcast_to(mdp.mu, (k, n))])
    sol = np.linalg.solve(a, b[..., None])[..., 0]
    v, occ = sol[:k], sol[k:]  # occ = d / (1 - gamma)
    ahead = (ws_sat.reshape(k, n * na, n) @ v[..., None]).reshape(k, n, na)
    grad = occ.sum(axis=0)[:, None] * mdp.reward + gamma * np.einsum("ks,ksa->sa", occ, ahead)
    return float(np.sum(v @ mdp.mu)), grad


class PolicyLossHistory(LossHistory):
    """Losses ``-g(., W_i)`` of the policy player, summed in one batched solve."""

    def __init__(self, mdp: Mdp, reg=0.0):
        super().__init__()
        self.mdp = mdp
        self.reg = reg
        self._ws: List[np.ndarray] = []
        self._stack = np.empty((0,) + (mdp.n_states, mdp.n_actions, mdp.n_states))

    def append(self, w):
        w = np.asarray(_as_array(w), dtype=float)
        self._ws.append(w)
        super().append(policy_value_loss(self.mdp, w, self.reg))

    def stacked(self, upto=None):
        """Tensors ``W_1..W_upto`` laid out as ``[k, s, a, s']``."""
        k = len(self._ws) if upto is None else upto
        if self._stack.shape[0] < k:
            fresh = np.stack([w.transpose(2, 1, 0) for w in self._ws[self._stack.shape[0]:]])
            self._stack = np.concatenate([self._stack, fresh])
        return self._stack[:k]

    def cumulative(self, upto=None):
        k = len(self) if upto is None else upto
        if k == 0:
            return super().cumulative(0)
        ws = self.stacked(k)
        mdp, reg = self.mdp, self.reg

        def total(pi):
            value, grad = _policy_sum(mdp, pi, ws)
            return -value + k * reg * float(np.sum(pi * pi)), -grad + 2.0 * k * reg * pi

        return total


class TransitionLossHistory(LossHistory):
    """Losses ``V_W^{pi_i}(mu) + reg ||pi_i||^2`` of the dynamics player."""

    def __init__(self, mdp: Mdp, reg=0.0):
        super().__init__()
        self.mdp = mdp
        self.reg = reg
        self._pis: List[np.ndarray] = []

    def append(self, policy):
        pi = np.asarray(_as_array(policy), dtype=float)
        self._pis.append(pi)
        super().append(w_value_loss(self.mdp, pi, self.reg * float(np.sum(pi * pi))))

    def cumulative(self, upto=None):
        k = len(self) if upto is None else upto
        if k == 0:
            return super().cumulative(0)
        pis = np.stack(self._pis[:k])
        return mixture_w_loss(self.mdp, pis, offset=self.reg * float(np.sum(pis * pis)))


def mixture_w_loss(mdp: Mdp, policies, offset=0.0):
    """``W -> sum_i V_W^{pi_i}(mu) + offset`` for a stack of policies."""
    pis = np.asarray(policies)
    scale = mdp.gamma / (1.0 - mdp.gamma)

    def loss(w):
        v, _, d = evaluate_batch(mdp.reward, mdp.gamma, mdp.mu, pis, w)
        grad = scale * np.einsum("kt,ksa->tas", v, d[:, :, None] * pis)
        return float(np.sum(v @ mdp.mu)) + offset, grad

    return loss


# -- trace --------------------------------------------------------------------

@dataclass(eq=False)
class RoundRecord:
    round: int
    policy: np.ndarray
    w: np.ndarray
    game_value: float
    loss_pi: float
    loss_w: float
    oracle_iters_pi: int
    oracle_iters_w: int
    grad_map_pi: float
    grad_map_w: float
    robust_value: float = math.nan
    best_robust_value: float = math.nan
    mixture_robust_value: float = math.nan
    wall_ms: float = math.nan


@dataclass(eq=False)
class GameTrace:
    records: List[RoundRecord] = field(default_factory=list)
    reg: float = 0.0
    label: str = ""

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def policies(self):
        return np.stack([r.policy for r in self.records])

    @property
    def transitions(self):
        return np.stack([r.w for r in self.records])

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def evaluated(self, name="robust_value"):
        """``(rounds, values)`` of the rounds where ``name`` was evaluated."""
        vals = self.column(name)
        keep = ~np.isnan(vals)
        return self.column("round")[keep], vals[keep]


TRACE_COLUMNS = (
    "round", "game_value", "loss_pi", "loss_w", "robust_value", "best_robust_value",
    "mixture_robust_value", "oracle_iters_pi", "oracle_iters_w", "grad_map_pi", "grad_map_w",
    "wall_ms",
)


def _cell(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def write_trace_csv(trace: GameTrace, path_or_file, timing=True):
    """Write the per-round trace.  Floats use ``repr`` (17 significant
    digits); unevaluated cells are empty.  ``timing=False`` leaves the
    ``wall_ms`` column empty so that reruns are byte-identical."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for r in trace:
            row = [getattr(r, c) for c in TRACE_COLUMNS]
            if not timing:
                row[-1] = math.nan
            writer.writerow([_cell(x) for x in row])
    finally:
        if own:
            fh.close()


def read_trace_csv(path):
    """Columns of a trace CSV as float arrays (NaN for empty cells)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {c: np.array([]) for c in TRACE_COLUMNS}
    return {
        key: np.array([float(r[key]) if r[key] != "" else math.nan for r in rows])
        for key in rows[0]
    }


# -- robustness -----------------------------------------------------------------

def _starts_oracle(uset, oracle_cfg, rng, oracle):
    if oracle is not None:
        return oracle
    return PgdOracle(UncertaintyProjector(uset), oracle_cfg, rng)


def _best_of(objective, oracle, starts):
    best = (math.inf, None)
    for x0 in starts:
        rep = oracle(objective, x0)
        if rep.final_value < best[0]:
            best = (rep.final_value, rep.final_point)
    return best


def worst_case_transition(mdp: Mdp, policy, uset: UncertaintySet, restarts=0, oracle_cfg=DEFAULT_ORACLE,
                          rng=None, warm_starts=(), oracle=None):
    """Minimize ``V_W^pi(mu)`` over the uncertainty set from several starts.

    Starts are the nominal tensor, any ``warm_starts`` and ``restarts``
    random members of the set.  ``oracle`` overrides the PGD oracle built
    from ``oracle_cfg``.  Returns ``(value, w)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    loss = w_value_loss(mdp, _as_array(policy))
    if uset.tau == 0:
        return loss(uset.nominal.probs)[0], uset.nominal.probs.copy()
    starts = [uset.nominal.probs] + [np.asarray(_as_array(w)) for w in warm_starts]
    starts += [uset.sample(rng) for _ in range(restarts)]
    return _best_of(loss, _starts_oracle(uset, oracle_cfg, rng, oracle), starts)


def evaluate_robustness(mdp: Mdp, policy, uset: UncertaintySet, restarts=0, oracle_cfg=DEFAULT_ORACLE, rng=None,
                        warm_starts=()):
    """Worst-case value ``min_W V_W^pi(mu)`` (oracle approximation)."""
    return worst_case_transition(mdp, policy, uset, restarts, oracle_cfg, rng, warm_starts)[0]


def mixture_robustness(mdp: Mdp, policies, uset: UncertaintySet, oracle_cfg=DEFAULT_ORACLE, warm_starts=(),
                       oracle=None):
    """``min_W mean_i V_W^{pi_i}(mu)``: worst case of the uniform mixture
    that draws one of the policies at the start of each episode.
    Returns ``(value, w)``."""
    pis = np.asarray(policies)
    loss = mixture_w_loss(mdp, pis)
    k = pis.shape[0]

    def avg(w):
        v, g = loss(w)
        return v / k, g / k

    if uset.tau == 0:
        return avg(uset.nominal.probs)[0], uset.nominal.probs.copy()
    # the W objective is gradient dominated, so a warm start replaces the nominal one
    starts = [np.asarray(w) for w in warm_starts] or [uset.nominal.probs]
    return _best_of(avg, _starts_oracle(uset, oracle_cfg, None, oracle), starts)


class _Evaluator:
    """Strided robustness bookkeeping shared by the game and DRPG loops.

    Owns its random source so that evaluation settings never perturb the
    players' noise.
    """

    def __init__(self, cfg: GameConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, 1])
        proj = UncertaintyProjector(cfg.uncertainty)
        self.oracle = PgdOracle(proj, cfg.eval_cfg, self.rng, remember_step=True)
        self.mix_oracle = PgdOracle(proj, cfg.eval_cfg, self.rng, remember_step=True)
        self.best = -math.inf
        self.mix_w = None

    def __call__(self, rec: RoundRecord, policies):
        cfg = self.cfg
        stride = cfg.stride
        if not stride or (rec.round % stride and rec.round != cfg.rounds):
            return
        reg = cfg.regularizer_weight
        value, _ = worst_case_transition(
            cfg.mdp, rec.policy, cfg.uncertainty, cfg.eval_restarts, rng=self.rng,
            warm_starts=(rec.w,), oracle=self.oracle,
        )
        rec.robust_value = value - reg * float(np.sum(rec.policy ** 2))
        self.best = max(self.best, rec.robust_value)
        rec.best_robust_value = self.best
        if cfg.mixture_eval:
            pis = np.stack(policies)
            warm = () if self.mix_w is None else (self.mix_w,)
            mv, self.mix_w = mixture_robustness(cfg.mdp, pis, cfg.uncertainty, warm_starts=warm, oracle=self.mix_oracle)
            rec.mixture_robust_value = mv - reg * float(np.mean(np.sum(pis ** 2, axis=(1, 2))))


# -- game loop -------------------------------------------------------------------

def _game_value(mdp, pi, w):
    v, _, _, _ = evaluate(mdp.reward, mdp.gamma, mdp.mu, pi, w)
    return float(mdp.mu @ v)


def run_game(cfg: GameConfig) -> GameTrace:
    """Play ``cfg.rounds`` rounds of the policy/dynamics game.

    Each round the policy player moves first (FTPL or optimistic FTPL over
    its past losses), then the dynamics player sees the policy and answers
    (Best-Response or FTPL+).  Both players' oracles are projected gradient
    descent warm-started from their previous choice.
    """
    mdp, uset = cfg.mdp, cfg.uncertainty
    reg = cfg.regularizer_weight
    rng = np.random.default_rng(cfg.seed)
    trace = GameTrace(reg=reg, label=f"{cfg.pi_strategy}/{cfg.w_strategy}")
    if cfg.rounds == 0:
        return trace

    pi_oracle = PgdOracle(lambda x: project_simplex(x, axis=1), cfg.oracle_cfg_pi, rng, remember_step=True)
    w_oracle = PgdOracle(UncertaintyProjector(uset), cfg.oracle_cfg_w, rng, remember_step=True)
    eta_pi, eta_w = cfg.resolved_eta_pi(), cfg.resolved_eta_w()
    pi_hist = PolicyLossHistory(mdp, reg)
    w_hist = TransitionLossHistory(mdp, reg)
    evaluator = _Evaluator(cfg)
    pi = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    w = uset.nominal.probs.copy()
    policies = []

    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        noise_pi = NoiseSpec(cfg.eta_at(eta_pi, t), cfg.pi_dim)
        noise_w = NoiseSpec(cfg.eta_at(eta_w, t), cfg.w_dim)
        try:
            k = len(pi_hist)
            if cfg.pi_strategy == "ftpl":
                step_pi = ftpl_step(pi_hist, noise_pi, pi_oracle, rng, pi, scale=1.0 / max(k, 1))
            else:
                guess = pi_hist[-1] if k else None
                step_pi = oftpl_step(pi_hist, guess, noise_pi, pi_oracle, rng, pi, scale=1.0 / (k + 1))
            pi = step_pi.point
            pen = reg * float(np.sum(pi * pi))
            if cfg.w_strategy == "best_response":
                step_w = best_response_step(w_value_loss(mdp, pi, pen), w_oracle, w, round_index=t)
            else:
                w_hist.append(pi)
                step_w = ftpl_plus_step(w_hist, noise_w, w_oracle, rng, w, scale=1.0 / t)
        except LearnerError as exc:
            raise GameError(str(exc), t, trace) from exc
        w = step_w.point
        pi_hist.append(w)
        policies.append(pi)
        value = _game_value(mdp, pi, w)
        rec = RoundRecord(
            round=t, policy=pi, w=w, game_value=value - pen,
            loss_pi=-value + pen, loss_w=value + pen,
            oracle_iters_pi=step_pi.report.iterations_used,
            oracle_iters_w=step_w.report.iterations_used,
            grad_map_pi=step_pi.report.gradient_mapping_norm,
            grad_map_w=step_w.report.gradient_mapping_norm,
        )
        evaluator(rec, policies)
        if cfg.record_timing:
            rec.wall_ms = 1e3 * (time.perf_counter() - start)
        trace.records.append(rec)
    return trace


def drpg_baseline(cfg: GameConfig) -> GameTrace:
    """Double-loop robust policy gradient.

    Each round the dynamics are minimized to tolerance for the current
    policy, then the policy takes one projected gradient ascent step on
    ``g(., W_t)``.
    """
    mdp, uset = cfg.mdp, cfg.uncertainty
    reg = cfg.regularizer_weight
    rng = np.random.default_rng(cfg.seed)
    trace = GameTrace(reg=reg, label="drpg")
    if cfg.rounds == 0:
        return trace
    w_oracle = PgdOracle(UncertaintyProjector(uset), cfg.oracle_cfg_w, rng, remember_step=True)
    evaluator = _Evaluator(cfg)
    pi = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    w = uset.nominal.probs.copy()
    proj_pi = lambda x: project_simplex(x, axis=1)  # noqa: E731
    beta = cfg.drpg_step
    policies = []
    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter()
        pen = reg * float(np.sum(pi * pi))
        try:
            step_w = best_response_step(w_value_loss(mdp, pi, pen), w_oracle, w, round_index=t)
        except LearnerError as exc:
            raise GameError(str(exc), t, trace) from exc
        w = step_w.point
        value = _game_value(mdp, pi, w)
        policies.append(pi)
        rec = RoundRecord(
            round=t, policy=pi, w=w, game_value=value - pen,
            loss_pi=-value + pen, loss_w=value + pen,
            oracle_iters_pi=1, oracle_iters_w=step_w.report.iterations_used,
            grad_map_pi=math.nan, grad_map_w=step_w.report.gradient_mapping_norm,
        )
        loss = policy_value_loss(mdp, w, reg)
        if beta is None:
            beta = estimate_step_size(loss, proj_pi, pi, rng)
        _, grad = loss(pi)
        pi_next = proj_pi(pi - beta * grad)
        rec.grad_map_pi = float(np.linalg.norm(pi - pi_next)) / beta
        evaluator(rec, policies)
        if cfg.record_timing:
            rec.wall_ms = 1e3 * (time.perf_counter() - start)
        trace.records.append(rec)
        pi = pi_next
    return trace


# -- regret accounting -----------------------------------------------------------

@dataclass(frozen=True)
class RegretReport:
    """Average regrets and the two sides of the regret-sum inequality.

    Comparators come from multi-start PGD, so ``reg_w`` and ``reg_pi`` are
    lower bounds on the true regrets; both sides of ``bound_check`` use the
    same comparators.
    """

    reg_w: float
    reg_pi: float
    comparator_pi: float
    comparator_w: float
    robustness_gap: float
    bound_check: bool
    best_policy: np.ndarray = field(repr=False, default=None)


def _values_matrix(mdp, policies, ws):
    """``G[i, j] = V_{W_j}^{pi_i}(mu)``."""
    out = np.empty((len(policies), len(ws)))
    for i, pi in enumerate(policies):
        v, _, _ = evaluate_batch(mdp.reward, mdp.gamma, mdp.mu, pi, ws)
        out[i] = v @ mdp.mu
    return out


def compute_regrets(trace: GameTrace, mdp: Mdp, uset: UncertaintySet, oracle_cfg=DEFAULT_ORACLE, restarts=2,
                    rng=None, slack=1e-6) -> RegretReport:
    """Average regrets of both players and the regret-sum bound check.

    ``comparator_w`` approximates ``min_W sum_t g(W, pi_t)``; ``comparator_pi``
    approximates ``max_pi sum_t g(W_t, pi)`` and its maximizer is the
    reference policy of the inequality.
    """
    if not len(trace):
        raise ValueError("empty trace")
    rng = np.random.default_rng(0) if rng is None else rng
    reg = trace.reg
    pis, ws = trace.policies, trace.transitions
    T = len(trace)
    pens = reg * np.sum(pis * pis, axis=(1, 2))
    played = np.array([r.game_value for r in trace])

    # dynamics comparator: min_W sum_t V_W^{pi_t}(mu) - sum_t pen_t
    loss_w = mixture_w_loss(mdp, pis)
    proj_w = UncertaintyProjector(uset)
    starts = [uset.nominal.probs, ws[-1], ws.mean(axis=0)]
    starts += [uset.sample(rng) for _ in range(restarts)]

    def avg_w(w):
        v, g = loss_w(w)
        return v / T, g / T

    best_w = math.inf
    if uset.tau == 0:
        best_w = avg_w(uset.nominal.probs)[0]
    else:
        for x0 in starts:
            best_w = min(best_w, pgd_minimize(avg_w, proj_w, uset.project(x0).probs, oracle_cfg, rng).final_value)
    comparator_w = T * best_w - float(pens.sum())

    # policy comparator: max_pi sum_t g(W_t, pi)
    hist = PolicyLossHistory(mdp, reg)
    for w in ws:
        hist.append(w)
    total = hist.cumulative()

    def avg_pi(pi):
        v, g = total(pi)
        return v / T, g / T

    proj_pi = lambda x: project_simplex(x, axis=1)  # noqa: E731
    pi_starts = [np.full_like(pis[0], 1.0 / pis.shape[2]), pis[-1], pis.mean(axis=0)]
    pi_starts += [rng.dirichlet(np.ones(pis.shape[2]), size=pis.shape[1]) for _ in range(restarts)]
    best_pi, best_val = None, math.inf
    for x0 in pi_starts:
        rep = pgd_minimize(avg_pi, proj_pi, x0, oracle_cfg, rng)
        if rep.final_value < best_val:
            best_val, best_pi = rep.final_value, rep.final_point
    comparator_pi = -T * best_val

    reg_w = (float(played.sum()) - comparator_w) / T
    reg_pi = (comparator_pi - float(played.sum())) / T

    # robustness of the reference policy: oracle value, never above the
    # value it already attains against any W_t
    pen_ref = reg * float(np.sum(best_pi * best_pi))
    against_played = _values_matrix(mdp, [best_pi], ws)[0] - pen_ref
    robust_ref = min(
        evaluate_robustness(mdp, best_pi, uset, restarts, oracle_cfg, rng, warm_starts=(ws[-1],)) - pen_ref,
        float(against_played.min()),
    )
    gap = robust_ref - comparator_w / T
    return RegretReport(
        reg_w=reg_w,
        reg_pi=reg_pi,
        comparator_pi=comparator_pi,
        comparator_w=comparator_w,
        robustness_gap=gap,
        bound_check=bool(gap <= reg_w + reg_pi + slack),
        best_policy=best_pi,
    )


# -- diagnostics -----------------------------------------------------------------

@dataclass(frozen=True)
class DominanceReport:
    k_w: float
    k_pi: float
    mismatch: float
    surrogate: bool = True
    infinite: bool = False


def dominance_diagnostics(mdp: Mdp, policy, w, mu=None) -> DominanceReport:
    """Distribution-mismatch constants ``||d / mu||_inf / (1 - gamma)``.

    The optimizer's occupancy is unknown, so the current iterate's occupancy
    stands in for it (``surrogate=True``).  Zero-mass states of ``mu`` that
    are visited make the constant infinite.
    """
    mu = mdp.mu if mu is None else np.asarray(mu, dtype=float)
    _, _, d, _ = evaluate(mdp.reward, mdp.gamma, mu, _as_array(policy), _as_array(w))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mu > 0, d / np.where(mu > 0, mu, 1.0), np.where(d > 1e-15, np.inf, 0.0))
    mismatch = float(np.max(ratio))
    k = mismatch / (1.0 - mdp.gamma)
    return DominanceReport(k_w=k, k_pi=k, mismatch=mismatch, surrogate=True, infinite=not math.isfinite(k))


def dominance_gap(objective, x, minimum, candidates):
    """Both sides of the gradient-dominance inequality at ``x``.

    Returns ``(f(x) - min f, -min_{c in candidates} <c - x, grad f(x)>)``;
    the linear minimization runs over the supplied feasible ``candidates``
    (a grid on tiny instances, or the vertex set).
    """
    value, grad = objective(x)
    cand = np.asarray(candidates).reshape(len(candidates), -1)
    lin = (cand - np.ravel(x)) @ np.ravel(grad)
    return value - minimum, -float(lin.min())


def smoothness_probe(mdp: Mdp, uset: UncertaintySet, samples=20, rng=None):
    """Largest observed ratio
    ``|[V_W^pi - V_W'^pi] - [V_W^pi' - V_W'^pi']| / (||W - W'||_1 ||pi - pi'||_1)``
    over random pairs; an empirical estimate of the cross-smoothness constant.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    s, a = mdp.n_states, mdp.n_actions
    best = 0.0
    for _ in range(samples):
        w1, w2 = uset.sample(rng), uset.sample(rng)
        p1, p2 = rng.dirichlet(np.ones(a), size=s), rng.dirichlet(np.ones(a), size=s)
        vals = [[_game_value(mdp, p, w) for w in (w1, w2)] for p in (p1, p2)]
        num = abs((vals[0][0] - vals[0][1]) - (vals[1][0] - vals[1][1]))
        den = np.abs(w1 - w2).sum() * np.abs(p1 - p2).sum()
        if den > 0:
            best = max(best, num / den)
    return best


def with_rounds(cfg: GameConfig, rounds: int) -> GameConfig:
    return replace(cfg, rounds=rounds)
