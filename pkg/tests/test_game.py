import io
import math

import numpy as np
import pytest

from noregret_rmdp.environments import GridSpec, make_gridworld, make_uncertainty_set
from noregret_rmdp.game import (
    GameConfig, GameError, GameTrace, RoundRecord, PolicyLossHistory, alg4, alg5, alg6, compute_regrets, dominance_diagnostics,
    dominance_gap, drpg_baseline, evaluate_robustness, mixture_robustness, mixture_w_loss, policy_value_loss,
    read_trace_csv, run_game, smoothness_probe, w_value_loss, worst_case_transition, write_trace_csv,
)
from noregret_rmdp.geometry import UncertaintyProjector, UncertaintySet, project_simplex
from noregret_rmdp.mdp_core import Mdp, solve_value
from noregret_rmdp.online import best_response_step
from noregret_rmdp.pgd import PgdConfig, PgdOracle

from conftest import (
    batch_values, random_policy, random_tensor, tiny_mdp, two_state_pis, two_state_w_grid, value, w_grid_min, zoom_grid_min,
)

FAST = PgdConfig(max_iters=100, stagnation_tol=1e-6, grow=1.25)
TIGHT = PgdConfig(max_iters=3000, stagnation_tol=1e-10, grow=1.25)


def tiny_set(seed, q=2, tau=0.3):
    mdp, _ = tiny_mdp(seed)
    rng = np.random.default_rng(seed + 50)
    return mdp, UncertaintySet(random_tensor(rng, 2, 2), q, tau)


def policy_grid_max(mdp, w, reg=0.0):
    def f(p):
        pis = two_state_pis(p)
        vals = batch_values(mdp, pis, np.broadcast_to(w, (len(p),) + w.shape))
        return -(vals - reg * np.sum(pis**2, axis=(1, 2)))

    best, _ = zoom_grid_min(f, [0, 0], [1, 1], per_axis=100, levels=10, shrink=3.0)
    return -best


# -- configuration -----------------------------------------------------------------

def test_presets_and_validation():
    mdp, uset = tiny_set(0)
    assert (alg4(mdp, uset, 3).pi_strategy, alg4(mdp, uset, 3).w_strategy) == ("ftpl", "best_response")
    assert (alg5(mdp, uset, 3).pi_strategy, alg5(mdp, uset, 3).w_strategy) == ("oftpl_last_loss", "ftpl_plus")
    assert alg6(mdp, uset, 3).regularizer_weight == 1.0
    with pytest.raises(ValueError):
        GameConfig(mdp, uset, 3, pi_strategy="nope")
    with pytest.raises(ValueError):
        GameConfig(mdp, uset, -1)
    with pytest.raises(ValueError):
        GameConfig(mdp, UncertaintySet(random_tensor(np.random.default_rng(0), 3, 2), 2, 0.1), 3)


def test_anytime_schedule_and_theory_rate():
    mdp, uset = tiny_set(0)
    cfg = alg4(mdp, uset, 100, eta_pi=0.5, eta_schedule="anytime")
    assert cfg.eta_at(0.5, 100) == pytest.approx(0.5)
    assert cfg.eta_at(0.5, 25) == pytest.approx(1.0)
    theory = alg4(mdp, uset, 100).resolved_eta_pi()
    lip = 2 * mdp.gamma * mdp.r_max * 2 / (1 - mdp.gamma) ** 2
    assert theory == pytest.approx(1 / (lip * math.sqrt(100 * 4)))
    assert alg4(mdp, uset, 100, eta_pi=0.3).resolved_eta_w() == 0.3


@pytest.mark.parametrize("runner", [run_game, drpg_baseline])
def test_zero_rounds_give_empty_trace(runner):
    mdp, uset = tiny_set(0)
    assert len(runner(alg4(mdp, uset, 0))) == 0


# -- loss wiring ------------------------------------------------------------------

def test_policy_history_sum_matches_loop(rng):
    mdp, uset = tiny_set(1)
    ws = [uset.sample(rng) for _ in range(4)]
    hist = PolicyLossHistory(mdp, reg=0.7)
    for w in ws:
        hist.append(w)
    pi = random_policy(rng, 2, 2)
    v, g = hist.cumulative()(pi)
    parts = [policy_value_loss(mdp, w, 0.7)(pi) for w in ws]
    assert v == pytest.approx(sum(p[0] for p in parts))
    assert np.allclose(g, sum(p[1] for p in parts))


def test_mixture_loss_gradient_matches_finite_difference(rng):
    mdp, uset = tiny_set(2)
    pis = np.stack([random_policy(rng, 2, 2) for _ in range(3)])
    w = uset.sample(rng)
    _, g = mixture_w_loss(mdp, pis)(w)
    h = 1e-6
    for idx in np.ndindex(w.shape):
        wp, wm = w.copy(), w.copy()
        wp[idx] += h
        wm[idx] -= h
        fd = (mixture_w_loss(mdp, pis)(wp)[0] - mixture_w_loss(mdp, pis)(wm)[0]) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-5, abs=1e-7)


@pytest.mark.parametrize("preset,reg", [(alg4, 0.0), (alg5, 0.0), (alg6, 1.0)])
def test_zero_sum_wiring(preset, reg):
    mdp, uset = tiny_set(3)
    trace = run_game(preset(mdp, uset, 15, eta_pi=1.0, oracle_cfg_pi=FAST, oracle_cfg_w=FAST, eval_stride=0))
    for rec in trace:
        pen = reg * float(np.sum(rec.policy**2))
        assert rec.loss_w + rec.loss_pi == pytest.approx(2 * pen, abs=1e-12)
        assert rec.game_value == pytest.approx(value(mdp, rec.policy, rec.w) - pen, abs=1e-12)
        assert uset.contains(rec.w)
        assert np.allclose(rec.policy.sum(axis=1), 1) and rec.policy.min() >= 0


# -- robustness -------------------------------------------------------------------

def test_singleton_set_is_nominal_value(rng):
    mdp, uset = tiny_set(4, tau=0.0)
    pi = random_policy(rng, 2, 2)
    assert evaluate_robustness(mdp, pi, uset) == value(mdp, pi, uset.nominal.probs)
    trace = run_game(alg4(mdp, uset, 5, eta_pi=1.0, oracle_cfg_pi=FAST, eval_stride=0))
    assert all(np.array_equal(r.w, uset.nominal.probs) for r in trace)


def test_singleton_game_reaches_policy_optimum():
    mdp, uset = tiny_set(5, tau=0.0)
    trace = run_game(alg4(mdp, uset, 200, eta_pi=200.0, oracle_cfg_pi=TIGHT, eval_stride=0))
    best = policy_grid_max(mdp, uset.nominal.probs)
    assert best - value(mdp, trace.records[-1].policy, uset.nominal.probs) <= 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_robustness_against_grid(seed):
    mdp, uset = tiny_set(seed, q=2, tau=0.3)
    pi = random_policy(np.random.default_rng(seed), 2, 2)
    grid_min, _ = w_grid_min(mdp, uset, pi)
    got = evaluate_robustness(mdp, pi, uset, restarts=3, oracle_cfg=TIGHT)
    assert abs(got - grid_min) <= 1e-3


def test_robustness_monotone_in_radius(rng):
    mdp, uset = tiny_set(6)
    pi = random_policy(rng, 2, 2)
    vals = [evaluate_robustness(mdp, pi, UncertaintySet(uset.nominal, 1, t), restarts=2, oracle_cfg=TIGHT)
            for t in (0.0, 0.1, 0.3, 0.6)]
    assert all(a >= b - 1e-6 for a, b in zip(vals, vals[1:]))


def test_worst_case_transition_is_feasible(rng):
    mdp, uset = tiny_set(7)
    v, w = worst_case_transition(mdp, random_policy(rng, 2, 2), uset, restarts=1, oracle_cfg=FAST, rng=rng)
    assert uset.contains(w)
    assert v <= value(mdp, np.full((2, 2), 0.5), uset.nominal.probs) + 10


def test_mixture_of_one_policy_is_its_robustness(rng):
    mdp, uset = tiny_set(8)
    pi = random_policy(rng, 2, 2)
    single = evaluate_robustness(mdp, pi, uset, oracle_cfg=TIGHT)
    mix, _ = mixture_robustness(mdp, pi[None], uset, oracle_cfg=TIGHT)
    assert mix == pytest.approx(single, abs=1e-6)


def test_best_robust_value_is_running_max():
    mdp, uset = tiny_set(9)
    trace = run_game(alg4(mdp, uset, 20, eta_pi=1.0, oracle_cfg_pi=FAST, oracle_cfg_w=FAST, eval_stride=2,
                          mixture_eval=True))
    rounds, vals = trace.evaluated()
    _, best = trace.evaluated("best_robust_value")
    assert np.array_equal(best, np.maximum.accumulate(vals))
    assert list(rounds) == list(range(2, 21, 2))
    assert np.all(np.isfinite(trace.evaluated("mixture_robust_value")[1]))


# -- regret accounting -------------------------------------------------------------

@pytest.mark.parametrize("preset", [alg4, alg5, alg6])
def test_bound_check_holds(preset):
    mdp, uset = tiny_set(10)
    trace = run_game(preset(mdp, uset, 12, eta_pi=1.0, oracle_cfg_pi=FAST, oracle_cfg_w=FAST, eval_stride=0))
    rep = compute_regrets(trace, mdp, uset, FAST, restarts=1)
    assert rep.bound_check
    assert rep.robustness_gap <= rep.reg_w + rep.reg_pi + 1e-6


def test_regret_comparators_against_grid():
    mdp, uset = tiny_set(11)
    trace = run_game(alg4(mdp, uset, 8, eta_pi=1.0, oracle_cfg_pi=FAST, oracle_cfg_w=FAST, eval_stride=0))
    rep = compute_regrets(trace, mdp, uset, TIGHT, restarts=2)
    T = len(trace)
    grid_w, _ = w_grid_min(mdp, uset, trace.policies)
    assert abs(rep.comparator_w / T - grid_w) <= 1e-3
    ws = trace.transitions

    def f(p):
        pis = two_state_pis(p)
        return -np.mean([batch_values(mdp, pis, np.broadcast_to(w, (len(p),) + w.shape)) for w in ws], axis=0)

    grid_pi, _ = zoom_grid_min(f, [0, 0], [1, 1], per_axis=100, levels=10, shrink=3.0)
    assert abs(rep.comparator_pi / T + grid_pi) <= 1e-3


def test_fixed_optimal_play_has_no_regret():
    mdp, uset = tiny_set(12, tau=0.0)
    w = uset.nominal.probs
    rep_pi = PgdOracle(lambda x: project_simplex(x, axis=1), TIGHT)(policy_value_loss(mdp, w), np.full((2, 2), 0.5))
    pi = rep_pi.final_point
    v = value(mdp, pi, w)
    trace = GameTrace(reg=0.0, label="fixed")
    for t in range(1, 11):
        trace.records.append(RoundRecord(round=t, policy=pi, w=w, game_value=v, loss_pi=-v, loss_w=v,
                                         oracle_iters_pi=0, oracle_iters_w=0, grad_map_pi=0.0, grad_map_w=0.0))
    rep = compute_regrets(trace, mdp, uset, TIGHT)
    alpha = rep_pi.final_value + policy_grid_max(mdp, w)
    assert rep.reg_w <= 1e-12
    assert rep.reg_pi <= max(alpha, 0.0) + 1e-9


def test_best_response_rounds_within_oracle_error():
    mdp, uset = tiny_set(13)
    rng = np.random.default_rng(13)
    oracle = PgdOracle(UncertaintyProjector(uset), PgdConfig(max_iters=10, grow=1.25))
    w = uset.nominal.probs
    for _ in range(5):
        pi = random_policy(rng, 2, 2)
        step = best_response_step(w_value_loss(mdp, pi), oracle, w)
        grid_min, _ = w_grid_min(mdp, uset, pi)
        alpha = step.report.final_value - grid_min
        assert value(mdp, pi, step.point) <= grid_min + alpha + 1e-9
        w = step.point


# -- traces -----------------------------------------------------------------------

def test_trace_csv_round_trip_and_determinism(tmp_path):
    mdp, uset = tiny_set(14)
    cfg = alg5(mdp, uset, 6, eta_pi=1.0, oracle_cfg_pi=FAST, oracle_cfg_w=FAST, eval_stride=3, seed=5)
    paths = [tmp_path / f"t{i}.csv" for i in range(2)]
    for p in paths:
        write_trace_csv(run_game(cfg), p, timing=False)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    cols = read_trace_csv(paths[0])
    trace = run_game(cfg)
    assert np.allclose(cols["game_value"], trace.column("game_value"))
    assert np.isnan(cols["robust_value"][0]) and not np.isnan(cols["robust_value"][2])


def test_game_error_keeps_partial_trace():
    _, uset = tiny_set(15)
    # a nan reward makes the first oracle call fail
    bad = Mdp(reward=np.array([[0.0, 0.0], [0.0, 0.0]]), gamma=0.9, mu=[0.5, 0.5])
    object.__setattr__(bad, "reward", np.array([[np.nan, 0.0], [0.0, 0.0]]))
    with pytest.raises(GameError) as info:
        run_game(alg4(bad, uset, 3, eta_pi=1.0, eval_stride=0))
    assert info.value.round_index == 1 and len(info.value.trace) == 0


def test_drpg_improves_robustness():
    mdp, uset = tiny_set(16)
    trace = drpg_baseline(GameConfig(mdp, uset, 60, oracle_cfg_w=FAST, eval_stride=10, eval_cfg=TIGHT))
    _, vals = trace.evaluated()
    assert vals[-1] >= vals[0] - 1e-9


# -- diagnostics ------------------------------------------------------------------

def test_dominance_constants():
    mdp = Mdp(reward=np.zeros((2, 1)), gamma=0.5, mu=[0.5, 0.5])
    w = np.full((2, 1, 2), 0.5)
    rep = dominance_diagnostics(mdp, [[1.0], [1.0]], w)
    assert rep.mismatch == pytest.approx(1.0) and rep.k_w == pytest.approx(2.0)
    myopic = Mdp(reward=np.zeros((2, 1)), gamma=0.0, mu=[0.3, 0.7])
    assert dominance_diagnostics(myopic, [[1.0], [1.0]], np.eye(2)[:, None, :]).mismatch == pytest.approx(1.0)
    point = Mdp(reward=np.zeros((2, 1)), gamma=0.5, mu=[1.0, 0.0])
    assert dominance_diagnostics(point, [[1.0], [1.0]], np.full((2, 1, 2), 0.5)).infinite


def test_w_dominance_inequality_with_inflated_surrogate():
    mdp, uset = tiny_set(17, q=2, tau=0.4)
    rng = np.random.default_rng(17)
    pi = random_policy(rng, 2, 2)
    minimum, _ = w_grid_min(mdp, uset, pi)
    grid = two_state_w_grid(25)
    cands = grid[np.sqrt(np.sum((grid - uset.nominal.probs) ** 2, axis=(1, 2, 3))) <= uset.tau]
    loss = w_value_loss(mdp, pi)
    for _ in range(200):
        w = uset.sample(rng)
        gap, lin = dominance_gap(loss, w, minimum, cands)
        k = dominance_diagnostics(mdp, pi, w).k_w
        assert gap <= 2 * k * max(lin, 0.0) + 1e-9


def test_smoothness_probe_is_finite():
    mdp, uset = tiny_set(18)
    est = smoothness_probe(mdp, uset, samples=10)
    assert 0 <= est < np.inf
