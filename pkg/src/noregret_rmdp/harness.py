"""Experiment configuration, sweeps over (q, tau, seed), CSV output and
log-log rate fitting."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import game
from .environments import GridSpec, make_gridworld, make_uncertainty_set, random_mdp
from .game import GameConfig, drpg_baseline, run_game, write_trace_csv
from .mdp_core import load_mdp
from .pgd import PgdConfig

WORKERS_ENV = "NORE_WORKERS"
FLOOR = 1e-12
PRESET_NAMES = ("alg4", "alg5", "alg6", "drpg")
# which trace column measures robustness of the output at round t
METRICS = {"mixture": "mixture_robust_value", "iterate": "robust_value", "best": "best_robust_value"}


class ConfigError(ValueError):
    """Bad experiment configuration; ``line`` is 1-based when known."""

    def __init__(self, msg, line=None):
        super().__init__(f"line {line}: {msg}" if line else msg)
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a sweep.

    ``q``, ``tau`` and ``seed`` are the sweep axes; every other field is
    shared by all sweep points.  ``env`` is ``gridworld``, ``random`` or a
    path to a saved MDP (which must carry a nominal tensor).
    """

    env: str = "gridworld"
    width: int = 5
    height: int = 5
    slip: float = 0.1
    gamma: float = 0.95
    n_states: int = 4
    n_actions: int = 2
    env_seed: int = 0
    preset: str = "alg4"
    rounds: int = 500
    oracle_iters: int = 200
    oracle_tol: float = 1e-1
    oracle_grow: float = 1.25
    eta_pi: Optional[float] = 0.02
    eta_w: Optional[float] = None
    eta_schedule: str = "anytime"
    regularizer_weight: float = 1.0
    drpg_step: Optional[float] = None
    eval_stride: Optional[int] = None
    eval_restarts: int = 0
    eval_tol: float = 1e-4
    mixture_eval: bool = True
    metric: str = "mixture"
    randomize_nominal: bool = True
    jitter: float = 0.1
    reference_rounds: int = 1000
    timing: bool = False
    out_dir: str = "runs"
    workers: int = 1
    q: Tuple[int, ...] = (2,)
    tau: Tuple[float, ...] = (0.2,)
    seed: Tuple[int, ...] = (0,)
    reference_step: Tuple[float, ...] = (0.05, 0.2)

    def __post_init__(self):
        if self.preset not in PRESET_NAMES:
            raise ConfigError(f"preset must be one of {PRESET_NAMES}, got {self.preset!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be nonnegative")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {tuple(METRICS)}, got {self.metric!r}")
        if self.metric == "mixture" and not self.mixture_eval:
            raise ConfigError("metric = mixture needs mixture_eval = true")
        for qv in self.q:
            if qv not in (1, 2):
                raise ConfigError(f"q must be 1 or 2, got {qv}")
        for t in self.tau:
            if t < 0:
                raise ConfigError(f"tau must be nonnegative, got {t}")

    @property
    def points(self):
        return list(itertools.product(self.q, self.tau, self.seed))


SWEEP_KEYS = ("q", "tau", "seed")
LIST_KEYS = SWEEP_KEYS + ("reference_step",)
_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _parse_value(name, text):
    f = _FIELDS[name]
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    if name in LIST_KEYS:
        return int(text) if name in ("q", "seed") else float(text)
    if text.lower() == "none":
        if "Optional" not in kind:
            raise ValueError("None is not allowed here")
        return None
    if "bool" in kind:
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if "int" in kind:
        return int(text)
    if "float" in kind:
        return float(text)
    return text


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Repeating a
    list key (``q``, ``tau``, ``seed``, ``reference_step``) appends to its
    list."""
    values, sweeps = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        try:
            parsed = _parse_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno) from None
        if key in LIST_KEYS:
            sweeps.setdefault(key, []).append(parsed)
        elif key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        else:
            values[key] = parsed
    values.update({k: tuple(v) for k, v in sweeps.items()})
    return ExperimentConfig(**values)


def dumps_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if f.name in LIST_KEYS:
            lines += [f"{f.name} = {v!r}" for v in val]
        else:
            lines.append(f"{f.name} = {val!r}" if not isinstance(val, str) else f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def worker_count(cfg: ExperimentConfig):
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return max(1, cfg.workers)


# -- building games ---------------------------------------------------------------

def build_environment(cfg: ExperimentConfig):
    if cfg.env == "gridworld":
        return make_gridworld(GridSpec(width=cfg.width, height=cfg.height, slip=cfg.slip, gamma=cfg.gamma))
    if cfg.env == "random":
        return random_mdp(cfg.n_states, cfg.n_actions, cfg.gamma, cfg.env_seed)
    mdp, nominal = load_mdp(cfg.env)
    if nominal is None:
        raise ConfigError(f"{cfg.env}: MDP file has no transitions block")
    return mdp, nominal


def build_uncertainty(cfg: ExperimentConfig, nominal, q, tau):
    """Uncertainty set for one grid point.  The randomized centre depends on
    ``env_seed`` only, so every seed at a grid point plays the same game."""
    rng = np.random.default_rng(cfg.env_seed)
    return make_uncertainty_set(nominal, q, tau, rng=rng, randomize_nominal=cfg.randomize_nominal, jitter=cfg.jitter)


def game_config(cfg: ExperimentConfig, mdp, uset, seed, rounds=None) -> GameConfig:
    oracle = PgdConfig(max_iters=cfg.oracle_iters, stagnation_tol=cfg.oracle_tol, grow=cfg.oracle_grow)
    kw = dict(
        eta_pi=cfg.eta_pi, eta_w=cfg.eta_w, oracle_cfg_pi=oracle, oracle_cfg_w=oracle, seed=seed,
        eval_stride=cfg.eval_stride, eval_restarts=cfg.eval_restarts,
        eval_cfg=PgdConfig(max_iters=cfg.oracle_iters, stagnation_tol=cfg.eval_tol, grow=cfg.oracle_grow),
        mixture_eval=cfg.mixture_eval, drpg_step=cfg.drpg_step, record_timing=cfg.timing,
        eta_schedule=cfg.eta_schedule,
    )
    rounds = cfg.rounds if rounds is None else rounds
    if cfg.preset == "alg6":
        return game.alg6(mdp, uset, rounds, regularizer_weight=cfg.regularizer_weight, **kw)
    if cfg.preset == "alg5":
        return game.alg5(mdp, uset, rounds, **kw)
    return game.alg4(mdp, uset, rounds, **kw)


def reference_value(cfg: ExperimentConfig, mdp, uset):
    """Robust optimum estimate: best robustness over extended DRPG runs, one
    per entry of ``reference_step`` (``-inf`` if disabled)."""
    if cfg.reference_rounds <= 0 or not cfg.reference_step:
        return -math.inf
    best = -math.inf
    for step in cfg.reference_step:
        gcfg = GameConfig(
            mdp, uset, cfg.reference_rounds,
            regularizer_weight=cfg.regularizer_weight if cfg.preset == "alg6" else 0.0,
            oracle_cfg_w=PgdConfig(max_iters=cfg.oracle_iters, stagnation_tol=1e-6, grow=cfg.oracle_grow),
            eval_stride=max(1, cfg.reference_rounds // 20), drpg_step=step,
            eval_cfg=PgdConfig(max_iters=cfg.oracle_iters, stagnation_tol=1e-6, grow=cfg.oracle_grow),
            record_timing=False,
        )
        best = max(best, float(np.max(drpg_baseline(gcfg).evaluated()[1])))
    return best


# -- rate fitting -----------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    n_points: int
    reference: float
    degenerate: bool = False


def fit_loglog(rounds, subopt, floor=FLOOR) -> RateFit:
    """OLS of ``log(max(subopt, floor))`` on ``log(rounds)``."""
    x = np.log(np.asarray(rounds, dtype=float))
    y = np.log(np.maximum(np.asarray(subopt, dtype=float), floor))
    if x.size < 10:
        raise ValueError(f"need at least 10 points to fit a rate, got {x.size}")
    if np.ptp(y) == 0 or np.ptp(x) == 0:
        return RateFit(math.nan, math.nan, math.nan, x.size, math.nan, degenerate=True)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - float(resid @ resid) / float(np.sum((y - y.mean()) ** 2))
    return RateFit(float(slope), float(intercept), r2, x.size, math.nan)


def fit_rate(rounds, robust, reference=None, floor=FLOOR) -> RateFit:
    """Fit ``reference - robust(t) ~ c t^slope``.

    Without a ``reference`` the best value ever reached stands in for the
    robust optimum.
    """
    robust = np.asarray(robust, dtype=float)
    keep = ~np.isnan(robust)
    rounds, robust = np.asarray(rounds, dtype=float)[keep], robust[keep]
    ref = float(np.max(robust)) if reference is None else float(reference)
    fit = fit_loglog(rounds, ref - robust, floor)
    return dataclasses.replace(fit, reference=ref)


def fit_trace_file(path, reference=None, column="robust_value") -> RateFit:
    cols = game.read_trace_csv(path)
    return fit_rate(cols["round"], cols[column], reference)


# -- running ------------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "preset", "q", "tau", "seed", "status", "metric", "final_robust", "best_robust", "final_metric",
    "best_metric", "reference", "slope", "r2", "n_points", "wall_s", "trace", "error",
)
RATE_COLUMNS = ("q", "tau", "seeds", "reference", "slope", "r2", "seed_slope_median", "in_window")
SLOPE_WINDOW = (-0.75, -0.3)
MIN_R2 = 0.6


def point_name(q, tau, seed):
    return f"q{q}_tau{tau:g}_seed{seed}.csv"


def _nanmax(x):
    return float(np.max(x)) if x.size else -math.inf


def run_point(cfg: ExperimentConfig, q, tau, seed, out_dir=None, reference=-math.inf):
    """Run one sweep point and write its trace; returns a summary row dict.

    The row also carries the metric curve under ``_rounds`` / ``_values``
    (not written to the summary) so callers can pool seeds.
    """
    start = time.perf_counter()
    row = {"preset": cfg.preset, "q": q, "tau": tau, "seed": seed, "metric": cfg.metric}
    try:
        mdp, nominal = build_environment(cfg)
        uset = build_uncertainty(cfg, nominal, q, tau)
        gcfg = game_config(cfg, mdp, uset, seed)
        trace = drpg_baseline(gcfg) if cfg.preset == "drpg" else run_game(gcfg)
        path = None
        if out_dir is not None:
            path = Path(out_dir) / point_name(q, tau, seed)
            write_trace_csv(trace, path, timing=cfg.timing)
        _, robust = trace.evaluated()
        rounds, values = trace.evaluated(METRICS[cfg.metric])
        ref = max(reference, _nanmax(robust), _nanmax(values))
        fit = fit_rate(rounds, values, ref) if values.size >= 10 else None
        row.update(
            status="ok",
            final_robust=robust[-1] if robust.size else math.nan,
            best_robust=_nanmax(robust) if robust.size else math.nan,
            final_metric=values[-1] if values.size else math.nan,
            best_metric=_nanmax(values) if values.size else math.nan,
            reference=ref,
            slope=fit.slope if fit else math.nan,
            r2=fit.r2 if fit else math.nan,
            n_points=values.size,
            trace=path.name if path else "",
            error="",
            _rounds=rounds,
            _values=values,
        )
    except Exception as exc:  # noqa: BLE001 - a failed point must not sink its siblings
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    row["wall_s"] = time.perf_counter() - start if cfg.timing else math.nan
    return row


def _run_point_args(args):
    return run_point(*args)


def _reference_args(args):
    cfg, q, tau = args
    mdp, nominal = build_environment(cfg)
    return reference_value(cfg, mdp, build_uncertainty(cfg, nominal, q, tau))


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    return str(x)


def _write_rows(rows, columns, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in columns])


def write_summary(rows, path):
    _write_rows(rows, SUMMARY_COLUMNS, path)


def read_summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _map(fn, args, workers):
    if workers == 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args))


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers=None, log=None):
    """Run every sweep point and write the artifacts.

    Writes one trace CSV per point, ``summary.csv`` (one row per point) and
    ``rates.csv`` (one row per ``(q, tau)``, see :func:`rate_table`).  The
    reference optimum of a grid point is the best of its DRPG reference runs
    and every robustness value observed by any seed at that point.  Returns
    the summary rows in sweep order regardless of completion order.
    """
    out = Path(cfg.out_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dumps_config(cfg))
    points = cfg.points
    grid = list(dict.fromkeys((q, tau) for q, tau, _ in points))
    if log:
        log(f"{len(points)} sweep points over {len(grid)} (q, tau) cells")
    n = worker_count(cfg) if workers is None else workers
    try:
        refs = dict(zip(grid, _map(_reference_args, [(cfg, q, tau) for q, tau in grid], n)))
    except Exception as exc:  # noqa: BLE001 - fall back to observed values only
        if log:
            log(f"reference runs failed ({type(exc).__name__}: {exc}); using observed maxima")
        refs = {g: -math.inf for g in grid}
    rows = _map(_run_point_args, [(cfg, q, tau, seed, out, refs[(q, tau)]) for q, tau, seed in points], n)
    # share one reference per cell: the best value any seed saw
    for cell in grid:
        members = [r for r in rows if (r["q"], r["tau"]) == cell and r["status"] == "ok"]
        ref = max([refs[cell]] + [r["reference"] for r in members])
        for r in members:
            r["reference"] = ref
            if r["_values"].size >= 10:
                fit = fit_rate(r["_rounds"], r["_values"], ref)
                r["slope"], r["r2"] = fit.slope, fit.r2
    write_summary(rows, out / "summary.csv")
    _write_rows(rate_table(rows), RATE_COLUMNS, out / "rates.csv")
    if log:
        log(f"wrote {out / 'summary.csv'} and {out / 'rates.csv'}")
    return rows


def rate_table(rows, window=SLOPE_WINDOW, min_r2=MIN_R2):
    """One fit per ``(q, tau)`` on the pointwise median over seeds of the
    suboptimality curve ``reference - metric(t)``.

    ``seed_slope_median`` is the median of the per-seed slopes, for
    comparison.  Rows without curves (read back from CSV) fall back to the
    per-seed medians.
    """
    groups = {}
    for row in rows:
        if row["status"] == "ok":
            groups.setdefault((int(row["q"]), float(row["tau"])), []).append(row)
    table = []
    for (q, tau), members in sorted(groups.items()):
        ref = max(float(r["reference"]) for r in members)
        seed_slopes = [float(r["slope"]) for r in members if r["slope"] != ""]
        seed_med = float(np.median(seed_slopes)) if seed_slopes else math.nan
        curves = [r.get("_values") for r in members]
        slope = r2 = math.nan
        if all(c is not None for c in curves) and len({c.size for c in curves}) == 1 and curves[0].size >= 10:
            gap = np.median(ref - np.vstack(curves), axis=0)
            fit = fit_loglog(members[0]["_rounds"], gap)
            slope, r2 = fit.slope, fit.r2
        elif seed_slopes:
            slope = seed_med
            r2 = float(np.median([float(r["r2"]) for r in members if r["r2"] != ""]))
        ok = window[0] <= slope <= window[1] and r2 >= min_r2
        table.append({"q": q, "tau": tau, "seeds": len(members), "reference": ref, "slope": slope, "r2": r2,
                      "seed_slope_median": seed_med, "in_window": int(ok)})
    return table
