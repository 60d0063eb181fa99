"""Experiment runner: ``bangbang run <config.json> [--out DIR] [--seed N]``.

The config is a flat JSON object with a ``kind`` discriminator. Results go to
``--out``, else ``$BANGBANG_OUT``, else the config's ``out`` key, else
``./results``. Exit status: 0 when every declared check passes, 1 when a
check fails (or a numerical error stops the run), 2 on a config error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .adjoint import coercivity_terms, finite_difference_gradient, gateaux_first, gateaux_second, solve_adjoint
from .errors import ConfigError, HypothesisViolation
from .io import ResultBundle, Table, emit_bundle
from .models import CATALOG, Control, InitialDatum, evaluate_objective, get_model, project_admissible
from .optimizer import OptimizerConfig, bang_bang_measure, optimize, pontryagin_residual
from .solver import SpaceTimeField, TimeGrid, energy_estimate_check, solve_semilinear
from .spectral import TWO_PI, Field, TorusGrid, random_direction
from .twoscale import PerturbationSpectrum, residual_study

KINDS = ("solve", "optimize", "derivative-check", "expansion-study", "bounds-check")
OUT_ENV = "BANGBANG_OUT"


@dataclass
class ExperimentConfig:
    kind: str
    model: str = "logistic-population"
    horizon: float = 1.0
    n_points: int = 128
    # None picks dt <= min(1e-3, 0.25/K^2) automatically
    n_steps: int | None = None
    u0_mean: float = 1.0
    u0_amplitude: float = 0.5
    u0_mode: int = 1
    V0: float = math.pi
    control: str = "uniform"
    control_amplitude: float = 0.4
    K: list = field(default_factory=lambda: [4, 8, 16, 32])
    seed: int = 0
    n_directions: int = 10
    snapshot_times: list | None = None
    max_iters: int = 200
    step_rule: str = "backtracking"
    step_size: float = 1.0
    tol: float = 1e-9
    delta_bb: float = 0.01
    epsilon_margin: float | None = None
    delta: float = 0.5
    slope_threshold: float = -2.5
    bang_bang_fraction: float = 0.02
    out: str | None = None

    @classmethod
    def from_dict(cls, raw) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("$", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"$.{key}", "unknown key")
        if "kind" not in raw:
            raise ConfigError("$.kind", "missing experiment kind")
        try:
            cfg = cls(**raw)
        except TypeError as exc:
            raise ConfigError("$", str(exc)) from None
        cfg.validate()
        return cfg

    def echo(self) -> dict:
        """The config as run, minus the output location."""
        d = asdict(self)
        d.pop("out")
        return d

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"$.{key}", msg)

        def is_int(v):
            return isinstance(v, int) and not isinstance(v, bool)

        def is_num(v):
            return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)

        need(self.kind in KINDS, "kind", f"must be one of {list(KINDS)}")
        need(self.model in CATALOG, "model", f"unknown model; known: {sorted(CATALOG)}")
        need(is_num(self.horizon) and self.horizon > 0, "horizon", "must be a positive number")
        need(is_int(self.n_points) and self.n_points >= 8 and self.n_points % 2 == 0,
             "n_points", "must be an even integer >= 8")
        need(self.n_steps is None or (is_int(self.n_steps) and self.n_steps >= 1),
             "n_steps", "must be a positive integer or null")
        for key in ("u0_mean", "u0_amplitude", "control_amplitude", "step_size", "tol", "delta",
                    "slope_threshold", "bang_bang_fraction"):
            need(is_num(getattr(self, key)), key, "must be a finite number")
        need(is_int(self.u0_mode) and self.u0_mode >= 0, "u0_mode", "must be a non-negative integer")
        need(self.u0_mean - abs(self.u0_amplitude) > 0, "u0_amplitude", "initial datum must stay positive")
        need(is_num(self.V0) and 0 < self.V0 < TWO_PI, "V0", "must lie in (0, 2*pi)")
        need(self.control in ("uniform", "cosine"), "control", "must be 'uniform' or 'cosine'")
        need(isinstance(self.K, list) and len(self.K) >= 1, "K", "must be a non-empty list")
        for i, k in enumerate(self.K):
            need(is_int(k) and k >= 1, f"K[{i}]", "must be a positive integer")
            if self.kind in ("derivative-check", "expansion-study"):
                need(k < self.n_points / 3, f"K[{i}]",
                     f"must stay below n_points/3 = {self.n_points / 3:.4g}")
        need(is_int(self.seed) and self.seed >= 0, "seed", "must be a non-negative integer")
        need(is_int(self.n_directions) and self.n_directions >= 1, "n_directions", "must be a positive integer")
        if self.snapshot_times is not None:
            need(isinstance(self.snapshot_times, list) and len(self.snapshot_times) >= 1,
                 "snapshot_times", "must be a non-empty list")
            for i, t in enumerate(self.snapshot_times):
                need(is_num(t) and 0 <= t <= self.horizon, f"snapshot_times[{i}]", "must lie in [0, horizon]")
        need(is_int(self.max_iters) and self.max_iters >= 1, "max_iters", "must be a positive integer")
        need(self.step_rule in ("fixed", "backtracking"), "step_rule", "must be 'fixed' or 'backtracking'")
        need(self.step_size > 0 and self.tol > 0, "step_size", "step_size and tol must be positive")
        need(0 < self.delta_bb < 0.5, "delta_bb", "must lie in (0, 0.5)")
        need(0 < self.delta < 1, "delta", "must lie in (0, 1)")
        if self.epsilon_margin is not None:
            need(is_num(self.epsilon_margin) and 0 < self.epsilon_margin < self.horizon,
                 "epsilon_margin", "must lie in (0, horizon)")
        if self.kind == "expansion-study" and self.n_steps is not None:
            dt = self.horizon / self.n_steps
            for i, k in enumerate(self.K):
                need(dt <= 0.25 / k**2 + 1e-15, "n_steps",
                     f"dt={dt:.3g} exceeds 0.25/K^2 for K[{i}]={k}")
        if self.out is not None:
            need(isinstance(self.out, str), "out", "must be a string")

    # construction helpers

    def grid(self) -> TorusGrid:
        return TorusGrid(self.n_points)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.n_steps or 1000)

    def build_model(self):
        u0 = InitialDatum(self.u0_mean, self.u0_amplitude, self.u0_mode)
        try:
            return get_model(self.model, self.horizon, u0)
        except HypothesisViolation as exc:
            raise ConfigError("$.model", str(exc)) from None

    def build_control(self, grid: TorusGrid) -> Control:
        if self.control == "uniform":
            return Control.uniform(grid, self.V0)
        raw = Field(grid, self.V0 / TWO_PI + self.control_amplitude * np.cos(grid.nodes - 1.0))
        return project_admissible(raw, self.V0)


def _bundle(cfg, metrics, checks, tables=None, plots=None) -> ResultBundle:
    summary = {
        "config": cfg.echo(),
        "metrics": metrics,
        "checks": checks,
        "passed": all(checks.values()),
    }
    return ResultBundle(summary, tables or {}, plots or {})


def run_solve(cfg: ExperimentConfig) -> ResultBundle:
    grid, tg = cfg.grid(), cfg.time_grid()
    model = cfg.build_model()
    ctrl = cfg.build_control(grid)
    u = solve_semilinear(model, ctrl.m, tg)
    times = cfg.snapshot_times if cfg.snapshot_times is not None else [0.0, cfg.horizon]
    idx = [int(round(t / tg.dt)) for t in times]
    header = ["x"] + [f"u_t{j}" for j in range(len(idx))]
    rows = [tuple([x] + [u.values[i, j] for i in idx]) for j, x in enumerate(grid.nodes)]
    metrics = {
        "objective": evaluate_objective(model, u),
        "min_u": float(u.values.min()),
        "max_u": float(u.values.max()),
        "snapshot_times": [float(tg.times[i]) for i in idx],
    }
    checks = {"finite": bool(np.all(np.isfinite(u.values))), "positive": metrics["min_u"] > 0}
    if model.kappa is not None:
        checks["upper_bound"] = metrics["max_u"] <= model.state_bound + 1e-6
    return _bundle(cfg, metrics, checks, {"snapshots": Table(header, rows)})


def run_optimize(cfg: ExperimentConfig) -> ResultBundle:
    grid, tg = cfg.grid(), cfg.time_grid()
    model = cfg.build_model()
    opt = OptimizerConfig(cfg.max_iters, cfg.step_rule, cfg.step_size, 30, cfg.tol, cfg.delta_bb)
    trace = optimize(model, cfg.build_control(grid), opt, tg)
    m = trace.control
    bb = bang_bang_measure(m, cfg.delta_bb)
    res = pontryagin_residual(model, m, tg)
    obj = np.array(trace.objective)
    metrics = {
        "objective": float(obj[-1]),
        "iterations": trace.iterations,
        "converged": trace.converged,
        "bang_bang_measure": bb,
        "pontryagin_residual": res,
        "mass": float(grid.spacing * np.sum(m.m.values)),
    }
    checks = {
        "converged": trace.converged,
        "admissible": True,
        "bang_bang": bb <= cfg.bang_bang_fraction * TWO_PI,
        "pontryagin": res <= 1e-3 * TWO_PI,
    }
    if cfg.step_rule == "backtracking":
        checks["monotone"] = bool(np.all(np.diff(obj) >= -1e-12))
    tables = {
        "optimizer_trace": Table(["iteration", "objective", "bang_bang_measure", "step_size"], trace.rows()),
        "final_control": Table(["x", "m"], list(zip(grid.nodes, m.m.values))),
    }
    plots = {"trace": ("optimizer_trace", "iteration", "objective"), "control": ("final_control", "x", "m")}
    return _bundle(cfg, metrics, checks, tables, plots)


def run_derivative_check(cfg: ExperimentConfig) -> ResultBundle:
    grid = cfg.grid()
    tg = TimeGrid(cfg.horizon, cfg.n_steps or 2000)
    model = cfg.build_model()
    m = cfg.build_control(grid).m
    bundle = solve_adjoint(model, m, tgrid=tg)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for i in range(cfg.n_directions):
        h = random_direction(grid, rng)
        first = gateaux_first(bundle, h)
        fd = finite_difference_gradient(bundle, h)
        rows.append((i, first["adjoint"], first["direct"], fd,
                     abs(first["adjoint"] - fd) / abs(fd),
                     abs(first["direct"] - first["adjoint"]) / abs(first["adjoint"])))
    second_rows = []
    for k in cfg.K:
        sec = gateaux_second(bundle, Field(grid, np.cos(k * grid.nodes)))
        mb, pre, fd2 = sec["via_mb"].total, sec["via_pre"], sec["via_fd"]
        cr = coercivity_terms(sec["via_mb"], bundle, cfg.epsilon_margin, cfg.delta)
        second_rows.append((k, mb, pre, fd2, abs(mb - pre) / abs(pre), abs(fd2 - pre) / abs(pre),
                            cr["alpha_hat"], cr["slack"], cr["relative_slack"]))
    grad_fd = max(r[4] for r in rows)
    direct = max(r[5] for r in rows)
    mb_pre = max(r[4] for r in second_rows)
    fd_pre = max(r[5] for r in second_rows)
    eps = 0.1 * cfg.horizon if cfg.epsilon_margin is None else cfg.epsilon_margin
    window = tg.times <= cfg.horizon - eps + 1e-12
    metrics = {
        "max_rel_gradient_vs_fd": grad_fd,
        "max_rel_direct_vs_adjoint": direct,
        "max_rel_mb_vs_pre": mb_pre,
        "max_rel_fd2_vs_pre": fd_pre,
        "min_adjoint_window": float(bundle.p.values[window].min()),
    }
    checks = {
        "gradient_vs_fd": grad_fd < 1e-5,
        "direct_vs_adjoint": direct < 1e-6,
        "mb_vs_pre": mb_pre < 1e-4,
        "fd2_vs_pre": fd_pre < 1e-3,
        "adjoint_positive": metrics["min_adjoint_window"] > 0,
    }
    tables = {
        "derivatives": Table(["direction", "adjoint", "direct", "finite_difference", "rel_fd", "rel_direct"], rows),
        "second_derivatives": Table(["K", "via_mb", "via_pre", "via_fd", "rel_mb", "rel_fd",
                                     "alpha_hat", "slack", "relative_slack"], second_rows),
    }
    return _bundle(cfg, metrics, checks, tables)


def run_expansion_study(cfg: ExperimentConfig) -> ResultBundle:
    grid = cfg.grid()
    model = cfg.build_model()
    m = cfg.build_control(grid).m
    specs = [PerturbationSpectrum.single_mode(grid, k) for k in cfg.K]
    tg = TimeGrid(cfg.horizon, cfg.n_steps) if cfg.n_steps else None
    report = residual_study(model, m, specs, tg, cfg.epsilon_margin)
    slope = report.slope
    header = ["K", "residual_energy", "envelope", "L2_LK", "ratio_IJ_over_L", "slope"]
    rows = [tuple(r[c] for c in header[:-1]) + (slope,) for r in report.rows]
    lower_ok = all(r["L2_LK"] >= r["lower_bound_value"] - 1e-6 for r in report.rows)
    metrics = {"slope": slope, "rows": report.rows}
    checks = {"slope": bool(slope <= cfg.slope_threshold), "leading_lower_bound": lower_ok}
    tables = {"scaling_report": Table(header, rows)}
    plots = {"scaling": ("scaling_report", "K", "residual_energy")}
    return _bundle(cfg, metrics, checks, tables, plots)


def run_bounds_check(cfg: ExperimentConfig) -> ResultBundle:
    grid, tg = cfg.grid(), cfg.time_grid()
    model = cfg.build_model()
    m = cfg.build_control(grid).m
    bundle = solve_adjoint(model, m, tgrid=tg)
    u, p = bundle.u.values, bundle.p.values
    eps = 0.1 * cfg.horizon if cfg.epsilon_margin is None else cfg.epsilon_margin
    window = tg.times <= cfg.horizon - eps + 1e-12
    rows = list(zip(tg.times, u.min(axis=1), u.max(axis=1), p.min(axis=1), bundle.psi.values.min(axis=1)))
    # energy estimate for the potential of this state with a unit smooth source
    x = grid.nodes
    f_src = SpaceTimeField(grid, tg, np.broadcast_to(np.cos(x), u.shape).copy())
    q = SpaceTimeField(grid, tg, np.ones_like(u))
    g = SpaceTimeField(grid, tg, np.broadcast_to(np.sin(2 * x), u.shape).copy())
    energy = energy_estimate_check(bundle.V, f_src, q, g)
    metrics = {
        "min_u": float(u.min()),
        "max_u": float(u.max()),
        "state_bound": model.state_bound,
        "min_adjoint_window": float(p[window].min()),
        "min_psi_window": float(bundle.psi.values[window].min()),
        "energy_ratio": energy["lhs"] / energy["rhs_data"],
    }
    checks = {
        "positive": metrics["min_u"] > 0,
        "adjoint_positive": metrics["min_adjoint_window"] > 0,
        "psi_positive": metrics["min_psi_window"] > 0,
    }
    if model.kappa is not None:
        checks["upper_bound"] = metrics["max_u"] <= model.state_bound + 1e-6
    tables = {"bounds": Table(["t", "min_u", "max_u", "min_p", "min_psi"], rows)}
    return _bundle(cfg, metrics, checks, tables)


RUNNERS = {
    "solve": run_solve,
    "optimize": run_optimize,
    "derivative-check": run_derivative_check,
    "expansion-study": run_expansion_study,
    "bounds-check": run_bounds_check,
}


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    if seed is not None and isinstance(raw, dict):
        raw["seed"] = seed
    return ExperimentConfig.from_dict(raw)


def resolve_out_dir(cfg: ExperimentConfig, cli_out: str | None) -> Path:
    return Path(cli_out or os.environ.get(OUT_ENV) or cfg.out or "results")


def run(config_path, out: str | None = None, seed: int | None = None) -> int:
    try:
        cfg = load_config(config_path, seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        bundle = RUNNERS[cfg.kind](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"{cfg.kind} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    out_dir = resolve_out_dir(cfg, out)
    emit_bundle(bundle, out_dir)
    for name, ok in bundle.summary["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"results written to {out_dir}")
    return 0 if bundle.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bangbang", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment described by a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help=f"output directory (overrides ${OUT_ENV})")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)
    return run(args.config, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
