"""Projected-gradient ascent over admissible controls and bang-bang diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adjoint import solve_adjoint
from .errors import StalledLineSearch
from .models import Control, ModelSpec, evaluate_objective, project_admissible
from .solver import TimeGrid, solve_semilinear
from .spectral import Field, l2_norm_sq


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 200
    # "backtracking" halves the step until the objective does not decrease
    step_rule: str = "backtracking"
    step_size: float = 1.0
    max_halvings: int = 30
    tol: float = 1e-9
    delta_bb: float = 0.01

    def __post_init__(self):
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"step_rule must be fixed or backtracking, got {self.step_rule!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        if not (self.step_size > 0 and self.tol > 0 and self.max_halvings > 0):
            raise ValueError("step_size, tol and max_halvings must be positive")
        if not 0.0 < self.delta_bb < 0.5:
            raise ValueError(f"delta_bb must lie in (0, 0.5), got {self.delta_bb!r}")


@dataclass
class RunTrace:
    objective: list[float] = field(default_factory=list)
    bang_bang: list[float] = field(default_factory=list)
    step_sizes: list[float] = field(default_factory=list)
    step_norms: list[float] = field(default_factory=list)
    control: Control | None = None
    converged: bool = False
    # gradient evaluations, including the one that detected convergence
    iterations: int = 0

    def rows(self):
        """``(iteration, objective, bang_bang_measure, step_size)``; row 0 is the start."""
        steps = [0.0] + self.step_sizes
        return [(i, self.objective[i], self.bang_bang[i], steps[i]) for i in range(len(self.objective))]


def bang_bang_measure(m: Control | Field, delta_bb: float = 0.01) -> float:
    f = m.m if isinstance(m, Control) else m
    v = f.values
    return float(f.grid.spacing * np.count_nonzero((v > delta_bb) & (v < 1.0 - delta_bb)))


def switching_level(density: np.ndarray, volume: float, spacing: float) -> float:
    """Level ``c`` whose superlevel set of ``density`` has measure ``volume``."""
    g = np.sort(density)[::-1]
    cells = volume / spacing
    n_full = int(np.floor(cells + 1e-9))
    if abs(cells - round(cells)) < 1e-9:
        n_full = int(round(cells))
        if n_full >= len(g):
            return float(g[-1])
        return float(0.5 * (g[n_full - 1] + g[n_full]))
    return float(g[n_full])


def pontryagin_residual(model: ModelSpec, m: Control, tgrid: TimeGrid | None = None, tol_band: float = 1e-8) -> float:
    """L1 distance between ``m`` and the bathtub rule built from its own gradient density."""
    tgrid = tgrid or TimeGrid(model.horizon, 1000)
    g = solve_adjoint(model, m.m, tgrid=tgrid).gradient_density.values
    spacing = m.grid.spacing
    c = switching_level(g, m.volume, spacing)
    m_hat = (g > c).astype(float)
    outside = np.abs(g - c) > tol_band
    return float(spacing * np.sum(np.abs(m.m.values - m_hat)[outside]))


def optimize(model: ModelSpec, m_init: Control, cfg: OptimizerConfig | None = None, tgrid: TimeGrid | None = None) -> RunTrace:
    """Iterate ``m <- project(m + tau * G(m))`` with ``G`` the gradient density."""
    cfg = cfg or OptimizerConfig()
    tgrid = tgrid or TimeGrid(model.horizon, 1000)
    volume = m_init.volume
    m = m_init
    u = solve_semilinear(model, m.m, tgrid)
    J = evaluate_objective(model, u)
    trace = RunTrace(objective=[J], bang_bang=[bang_bang_measure(m, cfg.delta_bb)])
    tau = cfg.step_size
    for _ in range(cfg.max_iters):
        trace.iterations += 1
        g = solve_adjoint(model, m.m, u=u).gradient_density
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            trial = project_admissible(m.m + tau * g, volume)
            dm = float(np.sqrt(l2_norm_sq(trial.m - m.m)))
            if dm < cfg.tol:
                accepted = "converged"
                break
            u_trial = solve_semilinear(model, trial.m, tgrid)
            J_trial = evaluate_objective(model, u_trial)
            if cfg.step_rule == "fixed" or J_trial >= J:
                accepted = "step"
                break
            tau *= 0.5
        if accepted is None:
            raise StalledLineSearch(
                f"no ascent after {cfg.max_halvings} halvings (step {tau:.3e}, J={J:.12g})"
            )
        if accepted == "converged":
            trace.converged = True
            break
        m, u, J = trial, u_trial, J_trial
        trace.objective.append(J)
        trace.bang_bang.append(bang_bang_measure(m, cfg.delta_bb))
        trace.step_sizes.append(tau)
        trace.step_norms.append(dm)
        if cfg.step_rule == "backtracking":
            tau = min(2.0 * tau, cfg.step_size)
    trace.control = m
    return trace
