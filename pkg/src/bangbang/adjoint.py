"""First and second Gateaux derivatives of the objective through an adjoint state.

For the state ``u`` of ``d_t u - d_xx u = m phi(u) + f(t, x, u)`` the adjoint
``p`` solves ``d_t p + d_xx p + V p = -d_u j1`` backward from
``p(T) = d_u j2(u(T))`` with ``V = m phi'(u) + d_u f``. The first derivative
in a direction ``h`` is then ``int h * G`` with ``G = int_0^T phi(u) p dt``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import ModelSpec, evaluate_objective
from .solver import (
    LinearSourceSpec,
    SpaceTimeField,
    TimeGrid,
    solve_linear,
    solve_semilinear,
    space_time_integral,
    time_integral,
)
from .spectral import Field, diff_rows, integral, l2_norm_sq


@dataclass(frozen=True)
class AdjointBundle:
    model: ModelSpec
    m: Field
    u: SpaceTimeField
    p: SpaceTimeField
    V: SpaceTimeField
    # weight p * phi'(u) / phi(u); equals p / u for the bilinear coupling
    psi: SpaceTimeField
    gradient_density: Field

    @property
    def tgrid(self) -> TimeGrid:
        return self.u.tgrid

    @property
    def grid(self):
        return self.u.grid


def _tx(u: SpaceTimeField):
    return u.tgrid.times[:, None], u.grid.nodes[None, :]


def solve_adjoint(model: ModelSpec, m: Field, u: SpaceTimeField | None = None, tgrid: TimeGrid | None = None) -> AdjointBundle:
    if u is None:
        u = solve_semilinear(model, m, tgrid)
    t, x = _tx(u)
    grid, tg = u.grid, u.tgrid
    U = u.values
    V = SpaceTimeField(grid, tg, model.potential(t, x, U, m.values))
    src = SpaceTimeField(grid, tg, model.j1.du(t, x, U) + 0.0 * U)
    terminal = Field(grid, model.j2.du(tg.horizon, grid.nodes, U[-1]) + 0.0 * U[-1])
    p = solve_linear(LinearSourceSpec(V, src, terminal, "backward"))
    phi = model.interaction.phi(U)
    psi = SpaceTimeField(grid, tg, p.values * model.interaction.dphi(U) / phi)
    density = Field(grid, np.trapezoid(phi * p.values, dx=tg.dt, axis=0))
    return AdjointBundle(model, m, u, p, V, psi, density)


def linearized_state(bundle: AdjointBundle, h: Field) -> SpaceTimeField:
    """Directional derivative of the state: source ``h * phi(u)``, zero start."""
    phi = bundle.model.interaction.phi(bundle.u.values)
    src = SpaceTimeField(bundle.grid, bundle.tgrid, h.values[None, :] * phi)
    zero = Field(bundle.grid, np.zeros(bundle.grid.n_points))
    return solve_linear(LinearSourceSpec(bundle.V, src, zero))


def gateaux_first(bundle: AdjointBundle, h: Field, udot: SpaceTimeField | None = None) -> dict:
    """Both the direct (sensitivity) and the adjoint form of ``J'(m)[h]``."""
    model, u = bundle.model, bundle.u
    if udot is None:
        udot = linearized_state(bundle, h)
    t, x = _tx(u)
    grid, tg = bundle.grid, bundle.tgrid
    running = space_time_integral(model.j1.du(t, x, u.values) * udot.values, grid, tg)
    final = integral(Field(grid, model.j2.du(tg.horizon, grid.nodes, u.values[-1]) * udot.values[-1]))
    adjoint = integral(h * bundle.gradient_density)
    return {"direct": float(running + final), "adjoint": float(adjoint), "udot": udot}


@dataclass(frozen=True)
class SecondOrderDecomposition:
    term_grad: float
    term_terminal_j2: float
    term_terminal_psi: float
    term_Z: float
    Z: SpaceTimeField = field(repr=False)
    X: SpaceTimeField = field(repr=False)
    Y: SpaceTimeField = field(repr=False)
    udot: SpaceTimeField = field(repr=False)
    psi: SpaceTimeField = field(repr=False)

    @property
    def total(self) -> float:
        return self.term_grad + self.term_terminal_j2 + self.term_terminal_psi + self.term_Z


def _phi_ratio_derivatives(interaction, U):
    """``g = phi'/phi`` and its first two derivatives in ``u``."""
    p0 = interaction.phi(U)
    p1 = interaction.dphi(U)
    p2 = interaction.d2phi(U)
    p3 = interaction.d3phi(U)
    g = p1 / p0
    g1 = (p2 * p0 - p1**2) / p0**2
    g2 = (p3 * p0**2 - 3 * p0 * p1 * p2 + 2 * p1**3) / p0**3
    return g, g1, g2


def second_order_fields(bundle: AdjointBundle):
    """Assemble the zeroth-order weight of the rearranged second derivative.

    Integrating ``2 * int int h phi'(u) udot p`` by parts with
    ``h = (d_t udot - d_xx udot - V udot) / phi(u)`` gives
    ``J'' = 2 int int psi |d_x udot|^2 + int psi(T) udot(T)^2
    + int udot(T)^2 d_uu j2 + int int Z udot^2`` with
    ``Z = -(d_t psi + d_xx psi) + Y`` and
    ``Y = -2 psi V + d_uu j1 + (d_uu f + m phi'') p``.

    Time derivatives of ``psi`` are never formed: ``d_t p + d_xx p`` and
    ``d_t u + d_xx u`` are replaced by the right-hand sides of the adjoint and
    state equations, leaving only first and second spatial derivatives.
    Returns ``(Z, X, Y)``.
    """
    model, u, p = bundle.model, bundle.u, bundle.p
    grid, tg = bundle.grid, bundle.tgrid
    t, x = _tx(u)
    U, P, V = u.values, p.values, bundle.V.values
    m = bundle.m.values[None, :]
    inter = model.interaction
    g, g1, g2 = _phi_ratio_derivatives(inter, U)
    ux, uxx = diff_rows(U, grid, 1), diff_rows(U, grid, 2)
    px = diff_rows(P, grid, 1)
    X = P * g2 * ux**2 + 2.0 * g1 * px * ux
    p_rhs = -model.j1.du(t, x, U) - V * P
    u_rhs = 2.0 * uxx + model.reaction_fn.f(t, x, U) + m * inter.phi(U)
    psi_sum = X + g * p_rhs + P * g1 * u_rhs
    Y = (
        -2.0 * bundle.psi.values * V
        + model.j1.duu(t, x, U)
        + (model.reaction_fn.duu(t, x, U) + m * inter.d2phi(U)) * P
    )
    Z = -psi_sum + Y
    wrap = lambda a: SpaceTimeField(grid, tg, a + 0.0 * U)
    return wrap(Z), wrap(X), wrap(Y)


def _perturbed_objective(model, m: Field, h: Field, eps: float, tgrid: TimeGrid) -> float:
    u = solve_semilinear(model, Field(m.grid, m.values + eps * h.values), tgrid)
    return evaluate_objective(model, u)


def gateaux_second(bundle: AdjointBundle, h: Field, fd_step: float = 1e-3, with_fd: bool = True) -> dict:
    """Second derivative ``J''(m)[h, h]`` three ways.

    ``via_pre``: adjoint form before rearrangement; ``via_mb``: the
    four-term decomposition in the weight ``psi`` (see
    :func:`second_order_fields`); ``via_fd``: centred second
    difference of the discrete objective with ``h`` scaled to unit L2.
    """
    model, u, p = bundle.model, bundle.u, bundle.p
    grid, tg = bundle.grid, bundle.tgrid
    t, x = _tx(u)
    U, P = u.values, p.values
    inter = model.interaction
    udot = linearized_state(bundle, h)
    D = udot.values
    m = bundle.m.values[None, :]

    d2j2 = model.j2.duu(tg.horizon, grid.nodes, U[-1]) + 0.0 * U[-1]
    term_terminal_j2 = float(grid.spacing * np.sum(D[-1] ** 2 * d2j2))
    curvature = model.j1.duu(t, x, U) + (model.reaction_fn.duu(t, x, U) + m * inter.d2phi(U)) * P
    via_pre = (
        2.0 * space_time_integral(h.values[None, :] * inter.dphi(U) * D * P, grid, tg)
        + term_terminal_j2
        + space_time_integral(D**2 * curvature, grid, tg)
    )

    Z, X, Y = second_order_fields(bundle)
    psi = bundle.psi.values
    Dx = diff_rows(D, grid, 1)
    decomp = SecondOrderDecomposition(
        term_grad=2.0 * space_time_integral(psi * Dx**2, grid, tg),
        term_terminal_j2=term_terminal_j2,
        term_terminal_psi=float(grid.spacing * np.sum(psi[-1] * D[-1] ** 2)),
        term_Z=space_time_integral(Z.values * D**2, grid, tg),
        Z=Z,
        X=X,
        Y=Y,
        udot=udot,
        psi=bundle.psi,
    )

    via_fd = None
    if with_fd:
        norm = np.sqrt(l2_norm_sq(h))
        if norm == 0.0:
            via_fd = 0.0
        else:
            hn = Field(grid, h.values / norm)
            j_plus = _perturbed_objective(model, bundle.m, hn, fd_step, tg)
            j_minus = _perturbed_objective(model, bundle.m, hn, -fd_step, tg)
            j_mid = evaluate_objective(model, u)
            via_fd = (j_plus - 2.0 * j_mid + j_minus) / fd_step**2 * norm**2
    return {"via_mb": decomp, "via_pre": float(via_pre), "via_fd": via_fd}


def finite_difference_gradient(bundle: AdjointBundle, h: Field, step: float = 1e-4) -> float:
    """Centred difference of the discrete objective along unit-L2 ``h``, rescaled."""
    norm = np.sqrt(l2_norm_sq(h))
    if norm == 0.0:
        return 0.0
    hn = Field(h.grid, h.values / norm)
    jp = _perturbed_objective(bundle.model, bundle.m, hn, step, bundle.tgrid)
    jm = _perturbed_objective(bundle.model, bundle.m, hn, -step, bundle.tgrid)
    return (jp - jm) / (2.0 * step) * norm


def coercivity_terms(decomp: SecondOrderDecomposition, bundle: AdjointBundle, epsilon_margin: float | None = None, delta: float = 0.5) -> dict:
    """Measured pieces of the coercivity estimate for the second derivative.

    ``alpha_hat`` is the minimum of ``psi`` away from the final time, ``beta_hat``
    the negative part of the zeroth-order weight and ``gamma_hat`` that of
    ``d_uu j2`` at the final time. The lower bound is
    ``2 alpha ((1-delta) G_window - delta G_tail) - beta(1+1/delta) L2 - gamma E_T``
    and ``slack`` is the second derivative minus that bound.
    """
    tg, grid = bundle.tgrid, bundle.grid
    T = tg.horizon
    eps = 0.1 * T if epsilon_margin is None else epsilon_margin
    times = tg.times
    window = times <= T - eps + 1e-12
    D = decomp.udot.values
    Dx = diff_rows(D, grid, 1)
    g_per_t = grid.spacing * np.sum(Dx**2, axis=1)
    grad_window = time_integral(g_per_t[window], tg)
    grad_total = time_integral(g_per_t, tg)
    grad_tail = grad_total - grad_window
    l2 = space_time_integral(D**2, grid, tg)
    terminal = float(grid.spacing * np.sum(D[-1] ** 2))

    alpha_hat = float(np.min(bundle.psi.values[window]))
    beta_hat = float(max(0.0, -np.min(decomp.Z.values)))
    model = bundle.model
    d2j2 = model.j2.duu(T, grid.nodes, bundle.u.values[-1]) + 0.0 * grid.nodes
    gamma_hat = float(max(0.0, -np.min(d2j2)))

    # the gradient term of the decomposition carries weight 2 * psi
    gradient_part = 2.0 * alpha_hat * ((1 - delta) * grad_window - delta * grad_tail)
    penalty = beta_hat * (1 + 1 / delta) * l2 + gamma_hat * terminal
    bound = gradient_part - penalty
    total = decomp.total
    slack = total - bound
    scale = l2 + terminal
    return {
        "alpha_hat": alpha_hat,
        "beta_hat": beta_hat,
        "gamma_hat": gamma_hat,
        "epsilon": eps,
        "delta": delta,
        "grad_window": grad_window,
        "grad_tail": grad_tail,
        "l2": l2,
        "terminal": terminal,
        "second_derivative": total,
        "lower_bound": bound,
        "slack": slack,
        "relative_slack": slack / scale if scale > 0 else 0.0,
        "dominance": gradient_part / penalty if penalty > 0 else (np.inf if gradient_part > 0 else 0.0),
    }
