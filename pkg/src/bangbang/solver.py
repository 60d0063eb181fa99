"""Time integration of semilinear and linear parabolic equations on the torus.

All equations have the form ``d_t w = d_xx w + N(t, x, w)``. Diffusion is
integrated exactly in Fourier space and the explicit part ``N`` with the
two-stage exponential Runge-Kutta scheme of Cox & Matthews (ETD2RK), the
exponential analogue of Heun's method. The explicit part is passed through
the 2/3 dealiasing filter before it enters the update.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeState, NonFiniteState
from .spectral import Field, TorusGrid, diff_rows, row_integrals


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = self.dt * np.arange(self.n_steps + 1)
        t[-1] = self.horizon
        return t

    @classmethod
    def with_max_step(cls, horizon: float, max_dt: float) -> "TimeGrid":
        return cls(horizon, int(np.ceil(horizon / max_dt - 1e-9)))


@dataclass(frozen=True)
class SpaceTimeField:
    """Snapshots ``values[j]`` of a field at the nodes of a time grid."""

    grid: TorusGrid
    tgrid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        shape = (self.tgrid.n_steps + 1, self.grid.n_points)
        if vals.shape != shape:
            raise ValueError(f"expected shape {shape}, got {vals.shape}")
        object.__setattr__(self, "values", vals)

    def snapshot(self, j: int) -> Field:
        return Field(self.grid, self.values[j])

    @property
    def initial(self) -> Field:
        return self.snapshot(0)

    @property
    def final(self) -> Field:
        return self.snapshot(-1)

    def dx(self, order: int = 1) -> np.ndarray:
        return diff_rows(self.values, self.grid, order)

    def reversed(self) -> "SpaceTimeField":
        return SpaceTimeField(self.grid, self.tgrid, self.values[::-1].copy())

    @classmethod
    def constant_in_time(cls, f: Field, tgrid: TimeGrid) -> "SpaceTimeField":
        vals = np.broadcast_to(f.values, (tgrid.n_steps + 1, f.grid.n_points))
        return cls(f.grid, tgrid, vals.copy())

    @classmethod
    def zeros(cls, grid: TorusGrid, tgrid: TimeGrid) -> "SpaceTimeField":
        return cls(grid, tgrid, np.zeros((tgrid.n_steps + 1, grid.n_points)))


def time_integral(per_time: np.ndarray, tgrid: TimeGrid) -> float:
    """Trapezoid rule over the time nodes."""
    return float(np.trapezoid(per_time, dx=tgrid.dt))


def space_time_integral(values: np.ndarray, grid: TorusGrid, tgrid: TimeGrid) -> float:
    return time_integral(row_integrals(values, grid), tgrid)


def _phi_functions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``phi1 = (e^z - 1)/z`` and ``phi2 = (e^z - 1 - z)/z^2``, stable near 0."""
    z = np.asarray(z, dtype=float)
    phi1 = np.empty_like(z)
    phi2 = np.empty_like(z)
    small = np.abs(z) < 0.1
    big = ~small
    zb = z[big]
    phi1[big] = np.expm1(zb) / zb
    phi2[big] = (np.expm1(zb) - zb) / zb**2
    zs = z[small]
    # Taylor series: phi_l(z) = sum_j z^j / (j + l)!
    s1 = np.zeros_like(zs)
    s2 = np.zeros_like(zs)
    term = np.ones_like(zs)
    fact1, fact2 = 1.0, 2.0
    for j in range(12):
        s1 += term / fact1
        s2 += term / fact2
        term = term * zs
        fact1 *= j + 2
        fact2 *= j + 3
    phi1[small] = s1
    phi2[small] = s2
    return phi1, phi2


class _ExpStepper:
    def __init__(self, grid: TorusGrid, dt: float):
        self.grid = grid
        z = -(grid.wavenumbers**2) * dt
        phi1, phi2 = _phi_functions(z)
        self.decay = np.exp(z)
        self.c1 = dt * phi1
        self.c2 = dt * phi2
        self.mask = grid.dealias_mask.astype(float)
        self.n = grid.n_points

    def to_spec(self, w: np.ndarray) -> np.ndarray:
        return np.fft.rfft(w)

    def to_phys(self, w_hat: np.ndarray) -> np.ndarray:
        return np.fft.irfft(w_hat, n=self.n)

    def step(self, w_hat, n0_hat, explicit_next):
        """One ETD2RK step; ``explicit_next`` maps the predictor to ``N`` at t+dt."""
        a_hat = self.decay * w_hat + self.c1 * n0_hat
        n1_hat = self.mask * self.to_spec(explicit_next(self.to_phys(a_hat)))
        return a_hat + self.c2 * (n1_hat - n0_hat)


def _check_finite(w: np.ndarray, what: str, t: float):
    if not np.all(np.isfinite(w)):
        raise NonFiniteState(f"{what} became non-finite at t={t:.6g}; reduce dt")


def _march_semilinear(model, stepper, tgrid, x, mv, w_hat, out):
    times = tgrid.times
    w = out[0]
    for j in range(tgrid.n_steps):
        t0, t1 = times[j], times[j + 1]
        n0_hat = stepper.mask * stepper.to_spec(model.reaction(t0, x, w, mv))
        w_hat = stepper.step(w_hat, n0_hat, lambda a: model.reaction(t1, x, a, mv))
        w = stepper.to_phys(w_hat)
        _check_finite(w, "state", t1)
        out[j + 1] = w
    return out


def solve_semilinear(model, m: Field, tgrid: TimeGrid) -> SpaceTimeField:
    """Solve ``d_t u - d_xx u = m*phi(u) + f(t, x, u)`` with ``u(0) = u0``.

    ``model`` supplies ``initial_datum(grid)`` and
    ``reaction(t, x, u, m_values)``; ``m`` may be any bounded field, admissible
    or not (finite-difference probes use ``m +/- eps*h``).
    """
    grid = m.grid
    x = grid.nodes
    mv = m.values
    u0 = model.initial_datum(grid).values
    stepper = _ExpStepper(grid, tgrid.dt)
    out = np.empty((tgrid.n_steps + 1, grid.n_points))
    out[0] = u0
    # overflow surfaces as NonFiniteState, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        out = _march_semilinear(model, stepper, tgrid, x, mv, stepper.to_spec(u0), out)
    low = out.min()
    if low < -1e-10:
        warnings.warn(f"state reached {low:.3e} < 0", NegativeState, stacklevel=2)
    return SpaceTimeField(grid, tgrid, out)


@dataclass(frozen=True)
class LinearSourceSpec:
    """Data of ``d_t w - d_xx w - V w = S`` (forward) or its time-reversed twin.

    For ``direction="backward"`` the equation is ``d_t w + d_xx w + V w = -S``
    with terminal value ``initial``; it is solved through ``q(t) = w(T - t)``.
    """

    potential: SpaceTimeField
    source: SpaceTimeField
    initial: Field
    direction: str = "forward"

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"direction must be forward or backward, got {self.direction!r}")
        if self.potential.tgrid != self.source.tgrid or self.potential.grid != self.source.grid:
            raise ValueError("potential and source must share grids")
        if self.initial.grid != self.source.grid:
            raise ValueError("initial datum lives on a different grid")


def solve_linear(spec: LinearSourceSpec) -> SpaceTimeField:
    V = spec.potential.values
    S = spec.source.values
    if spec.direction == "backward":
        V = V[::-1]
        S = S[::-1]
    grid, tgrid = spec.source.grid, spec.source.tgrid
    stepper = _ExpStepper(grid, tgrid.dt)
    out = np.empty((tgrid.n_steps + 1, grid.n_points))
    w = spec.initial.values.copy()
    out[0] = w
    w_hat = stepper.to_spec(w)
    times = tgrid.times
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(tgrid.n_steps):
            n0_hat = stepper.mask * stepper.to_spec(V[j] * w + S[j])
            Vn, Sn = V[j + 1], S[j + 1]
            w_hat = stepper.step(w_hat, n0_hat, lambda a: Vn * a + Sn)
            w = stepper.to_phys(w_hat)
            _check_finite(w, "linear solution", times[j + 1])
            out[j + 1] = w
    if spec.direction == "backward":
        out = out[::-1].copy()
    return SpaceTimeField(grid, tgrid, out)


def energy_norms(theta: SpaceTimeField) -> dict:
    """Space-time energy pieces of a solution: gradient, L2 and terminal terms."""
    grid, tgrid = theta.grid, theta.tgrid
    grad = space_time_integral(theta.dx(1) ** 2, grid, tgrid)
    l2 = space_time_integral(theta.values**2, grid, tgrid)
    terminal = float(grid.spacing * np.sum(theta.values[-1] ** 2))
    return {"gradient": grad, "l2": l2, "terminal": terminal}


def energy_estimate_check(
    potential: SpaceTimeField,
    f_src: SpaceTimeField,
    q: SpaceTimeField,
    g: SpaceTimeField,
) -> dict:
    """Solve ``d_t w - d_xx w - V w = d_x f + q g`` from rest and report both sides.

    Returns ``lhs`` (gradient + L2 + terminal energy of the solution) and
    ``rhs_data`` (space-time L2 mass of ``f`` and ``g``), plus the solution.
    """
    source = SpaceTimeField(f_src.grid, f_src.tgrid, f_src.dx(1) + q.values * g.values)
    theta = solve_linear(
        LinearSourceSpec(potential, source, Field(f_src.grid, np.zeros(f_src.grid.n_points)))
    )
    parts = energy_norms(theta)
    rhs = space_time_integral(f_src.values**2 + g.values**2, f_src.grid, f_src.tgrid)
    lhs = parts["gradient"] + parts["l2"] + parts["terminal"]
    return {"lhs": lhs, "rhs_data": rhs, **parts, "solution": theta}
