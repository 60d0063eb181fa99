"""Control problem data: models, admissible controls, objective.

A model couples a reaction ``f(t, x, u)``, an interaction ``m * phi(u)``
(``phi(u) = u`` for the bilinear case) and the objective integrands
``j1(t, x, u)`` (running) and ``j2(x, u)`` (terminal). Structural assumptions
are checked by sampling when a model is built.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import HypothesisViolation, InfeasibleVolume
from .solver import SpaceTimeField, space_time_integral
from .spectral import TWO_PI, Field, TorusGrid, integral

Fn = Callable[..., np.ndarray]


def _zero(*args):
    return np.zeros(np.broadcast(*args).shape)


def _one(*args):
    return np.ones(np.broadcast(*args).shape)


@dataclass(frozen=True)
class Reaction:
    """``f(t, x, u)`` with its first two ``u``-derivatives."""

    f: Fn
    du: Fn
    duu: Fn


@dataclass(frozen=True)
class Integrand:
    """Objective density ``j(t, x, u)``; terminal densities ignore ``t``."""

    value: Fn
    du: Fn
    duu: Fn


@dataclass(frozen=True)
class Interaction:
    """Control-state coupling ``m * phi(u)``; ``d3phi`` feeds the second-order rearrangement."""

    name: str
    phi: Fn
    dphi: Fn
    d2phi: Fn
    d3phi: Fn = _zero

    @property
    def bilinear(self) -> bool:
        return self.name == "bilinear"


BILINEAR = Interaction("bilinear", lambda u: u, _one, _zero, _zero)

ZERO_REACTION = Reaction(_zero, _zero, _zero)
ZERO_INTEGRAND = Integrand(_zero, _zero, _zero)
IDENTITY_INTEGRAND = Integrand(lambda t, x, u: u, _one, _zero)


@dataclass(frozen=True)
class InitialDatum:
    """``u0(x) = mean + amplitude * cos(mode * x)``."""

    mean: float = 1.0
    amplitude: float = 0.5
    mode: int = 1

    def __call__(self, x):
        return self.mean + self.amplitude * np.cos(self.mode * x)

    @property
    def sup(self) -> float:
        return self.mean + abs(self.amplitude) if self.mode else self.mean + self.amplitude

    @property
    def inf(self) -> float:
        return self.mean - abs(self.amplitude) if self.mode else self.mean + self.amplitude


@dataclass(frozen=True)
class ModelSpec:
    name: str
    horizon: float
    u0: InitialDatum
    reaction_fn: Reaction
    interaction: Interaction
    j1: Integrand
    j2: Integrand
    lipschitz: float
    # saturation level of the reaction; None when f never dominates -u
    kappa: float | None
    # which objective density is strictly increasing: "j1" or "j2"
    strict: str = "j2"
    check: bool = True

    def __post_init__(self):
        if not self.horizon > 0:
            raise HypothesisViolation(f"{self.name}: horizon must be positive")
        if not self.u0.inf > 0:
            raise HypothesisViolation(f"{self.name}: initial datum must be positive")
        if self.strict not in ("j1", "j2"):
            raise ValueError(f"strict must be 'j1' or 'j2', got {self.strict!r}")
        if self.check:
            check_hypotheses(self)

    def initial_datum(self, grid: TorusGrid) -> Field:
        return grid.sample(self.u0)

    def reaction(self, t, x, u, m):
        return m * self.interaction.phi(u) + self.reaction_fn.f(t, x, u)

    def potential(self, t, x, u, m):
        """Linearisation of the right-hand side in ``u``."""
        return m * self.interaction.dphi(u) + self.reaction_fn.du(t, x, u)

    @property
    def state_bound(self) -> float:
        """A priori sup bound on the state over admissible controls."""
        if self.kappa is not None:
            return max(self.u0.sup, self.kappa)
        return self.u0.sup * float(np.exp((1.0 + self.lipschitz) * self.horizon))


def check_hypotheses(model: ModelSpec, n_lattice: int = 64, n_x: int = 16) -> None:
    """Sample the structural assumptions on a (t, u) lattice; raise on failure."""
    u_max = model.state_bound + 1.0
    t = np.linspace(0.0, model.horizon, n_lattice)[:, None, None]
    u = np.linspace(u_max / n_lattice, u_max, n_lattice)[None, :, None]
    x = (TWO_PI / n_x * np.arange(n_x))[None, None, :]
    name = model.name

    d1 = model.j1.du(t, x, u)
    d2 = model.j2.du(model.horizon, x, u)
    if np.min(d1) < -1e-12 or np.min(d2) < -1e-12:
        raise HypothesisViolation(f"{name}: objective densities must be non-decreasing in u")
    strict = d1 if model.strict == "j1" else d2
    if np.min(strict) <= 0:
        raise HypothesisViolation(f"{name}: declared {model.strict} is not strictly increasing")

    if np.min(model.reaction_fn.f(t, x, 0.0 * u)) < -1e-12:
        raise HypothesisViolation(f"{name}: f(t, x, 0) must be non-negative")
    if model.kappa is not None:
        uk = np.linspace(model.kappa, u_max, n_lattice)[None, :, None]
        if np.max(model.reaction_fn.f(t, x, uk) + uk) > 1e-12:
            raise HypothesisViolation(f"{name}: f(t, x, u) <= -u fails above kappa")
    uw = np.linspace(0.0, u_max + 2.0, 4 * n_lattice)[None, :, None]
    if np.max(np.abs(model.reaction_fn.du(t, x, uw))) > model.lipschitz + 1e-12:
        raise HypothesisViolation(f"{name}: |d_u f| exceeds the Lipschitz bound")

    if not model.interaction.bilinear:
        phi = model.interaction.phi(u)
        ratio = model.interaction.dphi(u) / phi
        if np.min(np.abs(phi)) <= 0 or np.min(ratio) <= 0:
            raise HypothesisViolation(f"{name}: need inf phi'/phi > 0 and phi != 0 on (0, u_max]")


def logistic_extension(M: float, A: float) -> Reaction:
    """``-u^2`` on ``[0, M]``, slope blended linearly to ``-A`` on ``[M, M+1]``.

    Zero for ``u < 0``. The blend is the cubic Hermite interpolant whose end
    values match the integrated slopes, so ``f`` is C1 everywhere.
    """
    if A < 2 * M:
        raise ValueError("Lipschitz bound must be at least 2M")
    c = A - 2 * M
    f_top = -M * M - 2 * M - 0.5 * c

    def f(t, x, u):
        u = np.broadcast_to(u, np.broadcast(t, x, u).shape)
        s = u - M
        return np.select(
            [u < 0, u <= M, u <= M + 1],
            [0.0 * u, -u * u, -M * M - 2 * M * s - 0.5 * c * s * s],
            f_top - A * (u - M - 1),
        )

    def du(t, x, u):
        u = np.broadcast_to(u, np.broadcast(t, x, u).shape)
        return np.select(
            [u < 0, u <= M, u <= M + 1],
            [0.0 * u, -2 * u, -2 * M - c * (u - M)],
            -A + 0.0 * u,
        )

    def duu(t, x, u):
        u = np.broadcast_to(u, np.broadcast(t, x, u).shape)
        return np.select([u < 0, u <= M, u <= M + 1], [0.0 * u, -2.0 + 0 * u, -c + 0 * u], 0.0 * u)

    return Reaction(f, du, duu)


def logistic_population(horizon: float = 1.0, u0: InitialDatum | None = None) -> ModelSpec:
    u0 = u0 or InitialDatum()
    M = max(u0.sup, 1.0)
    A = 2 * M + 1
    return ModelSpec(
        name="logistic-population",
        horizon=horizon,
        u0=u0,
        reaction_fn=logistic_extension(M, A),
        interaction=BILINEAR,
        j1=IDENTITY_INTEGRAND,
        j2=IDENTITY_INTEGRAND,
        lipschitz=A,
        kappa=1.0,
        strict="j1",
    )


def pure_heat(horizon: float = 1.0, u0: InitialDatum | None = None) -> ModelSpec:
    return ModelSpec(
        name="pure-heat",
        horizon=horizon,
        u0=u0 or InitialDatum(),
        reaction_fn=ZERO_REACTION,
        interaction=BILINEAR,
        j1=ZERO_INTEGRAND,
        j2=IDENTITY_INTEGRAND,
        lipschitz=0.0,
        kappa=None,
        strict="j2",
    )


CARRYING_CAPACITY = Interaction(
    "phi=-u^2",
    lambda u: -u * u,
    lambda u: -2.0 * u,
    lambda u: -2.0 + 0.0 * u,
    _zero,
)


def carrying_capacity(horizon: float = 1.0, u0: InitialDatum | None = None) -> ModelSpec:
    """``d_t y - d_xx y = y (1 - m y)`` with objective ``int y(T)``."""
    return ModelSpec(
        name="carrying-capacity",
        horizon=horizon,
        u0=u0 or InitialDatum(),
        reaction_fn=Reaction(lambda t, x, u: u + 0.0 * (t + x), _one, _zero),
        interaction=CARRYING_CAPACITY,
        j1=ZERO_INTEGRAND,
        j2=IDENTITY_INTEGRAND,
        lipschitz=1.0,
        kappa=None,
        strict="j2",
    )


CATALOG = {
    "logistic-population": logistic_population,
    "pure-heat": pure_heat,
    "carrying-capacity": carrying_capacity,
}


def builtin_models(horizon: float = 1.0, u0: InitialDatum | None = None) -> dict[str, ModelSpec]:
    return {name: make(horizon, u0) for name, make in CATALOG.items()}


def get_model(name: str, horizon: float = 1.0, u0: InitialDatum | None = None) -> ModelSpec:
    try:
        make = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(CATALOG)}") from None
    return make(horizon, u0)


@dataclass(frozen=True)
class Control:
    m: Field
    volume: float
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        v = self.m.values
        if v.min() < self.lower - 1e-10 or v.max() > self.upper + 1e-10:
            raise ValueError("control violates the pointwise bounds")
        if abs(integral(self.m) - self.volume) > 1e-9:
            raise ValueError(
                f"control mass {integral(self.m):.12g} differs from V0={self.volume:.12g}"
            )

    @property
    def grid(self) -> TorusGrid:
        return self.m.grid

    @classmethod
    def uniform(cls, grid: TorusGrid, volume: float) -> "Control":
        _check_volume(volume)
        return cls(Field(grid, np.full(grid.n_points, volume / TWO_PI)), volume)


def _check_volume(volume: float):
    if not 0.0 < volume < TWO_PI:
        raise InfeasibleVolume(f"V0 must lie in (0, 2*pi), got {volume!r}")


def projection_shift(raw: np.ndarray, volume: float, spacing: float) -> float:
    """Scalar ``c`` with ``sum(clip(raw + c, 0, 1)) * spacing == volume``."""

    def mass(c):
        return spacing * np.sum(np.clip(raw + c, 0.0, 1.0))

    lo, hi = -raw.max(), 1.0 - raw.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mass(mid) < volume:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    c = 0.5 * (lo + hi)
    # exact solve on the free set identified by bisection
    shifted = raw + c
    free = (shifted > 0.0) & (shifted < 1.0)
    if free.any():
        n_top = np.count_nonzero(shifted >= 1.0)
        c_exact = (volume / spacing - n_top - raw[free].sum()) / free.sum()
        trial = raw + c_exact
        if np.array_equal(free, (trial > 0.0) & (trial < 1.0)) and np.count_nonzero(trial >= 1.0) == n_top:
            c = c_exact
    return float(c)


def project_admissible(raw: Field, volume: float) -> Control:
    """Euclidean projection onto ``{0 <= m <= 1, int m = V0}``."""
    _check_volume(volume)
    c = projection_shift(raw.values, volume, raw.grid.spacing)
    return Control(Field(raw.grid, np.clip(raw.values + c, 0.0, 1.0)), volume)


def evaluate_objective(model: ModelSpec, u: SpaceTimeField) -> float:
    """Trapezoid-in-time, rectangle-in-space value of the objective."""
    grid, tgrid = u.grid, u.tgrid
    t = tgrid.times[:, None]
    x = grid.nodes[None, :]
    running = space_time_integral(model.j1.value(t, x, u.values), grid, tgrid)
    final = grid.spacing * np.sum(model.j2.value(tgrid.horizon, grid.nodes, u.values[-1]))
    return float(running + final)
