"""High-mode perturbations and the two-scale expansion of the linearised state.

For a source ``h * A(t, x)`` with ``h = sum_k a_k cos(kx) + b_k sin(kx)``
supported on modes ``k >= K`` and a slowly varying amplitude ``A`` (``A = u``
for the bilinear coupling), the linearised state is approximated by

    Z = A * C1 - 2 * d_x A * W,
    C1 = sum (a_k cos + b_k sin)(kx) (1 - exp(-k^2 t)) / k^2,
    W  = sum (a_k sin - b_k cos)(kx) phi(k^2 t) / k^3,

with ``phi(s) = 1 - s exp(-s) - exp(-s)``. Its derivative splits exactly as
``d_x Z = L + I + J`` with ``L = A * d_x C1`` the leading term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSupport, ResolutionExceeded
from .models import ModelSpec
from .solver import (
    LinearSourceSpec,
    SpaceTimeField,
    TimeGrid,
    solve_linear,
    solve_semilinear,
    space_time_integral,
    time_integral,
)
from .spectral import (
    Field,
    TorusGrid,
    diff_rows,
    forward_transform,
    from_cos_sin,
    inverse_transform,
    row_integrals,
)

UPSILON_GRID = 2.0 ** np.arange(-10, 11)


def corrector_profile(s) -> np.ndarray:
    """``phi(s) = 1 - s e^{-s} - e^{-s}``, with a series for small ``s``."""
    s = np.asarray(s, dtype=float)
    out = np.empty_like(s)
    small = s < 0.05
    sb = s[~small]
    out[~small] = -np.expm1(-sb) - sb * np.exp(-sb)
    ss = s[small]
    # 1 - (1 + s) e^{-s} = sum_{j>=2} (-1)^j (j - 1) s^j / j!
    acc = np.zeros_like(ss)
    term = ss * ss / 2.0
    for j in range(2, 14):
        acc += (j - 1) * term
        term = -term * ss / (j + 1)
    out[small] = acc
    return out


@dataclass(frozen=True)
class PerturbationSpectrum:
    """Cosine/sine amplitudes ``a[k], b[k]`` (``k = 0 .. n/2``) of a direction ``h``."""

    grid: TorusGrid
    K: int
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    omega: np.ndarray | None = field(default=None, repr=False)
    # exact nodal values when built on a support set (zero off omega)
    values: np.ndarray | None = field(default=None, repr=False)

    # amplitudes at or below this size are round-off of an exact construction
    ACTIVE_TOL = 1e-10

    def __post_init__(self):
        nk = self.grid.n_points // 2 + 1
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.shape != (nk,) or b.shape != (nk,):
            raise ValueError(f"coefficient arrays must have length {nk}")
        if self.K < 1:
            raise ValueError("cutoff K must be at least 1")
        total = float(np.sum(a**2 + b**2))
        if total != 0.0 and abs(total - 1.0) > 1e-10:
            raise ValueError(f"sum of squared amplitudes is {total!r}, expected 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def active(self) -> np.ndarray:
        """Wavenumbers carrying a nonzero amplitude."""
        tol = self.ACTIVE_TOL
        return np.nonzero((np.abs(self.a) > tol) | (np.abs(self.b) > tol))[0]

    @property
    def k_max(self) -> int:
        act = self.active
        return int(act.max()) if act.size else 0

    @property
    def h(self) -> Field:
        if self.values is not None:
            return Field(self.grid, self.values)
        return inverse_transform(from_cos_sin(self.grid, self.a, self.b))

    def weighted_sum(self, power: int) -> float:
        """``sum (a_k^2 + b_k^2) / k^power`` over ``k >= 1``."""
        k = self.grid.wavenumbers[1:]
        return float(np.sum((self.a[1:] ** 2 + self.b[1:] ** 2) / k**power))

    @classmethod
    def single_mode(cls, grid: TorusGrid, k: int, kind: str = "cos") -> "PerturbationSpectrum":
        nk = grid.n_points // 2 + 1
        if not 1 <= k < nk - 1:
            raise ValueError(f"mode {k} outside 1 .. {nk - 2}")
        a, b = np.zeros(nk), np.zeros(nk)
        (a if kind == "cos" else b)[k] = 1.0
        return cls(grid, k, a, b)

    @classmethod
    def from_coefficients(cls, grid: TorusGrid, a, b, K: int | None = None, normalize: bool = True) -> "PerturbationSpectrum":
        a = np.asarray(a, dtype=float).copy()
        b = np.asarray(b, dtype=float).copy()
        total = float(np.sum(a**2 + b**2))
        if normalize and total > 0:
            a /= np.sqrt(total)
            b /= np.sqrt(total)
        if K is None:
            nz = np.nonzero((a != 0) | (b != 0))[0]
            K = int(nz.min()) if nz.size else 1
        return cls(grid, max(int(K), 1), a, b)


def _trig_columns(x: np.ndarray, ks) -> np.ndarray:
    cols = []
    for k in ks:
        cols.append(np.cos(k * x))
        if k > 0:
            cols.append(np.sin(k * x))
    return np.column_stack(cols) if cols else np.zeros((x.size, 0))


def build_high_mode_perturbation(
    omega_mask,
    K: int,
    seed: int,
    grid: TorusGrid | None = None,
    k_max: int | None = None,
    tol: float = 1e-8,
) -> PerturbationSpectrum:
    """Seeded direction supported on ``omega`` whose Fourier modes below ``K`` vanish.

    A random field on ``omega`` loses its orthogonal projection onto the
    restricted modes ``cos(kx), sin(kx)`` for ``k < K`` (and for ``k > k_max``
    when ``k_max`` is given), is extended by zero and renormalised. The
    restricted basis is badly conditioned for large ``K`` on a short arc, so
    the projection uses its numerically significant singular subspace; the
    annihilation is then verified on the result. Raises
    :class:`DegenerateSupport` when ``omega`` is too small or nothing survives.
    """
    omega = np.asarray(omega_mask, dtype=bool)
    grid = grid or TorusGrid(omega.size)
    if omega.shape != (grid.n_points,):
        raise ValueError("omega mask does not match the grid")
    if K < 1:
        raise ValueError("cutoff K must be at least 1")
    n_in = int(omega.sum())
    if n_in < 4 * K:
        raise DegenerateSupport(f"omega holds {n_in} points, need at least {4 * K} for K={K}")
    half = grid.n_points // 2
    x = grid.nodes[omega]
    ks = list(range(K))
    if k_max is not None:
        if not K <= k_max < half:
            raise ValueError(f"k_max must lie in [K, n/2), got {k_max}")
        ks += list(range(k_max + 1, half))
    basis = _trig_columns(x, ks)
    if k_max is not None:
        # the Nyquist mode is cos(n x / 2) only
        basis = np.column_stack([basis, np.cos(half * x)])
    U, sv, _ = np.linalg.svd(basis, full_matrices=False)
    Q = U[:, sv > 1e-13 * sv[0]]
    if Q.shape[1] >= n_in:
        raise DegenerateSupport(f"constraints span all of omega (K={K}, k_max={k_max}); reduce K")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(n_in)
    resid = raw - Q @ (Q.T @ raw)
    if np.linalg.norm(resid) < 1e-6 * np.linalg.norm(raw):
        raise DegenerateSupport(f"no admissible direction survives on omega (K={K}); reduce K")
    values = np.zeros(grid.n_points)
    values[omega] = resid
    spec = forward_transform(Field(grid, values))
    scale = np.sqrt(np.sum(spec.a**2 + spec.b**2))
    values /= scale
    spec = forward_transform(Field(grid, values))
    bad = np.abs(spec.coefficients[:K])
    if k_max is not None:
        bad = np.concatenate([bad, np.abs(spec.coefficients[k_max + 1 :])])
    if bad.max() > tol:
        raise DegenerateSupport(f"excluded modes not annihilated (max {bad.max():.2e}); reduce K")
    return PerturbationSpectrum(grid, K, spec.a, spec.b, omega, values)


@dataclass(frozen=True)
class CorrectorExpansion:
    Z: SpaceTimeField
    L: SpaceTimeField
    I: SpaceTimeField
    J: SpaceTimeField
    W: SpaceTimeField
    C1: SpaceTimeField
    amplitude: SpaceTimeField
    amplitude_x: np.ndarray = field(repr=False)
    amplitude_xx: np.ndarray = field(repr=False)
    spectrum: PerturbationSpectrum = field(repr=False)


def _modal_sum(spec: PerturbationSpectrum, times: np.ndarray, weights, phase: str) -> np.ndarray:
    """Evaluate ``sum_k w_k(t) (a_k cos + b_k sin)`` (or the sine-phase twin) on the grid.

    ``weights`` maps the wavenumber array and time column to a ``(nt, nk)``
    array; ``phase='cos'`` uses ``a cos + b sin``, ``'sin'`` uses ``a sin - b cos``.
    """
    grid = spec.grid
    n = grid.n_points
    k = grid.wavenumbers
    w = np.zeros((times.size, k.size))
    act = spec.active
    act = act[act > 0]
    if act.size:
        w[:, act] = weights(k[act][None, :], times[:, None])
    if phase == "cos":
        c = 0.5 * (spec.a - 1j * spec.b)
    else:
        # a sin - b cos = Re[(-b - i a) e^{ikx}]
        c = 0.5 * (-spec.b - 1j * spec.a)
    coef = w * c[None, :] * n
    return np.fft.irfft(coef, n=n, axis=1)


def corrector_fields(u: SpaceTimeField, spec: PerturbationSpectrum, amplitude: SpaceTimeField | None = None) -> CorrectorExpansion:
    """Assemble ``Z`` and the ``L, I, J, W`` pieces snapshot by snapshot.

    ``amplitude`` defaults to ``u``; pass ``phi(u)`` for a non-bilinear coupling.
    """
    grid, tg = u.grid, u.tgrid
    if spec.grid != grid:
        raise ValueError("spectrum and state live on different grids")
    if spec.k_max >= grid.n_points / 3:
        raise ValueError(f"k_max={spec.k_max} must stay below n/3={grid.n_points / 3:.1f}")
    A = (amplitude or u).values
    Ax, Axx = diff_rows(A, grid, 1), diff_rows(A, grid, 2)
    t = tg.times
    lead = lambda k, tt: -np.expm1(-(k**2) * tt) / k**2
    C1 = _modal_sum(spec, t, lead, "cos")
    W = _modal_sum(spec, t, lambda k, tt: corrector_profile(k**2 * tt) / k**3, "sin")
    dC1 = _modal_sum(spec, t, lambda k, tt: -np.expm1(-(k**2) * tt) / k, "sin")
    # d_x C1 carries -(a sin - b cos)
    L = -A * dC1
    inner = lambda k, tt: (-1.0 + np.exp(-(k**2) * tt) + 2.0 * k**2 * tt * np.exp(-(k**2) * tt)) / k**2
    I = Ax * _modal_sum(spec, t, inner, "cos")
    J = -2.0 * Axx * W
    Z = A * C1 - 2.0 * Ax * W
    wrap = lambda v: SpaceTimeField(grid, tg, v)
    return CorrectorExpansion(
        Z=wrap(Z), L=wrap(L), I=wrap(I), J=wrap(J), W=wrap(W), C1=wrap(C1),
        amplitude=wrap(A), amplitude_x=Ax, amplitude_xx=Axx, spectrum=spec,
    )


def leading_term_check(expansion: CorrectorExpansion, epsilon_margin: float | None = None) -> dict:
    """Measured sizes of the leading term and the lower-order pieces.

    ``L2_L`` is the integral of ``L^2`` over ``(0, T - eps)`` and ``surrogate``
    the bound ``(min |A|)^2 pi sum (a^2+b^2)/k^2 int (1 - e^{-k^2 t})^2``
    over the same window, with the time integral taken by the same trapezoid
    rule so the two agree exactly when ``A`` is constant.
    """
    spec = expansion.spectrum
    grid, tg = expansion.Z.grid, expansion.Z.tgrid
    T = tg.horizon
    eps = 0.1 * T if epsilon_margin is None else epsilon_margin
    window = tg.times <= T - eps + 1e-12
    L2 = row_integrals(expansion.L.values**2, grid)
    L2_window = time_integral(L2[window], tg)
    L2_total = time_integral(L2, tg)
    IJ = space_time_integral((expansion.I.values + expansion.J.values) ** 2, grid, tg)
    Z2 = space_time_integral(expansion.Z.values**2, grid, tg)
    d_low = float(np.min(np.abs(expansion.amplitude.values)))
    k = grid.wavenumbers[1:-1]
    w = spec.a[1:-1] ** 2 + spec.b[1:-1] ** 2
    layer = (-np.expm1(-(k[None, :] ** 2) * tg.times[window][:, None])) ** 2
    per_t = np.pi * (layer * (w / k**2)[None, :]).sum(axis=1)
    surrogate = d_low**2 * time_integral(per_t, tg)
    S4 = spec.weighted_sum(4)
    return {
        "L2_L": L2_window,
        "L2_L_total": L2_total,
        "surrogate": surrogate,
        "lower_bound_ok": bool(L2_window >= surrogate - 1e-6),
        "L2_IJ": IJ,
        "ratio_IJ_over_L": IJ / L2_total if L2_total > 0 else 0.0,
        "L2_Z": Z2,
        "S4": S4,
        "C_hat": Z2 / S4 if S4 > 0 else 0.0,
        "min_amplitude": d_low,
    }


def envelope(spec: PerturbationSpectrum) -> float:
    """``min over Upsilon`` of ``S4 / Upsilon + Upsilon * S2`` on a dyadic sweep."""
    S2, S4 = spec.weighted_sum(2), spec.weighted_sum(4)
    return float(np.min(S4 / UPSILON_GRID + UPSILON_GRID * S2))


def residual_energy(R: SpaceTimeField) -> float:
    """``int ||R(t)||_{W^{1,2}}^2 dt + ||R(T)||^2``."""
    grid, tg = R.grid, R.tgrid
    h1 = space_time_integral(R.values**2 + R.dx(1) ** 2, grid, tg)
    return float(h1 + grid.spacing * np.sum(R.values[-1] ** 2))


@dataclass
class ScalingReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def K(self) -> np.ndarray:
        return np.array([r["K"] for r in self.rows], dtype=float)

    @property
    def residual_energy(self) -> np.ndarray:
        return np.array([r["residual_energy"] for r in self.rows])

    @property
    def slope(self) -> float:
        """Least-squares slope of ``log residual_energy`` against ``log K``."""
        K, r = self.K, self.residual_energy
        if len(K) < 2 or np.any(r <= 0):
            return float("nan")
        return float(np.polyfit(np.log(K), np.log(r), 1)[0])


def default_time_grid(horizon: float, K: int) -> TimeGrid:
    return TimeGrid.with_max_step(horizon, min(1e-3, 0.25 / K**2))


def residual_study(
    model: ModelSpec,
    m: Field,
    specs: list[PerturbationSpectrum],
    tgrid: TimeGrid | None = None,
    epsilon_margin: float | None = None,
) -> ScalingReport:
    """Remainder ``R_K = udot - Z_K`` for each spectrum, with bounds and slope.

    Without ``tgrid`` each spectrum gets its own grid with
    ``dt <= min(1e-3, 0.25 / K^2)``.
    """
    report = ScalingReport()
    states: dict[TimeGrid, SpaceTimeField] = {}
    for spec in specs:
        tg = tgrid or default_time_grid(model.horizon, spec.K)
        if tg.dt > 0.25 / spec.K**2 + 1e-15:
            raise ResolutionExceeded(
                f"dt={tg.dt:.3e} exceeds 0.25/K^2={0.25 / spec.K**2:.3e} for K={spec.K}"
            )
        if tg not in states:
            states[tg] = solve_semilinear(model, m, tg)
        u = states[tg]
        t, x = tg.times[:, None], m.grid.nodes[None, :]
        V = SpaceTimeField(m.grid, tg, model.potential(t, x, u.values, m.values) + 0.0 * u.values)
        amp = SpaceTimeField(m.grid, tg, model.interaction.phi(u.values) + 0.0 * u.values)
        src = SpaceTimeField(m.grid, tg, spec.h.values[None, :] * amp.values)
        zero = Field(m.grid, np.zeros(m.grid.n_points))
        udot = solve_linear(LinearSourceSpec(V, src, zero))
        exp = corrector_fields(u, spec, amplitude=amp)
        R = SpaceTimeField(m.grid, tg, udot.values - exp.Z.values)
        lead = leading_term_check(exp, epsilon_margin)
        report.rows.append(
            {
                "K": spec.K,
                "k_max": spec.k_max,
                "n_steps": tg.n_steps,
                "residual_energy": residual_energy(R),
                "envelope": envelope(spec),
                "leading_bound": spec.weighted_sum(2),
                "lower_bound_value": lead["surrogate"],
                "L2_LK": lead["L2_L"],
                "ratio_IJ_over_L": lead["ratio_IJ_over_L"],
                "C_hat": lead["C_hat"],
            }
        )
    return report
