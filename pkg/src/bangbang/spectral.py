"""Fourier calculus on the one-dimensional torus [0, 2*pi).

Fields are sampled on a uniform collocation grid with an even number of
points. Spectra use the real-FFT layout: coefficient ``c[k]`` for
``k = 0 .. n/2`` is ``(1/n) * sum_j f_j exp(-i k x_j)``, so that a sampled
``cos(3x)`` has ``a_3 = 1`` and a constant field ``1`` has ``c_0 = 1``.
Negative wavenumbers are implied by conjugate symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TorusGrid:
    n_points: int

    def __post_init__(self):
        n = self.n_points
        if int(n) != n or n < 8 or n % 2:
            raise ValueError(f"n_points must be an even integer >= 8, got {n!r}")

    @property
    def spacing(self) -> float:
        return TWO_PI / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return self.spacing * np.arange(self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Non-negative wavenumbers ``0 .. n/2`` matching the rfft layout."""
        return np.arange(self.n_points // 2 + 1, dtype=float)

    @property
    def dealias_mask(self) -> np.ndarray:
        """Modes kept by the 2/3 rule (``k < n/3``)."""
        return self.wavenumbers < self.n_points / 3.0

    def field(self, values) -> "Field":
        return Field(self, values)

    def sample(self, func) -> "Field":
        return Field(self, func(self.nodes))


@dataclass(frozen=True)
class Field:
    """Real function on the torus, stored by its nodal values."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_points,):
            raise ValueError(
                f"expected {self.grid.n_points} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return Field(self.grid, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)


def _vals(x):
    return x.values if isinstance(x, Field) else x


@dataclass(frozen=True)
class SpectrumField:
    grid: TorusGrid
    coefficients: np.ndarray = field(repr=False)

    @property
    def a(self) -> np.ndarray:
        """Cosine amplitudes; ``a[0]`` is the mean, Nyquist is not doubled."""
        a = 2.0 * self.coefficients.real
        a[0] = self.coefficients[0].real
        a[-1] = self.coefficients[-1].real
        return a

    @property
    def b(self) -> np.ndarray:
        b = -2.0 * self.coefficients.imag
        b[0] = 0.0
        b[-1] = 0.0
        return b

    def full(self) -> np.ndarray:
        """Complex coefficients for ``k = -n/2 .. n/2 - 1``."""
        n = self.grid.n_points
        c = self.coefficients
        neg = np.conj(c[1 : n // 2][::-1])
        return np.concatenate([[c[n // 2]], neg, c[: n // 2]])


def forward_transform(f: Field) -> SpectrumField:
    coef = np.fft.rfft(f.values) / f.grid.n_points
    return SpectrumField(f.grid, coef)


def inverse_transform(s: SpectrumField) -> Field:
    n = s.grid.n_points
    return Field(s.grid, np.fft.irfft(s.coefficients * n, n=n))


def from_cos_sin(grid: TorusGrid, a, b) -> SpectrumField:
    """Build a spectrum from real amplitude arrays indexed by wavenumber."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    coef = 0.5 * (a - 1j * b)
    coef[0] = a[0]
    coef[-1] = a[-1]
    return SpectrumField(grid, coef)


def derivative_multiplier(grid: TorusGrid, order: int) -> np.ndarray:
    k = grid.wavenumbers
    if order == 1:
        mult = 1j * k
        # odd derivative of the Nyquist mode is not representable
        mult[-1] = 0.0
        return mult
    if order == 2:
        return -(k**2) + 0j
    raise ValueError(f"order must be 1 or 2, got {order!r}")


def spatial_derivative(f: Field, order: int = 1) -> Field:
    mult = derivative_multiplier(f.grid, order)
    n = f.grid.n_points
    return Field(f.grid, np.fft.irfft(np.fft.rfft(f.values) * mult, n=n))


def diff_rows(values: np.ndarray, grid: TorusGrid, order: int = 1) -> np.ndarray:
    """Spectral derivative along the last axis of a stack of snapshots."""
    mult = derivative_multiplier(grid, order)
    return np.fft.irfft(np.fft.rfft(values, axis=-1) * mult, n=grid.n_points, axis=-1)


def dealias_rows(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Zero every mode with ``k >= n/3`` along the last axis."""
    spec = np.fft.rfft(values, axis=-1)
    spec[..., ~grid.dealias_mask] = 0.0
    return np.fft.irfft(spec, n=grid.n_points, axis=-1)


def dealias(f: Field) -> Field:
    return Field(f.grid, dealias_rows(f.values, f.grid))


def dealiased_product(f: Field, g: Field) -> Field:
    """Product of two fields under the 2/3 rule.

    Both factors are truncated to ``k < n/3`` before the pointwise product and
    the product is truncated again; aliases of the truncated product land at
    ``|k| >= n/3`` and are discarded, so the retained modes are exact.
    """
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    grid = f.grid
    prod = dealias_rows(f.values, grid) * dealias_rows(g.values, grid)
    return Field(grid, dealias_rows(prod, grid))


def integral(f: Field) -> float:
    return float(f.grid.spacing * np.sum(f.values))


def l2_norm_sq(f: Field) -> float:
    return float(f.grid.spacing * np.sum(f.values**2))


def h1_seminorm_sq(f: Field) -> float:
    s = forward_transform(f)
    k = f.grid.wavenumbers[:-1]
    a, b = s.a[:-1], s.b[:-1]
    return float(np.pi * np.sum(k**2 * (a**2 + b**2)))


def parseval_l2(s: SpectrumField) -> float:
    """L2 norm squared from the spectrum, Nyquist mode weighted as sampled."""
    a, b = s.a, s.b
    return float(
        TWO_PI * a[0] ** 2
        + np.pi * np.sum(a[1:-1] ** 2 + b[1:-1] ** 2)
        + TWO_PI * a[-1] ** 2
    )


def row_integrals(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Rectangle-rule integral of every snapshot in a stack."""
    return grid.spacing * np.sum(values, axis=-1)


def random_direction(grid: TorusGrid, rng: np.random.Generator, n_modes: int = 8) -> Field:
    """Smooth trigonometric polynomial with random amplitudes decaying like 1/(1+k)."""
    k = np.arange(n_modes + 1)
    c = rng.standard_normal(k.size) / (1.0 + k)
    s = rng.standard_normal(k.size) / (1.0 + k)
    x = grid.nodes[:, None]
    return Field(grid, (c * np.cos(k * x) + s * np.sin(k * x)).sum(axis=1))
