import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bangbang.errors import DegenerateSupport, ResolutionExceeded
from bangbang.models import Control, InitialDatum, logistic_population, pure_heat
from bangbang.solver import LinearSourceSpec, SpaceTimeField, TimeGrid, solve_linear, solve_semilinear
from bangbang.spectral import Field, TorusGrid, diff_rows, forward_transform, row_integrals
from bangbang.twoscale import (
    PerturbationSpectrum,
    build_high_mode_perturbation,
    corrector_fields,
    corrector_profile,
    envelope,
    leading_term_check,
    residual_study,
)


def _low_mode_quadrature(h, grid, K):
    # direct Riemann sums of int h cos(kx), int h sin(kx) for k < K
    x = grid.nodes
    out = []
    for k in range(K):
        out.append(grid.spacing * np.sum(h * np.cos(k * x)))
        out.append(grid.spacing * np.sum(h * np.sin(k * x)))
    return np.abs(out)


def test_full_support_k1_removes_mean():
    g = TorusGrid(64)
    spec = build_high_mode_perturbation(np.ones(64, bool), 1, seed=0, grid=g)
    assert abs(forward_transform(spec.h).coefficients[0]) < 1e-14
    assert np.sum(spec.a**2 + spec.b**2) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("K", [4, 8, 16])
def test_half_circle_low_modes_vanish(K):
    g = TorusGrid(128)
    mask = g.nodes < np.pi
    spec = build_high_mode_perturbation(mask, K, seed=5, grid=g)
    h = spec.h.values
    assert _low_mode_quadrature(h, g, K).max() <= 1e-8
    assert np.all(h[~mask] == 0.0)
    assert abs(np.sum(spec.a**2 + spec.b**2) - 1.0) <= 1e-10
    assert np.any(h[mask] != 0.0)


def test_two_seeds_give_two_valid_spectra():
    g = TorusGrid(128)
    mask = np.cos(g.nodes) > 0
    s1 = build_high_mode_perturbation(mask, 8, seed=1, grid=g)
    s2 = build_high_mode_perturbation(mask, 8, seed=2, grid=g)
    assert not np.allclose(s1.h.values, s2.h.values)
    for s in (s1, s2):
        assert _low_mode_quadrature(s.h.values, g, 8).max() <= 1e-8
        assert np.all(s.h.values[~mask] == 0.0)


def test_deflated_high_modes():
    g = TorusGrid(256)
    mask = np.cos(g.nodes) > 0
    spec = build_high_mode_perturbation(mask, 8, seed=3, grid=g, k_max=64)
    assert spec.k_max <= 64 and spec.K == 8
    c = np.abs(forward_transform(spec.h).coefficients)
    assert c[:8].max() <= 1e-8 and c[65:].max() <= 1e-8


def test_degenerate_support():
    g = TorusGrid(64)
    small = np.zeros(64, bool)
    small[:10] = True
    with pytest.raises(DegenerateSupport):
        build_high_mode_perturbation(small, 4, seed=0, grid=g)
    with pytest.raises(DegenerateSupport):
        build_high_mode_perturbation(g.nodes < np.pi, 8, seed=0, grid=g, k_max=9)


def test_spectrum_normalization_checked():
    g = TorusGrid(16)
    a = np.zeros(9)
    a[3] = 0.5
    with pytest.raises(ValueError):
        PerturbationSpectrum(g, 3, a, np.zeros(9))
    s = PerturbationSpectrum.from_coefficients(g, a, np.zeros(9))
    assert s.K == 3 and s.a[3] == 1.0


def test_profile_limits():
    assert corrector_profile(0.0) == 0.0
    assert abs(corrector_profile(50.0) - 1.0) < 1e-20
    s = np.array([0.01, 0.049, 0.05, 0.2, 3.0])
    exact = np.array([float(1 - (1 + v) * np.exp(np.longdouble(-v))) for v in s.astype(np.longdouble)])
    assert np.allclose(corrector_profile(s), exact, rtol=1e-12, atol=1e-17)


def _constant_state(g, tg, value=1.0):
    return SpaceTimeField(g, tg, np.full((tg.n_steps + 1, g.n_points), value))


@pytest.mark.parametrize("k", [3, 7])
def test_single_mode_corrector_is_exact_for_constant_state(k):
    g = TorusGrid(64)
    tg = TimeGrid(1.0, 2000)
    exp = corrector_fields(_constant_state(g, tg), PerturbationSpectrum.single_mode(g, k))
    t = tg.times[:, None]
    eta = (1 - np.exp(-(k**2) * t)) * np.cos(k * g.nodes)[None, :] / k**2
    assert np.max(np.abs(exp.Z.values - eta)) < 1e-12
    assert np.all(exp.Z.values[0] == 0.0)
    # per-mode ODE through the solver
    src = SpaceTimeField(g, tg, np.broadcast_to(np.cos(k * g.nodes), (tg.n_steps + 1, 64)).copy())
    udot = solve_linear(LinearSourceSpec(SpaceTimeField.zeros(g, tg), src, Field(g, np.zeros(64))))
    assert np.max(np.abs(udot.values - exp.Z.values)) < 1e-8


def _logistic_state(n=128, n_steps=1000):
    g = TorusGrid(n)
    tg = TimeGrid(1.0, n_steps)
    m = Control.uniform(g, np.pi).m
    return solve_semilinear(logistic_population(), m, tg), m


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 2**31), K=st.integers(2, 12))
def test_derivative_splits_into_leading_and_lower_order(seed, K):
    u, _ = _logistic_state(128, 200)
    g = u.grid
    rng = np.random.default_rng(seed)
    a, b = np.zeros(65), np.zeros(65)
    a[K:40] = rng.standard_normal(40 - K)
    b[K:40] = rng.standard_normal(40 - K)
    spec = PerturbationSpectrum.from_coefficients(g, a, b, K=K)
    exp = corrector_fields(u, spec)
    dZ = diff_rows(exp.Z.values, g, 1)
    assert np.max(np.abs(dZ - (exp.L.values + exp.I.values + exp.J.values))) < 1e-8
    # Poincare-type inequality for W, which only carries modes >= K
    W2 = row_integrals(exp.W.values**2, g)
    Wx2 = row_integrals(diff_rows(exp.W.values, g, 1) ** 2, g)
    assert np.all(W2 <= Wx2 / K**2 * (1 + 1e-12) + 1e-300)


def test_corrector_rejects_unresolved_modes():
    g = TorusGrid(32)
    tg = TimeGrid(1.0, 10)
    with pytest.raises(ValueError):
        corrector_fields(_constant_state(g, tg), PerturbationSpectrum.single_mode(g, 12))


def test_leading_term_constant_state_exact():
    g = TorusGrid(64)
    tg = TimeGrid(1.0, 4000)
    k = 5
    rep = leading_term_check(corrector_fields(_constant_state(g, tg), PerturbationSpectrum.single_mode(g, k)), 0.0)
    # closed form: pi/k^2 * int_0^1 (1 - e^{-k^2 t})^2 dt
    s = k**2
    closed = np.pi / s * (1 - 2 * (1 - np.exp(-s)) / s + (1 - np.exp(-2 * s)) / (2 * s))
    assert rep["L2_L"] == pytest.approx(closed, rel=1e-5)
    assert rep["L2_L"] == pytest.approx(rep["surrogate"], rel=1e-12)
    assert rep["lower_bound_ok"]
    assert rep["L2_IJ"] == 0.0


def test_leading_term_zero_spectrum():
    g = TorusGrid(32)
    tg = TimeGrid(1.0, 10)
    spec = PerturbationSpectrum(g, 1, np.zeros(17), np.zeros(17))
    rep = leading_term_check(corrector_fields(_constant_state(g, tg), spec))
    for key in ("L2_L", "surrogate", "L2_IJ", "L2_Z", "S4"):
        assert rep[key] == 0.0


def test_lower_order_ratio_falls_with_frequency():
    # k = 4 -> 8 is still pre-asymptotic (factor about 2.8); start at 8
    u, _ = _logistic_state(128, 2000)
    reps = [leading_term_check(corrector_fields(u, PerturbationSpectrum.single_mode(u.grid, k))) for k in (8, 16, 32)]
    ratios = [r["ratio_IJ_over_L"] for r in reps]
    assert all(r0 / r1 >= 3 for r0, r1 in zip(ratios, ratios[1:]))
    assert all(r["lower_bound_ok"] for r in reps)


def test_envelope_is_order_k_minus_3_for_single_modes():
    g = TorusGrid(256)
    vals = [envelope(PerturbationSpectrum.single_mode(g, k)) for k in (4, 8, 16, 32, 64)]
    # S4/Y + Y S2 with S4 = k^-4, S2 = k^-2 is minimized at Y = 1/k, value 2/k^3
    for k, v in zip((4, 8, 16, 32, 64), vals):
        assert v == pytest.approx(2.0 / k**3, rel=1e-12)


def test_residual_degenerate_case():
    g = TorusGrid(64)
    model = pure_heat(u0=InitialDatum(1.0, 0.0, 1))
    specs = [PerturbationSpectrum.single_mode(g, k) for k in (2, 4, 8)]
    rep = residual_study(model, Field(g, np.zeros(64)), specs)
    assert np.all(rep.residual_energy < 1e-10)


def test_residual_resolution_guard():
    g = TorusGrid(64)
    with pytest.raises(ResolutionExceeded):
        residual_study(logistic_population(), Control.uniform(g, np.pi).m, [PerturbationSpectrum.single_mode(g, 8)], tgrid=TimeGrid(1.0, 100))


@pytest.fixture(scope="module")
def single_mode_report():
    g = TorusGrid(256)
    m = Control.uniform(g, np.pi).m
    return residual_study(logistic_population(), m, [PerturbationSpectrum.single_mode(g, k) for k in (4, 8, 16, 32)])


def test_residual_slope(single_mode_report):
    assert np.isfinite(single_mode_report.slope)
    assert single_mode_report.slope <= -2.5
    assert np.all(np.diff(single_mode_report.residual_energy) < 0)


def test_residual_times_k_cubed_within_factor_four(single_mode_report):
    rows = [r for r in single_mode_report.rows if r["K"] in (8, 16, 32)]
    scaled = np.array([r["residual_energy"] * r["K"] ** 3 for r in rows])
    assert scaled.max() / scaled.min() <= 4.0


def test_residual_decreases_with_multi_mode_tail():
    g = TorusGrid(128)
    m = Control.uniform(g, np.pi).m
    specs = []
    for K in (4, 8, 16):
        a = np.zeros(65)
        a[K:40] = 1.0 / np.arange(K, 40)
        specs.append(PerturbationSpectrum.from_coefficients(g, a, np.zeros(65), K=K))
    rep = residual_study(logistic_population(), m, specs)
    assert np.all(np.diff(rep.residual_energy) < 0)
    assert np.all(rep.residual_energy <= [r["envelope"] * 1e3 for r in rep.rows])


def test_residual_stays_under_k_cubed_envelope(single_mode_report):
    # one-sided form of the scaling law: the remainder decays at least like k^-3
    rows = [r for r in single_mode_report.rows if r["K"] in (8, 16, 32)]
    scaled = np.array([r["residual_energy"] * r["K"] ** 3 for r in rows])
    assert np.all(np.diff(scaled) < 0)
    assert np.all([r["residual_energy"] <= r["envelope"] for r in rows])
