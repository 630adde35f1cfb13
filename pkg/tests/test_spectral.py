import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpl.core import PowerLaw
from fpl.errors import DegenerateGeometryError, DomainError
from fpl.spectral import (ScalingScenario, angular_to_cycles, convergence_per_frequency, cycles_to_angular,
                          error_vs_n_scaling, first_principal_direction, fp_energy_sampled,
                          generalization_bound, nudft, nudft_vectors)
from fpl.splines import kernel_weights_from_stats


# ---------------------------------------------------------------------------
# principal direction
# ---------------------------------------------------------------------------


def test_principal_direction_trivial_cases():
    np.testing.assert_allclose(first_principal_direction([0.0, 1.0, 3.0]), [1.0])
    pts = np.column_stack([np.array([-2.0, 0.5, 1.0, 4.0]), np.zeros(4)])
    np.testing.assert_allclose(first_principal_direction(pts), [1.0, 0.0], atol=1e-15)


def test_principal_direction_anisotropic_cloud():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(1000, 2)) * np.array([3.0, 1.0])
    v = first_principal_direction(pts)
    # oracle: eigenvector of the sample covariance from the closed-form 2x2 solution
    C = np.cov(pts.T)
    theta = 0.5 * np.arctan2(2 * C[0, 1], C[0, 0] - C[1, 1])
    ref = np.array([np.cos(theta), np.sin(theta)])
    assert abs(abs(v @ ref) - 1) < 1e-10
    assert np.degrees(np.arccos(min(abs(v[0]), 1.0))) < 5.0


def test_principal_direction_errors():
    with pytest.raises(DegenerateGeometryError):
        first_principal_direction([[1.0, 2.0]])
    with pytest.raises(DegenerateGeometryError):
        first_principal_direction([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(2, 4))
def test_principal_direction_translation_invariant(seed, d):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, d)) * np.arange(1, d + 1)
    shift = rng.normal(size=d) * 10
    np.testing.assert_allclose(first_principal_direction(pts + shift), first_principal_direction(pts), atol=1e-10)


# ---------------------------------------------------------------------------
# NUDFT
# ---------------------------------------------------------------------------


def test_nudft_constant_values():
    p = np.random.default_rng(1).uniform(size=20)
    prof = nudft(p, np.full(20, -2.5), [1.0], [0.0, 1.0, 3.0])
    assert prof.amplitudes[0] == pytest.approx(2.5)
    assert np.all(prof.amplitudes <= 2.5 + 1e-12)


def test_nudft_cosine_peak():
    p = np.linspace(0, 1, 2001)
    vals = np.cos(2 * np.pi * 5 * p)
    k = np.arange(0, 11, dtype=float)
    prof = nudft(p, vals, [1.0], k)
    ref = np.array([abs(np.sum(vals * np.exp(-2j * np.pi * kk * p))) / p.size for kk in k])
    np.testing.assert_allclose(prof.amplitudes, ref, rtol=1e-10, atol=1e-14)
    assert prof.peak() == 5.0


def test_nudft_matches_standard_dft():
    N = 64
    p = np.arange(N) / N
    vals = np.random.default_rng(2).normal(size=N)
    prof = nudft(p, vals, [1.0], np.arange(N), rescale=False)
    np.testing.assert_allclose(prof.coefficients, np.fft.fft(vals) / N, rtol=1e-10, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_nudft_linear_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(15, 3))
    u, v = rng.normal(size=(2, 15))
    a, b = rng.normal(size=2)
    direction = first_principal_direction(pts)
    k = np.linspace(-4, 4, 17)
    Fu = nudft(pts, u, direction, k).coefficients
    Fv = nudft(pts, v, direction, k).coefficients
    Fw = nudft(pts, a * u + b * v, direction, k).coefficients
    ref = a * Fu + b * Fv
    assert np.max(np.abs(Fw - ref)) <= 1e-12 * max(np.max(np.abs(ref)), 1e-300) + 1e-15
    amps = nudft(pts, u, direction, k).amplitudes
    np.testing.assert_allclose(amps, amps[::-1], rtol=1e-12, atol=1e-14)


def test_nudft_rejects_non_unit_direction():
    with pytest.raises(DomainError):
        nudft(np.zeros((3, 2)) + np.arange(3)[:, None], np.ones(3), [1.0, 1.0], [0.0])


def test_parity_peaks_at_quarter_frequency():
    C = np.array(list(itertools.product([-1.0, 1.0], repeat=10)))
    y = np.prod(C, axis=1)
    k = np.linspace(-0.5, 0.5, 41)
    for axis in range(10):
        kv = np.zeros((k.size, 10))
        kv[:, axis] = k
        # every other coordinate at its own peak, scan this one
        others = [j for j in range(10) if j != axis]
        kv[:, others] = 0.25
        amp = np.abs(nudft_vectors(C, y, kv))
        top = k[amp >= amp.max() * (1 - 1e-12)]
        assert set(np.round(top, 12)) == {-0.25, 0.25}


def test_unit_conversions_roundtrip():
    assert cycles_to_angular(1.0) == pytest.approx(2 * np.pi)
    np.testing.assert_allclose(angular_to_cycles(cycles_to_angular([0.3, 5.0])), [0.3, 5.0])


# ---------------------------------------------------------------------------
# convergence tracking
# ---------------------------------------------------------------------------


def test_convergence_exact_prediction():
    p = np.linspace(0, 1, 50)
    f = np.sin(2 * np.pi * p) + np.cos(2 * np.pi * 3 * p)
    curves = convergence_per_frequency(np.tile(f, (4, 1)), f, p, [1.0], [1.0, 3.0])
    assert np.max(curves.delta) < 1e-14
    np.testing.assert_array_equal(curves.tau, [0.0, 0.0])


def test_convergence_diagonal_decay_oracle():
    # uniform grid on [0, 1): integer-k cosines are exactly orthogonal, so the
    # residual at peak k decays as exp(-lam_k t) with no cross-talk
    N = 128
    p = np.arange(N) / N
    peaks = np.array([1.0, 3.0, 7.0])
    lam = np.array([2.0, 0.5, 0.1])
    modes = np.cos(2 * np.pi * np.outer(peaks, p))
    target = modes.sum(axis=0)
    times = np.linspace(0, 40, 4001)
    preds = target[None, :] - np.exp(-np.outer(times, lam)) @ modes
    curves = convergence_per_frequency(preds, target, p, [1.0], peaks, times=times, rescale=False)
    np.testing.assert_allclose(curves.delta, np.exp(-np.outer(times, lam)), atol=1e-12)
    exact = np.log(5) / lam
    assert np.all(curves.tau >= exact) and np.all(curves.tau - exact <= times[1])
    assert np.all(np.diff(curves.tau) > 0)


def test_convergence_rejects_empty_peak():
    N = 64
    p = np.arange(N) / N
    f = np.cos(2 * np.pi * 2 * p)
    curves = convergence_per_frequency(np.zeros((2, N)), f, p, [1.0], [2.0, 5.0], rescale=False)
    assert curves.rejected == [5.0]
    assert curves.peaks.tolist() == [2.0]
    with pytest.raises(DomainError):
        convergence_per_frequency(np.zeros((2, N)), f, p, [1.0], [5.0], rescale=False)


def test_convergence_csv(tmp_path):
    p = np.linspace(0, 1, 10)
    f = np.cos(2 * np.pi * p)
    curves = convergence_per_frequency(np.zeros((3, 10)), f, p, [1.0], [1.0])
    curves.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,delta_k1.0" and len(lines) == 4


# ---------------------------------------------------------------------------
# sampled FP-energy
# ---------------------------------------------------------------------------


SPEC_B = PowerLaw(0.0, 1.0, 1)


def test_sampled_energy_zero_and_quadratic():
    x = np.arange(-2000, 2001) * 0.01
    assert fp_energy_sampled(np.zeros_like(x), 0.01, SPEC_B).value == 0.0
    f = np.exp(-x ** 2) * np.sin(2 * x)
    e1 = fp_energy_sampled(f, 0.01, SPEC_B).value
    e3 = fp_energy_sampled(3 * f, 0.01, SPEC_B).value
    assert e3 == pytest.approx(9 * e1, rel=1e-12)


def test_sampled_energy_tone_ratio():
    # gamma^-1 = xi^2, so a unit tone at k0 carries energy proportional to k0^2
    x = np.arange(-5000, 5001) * 0.01
    e1 = fp_energy_sampled(np.sin(x), 0.01, SPEC_B).value
    e5 = fp_energy_sampled(np.sin(5 * x), 0.01, SPEC_B).value
    assert e5 / e1 == pytest.approx(25.0, rel=0.10)


def test_sampled_energy_gaussian_closed_form():
    # E = int xi^2 |sqrt(pi) exp(-xi^2/4)|^2 dxi = pi * sqrt(2 pi)
    x = np.arange(-3000, 3001) * 0.01
    e = fp_energy_sampled(np.exp(-x ** 2), 0.01, SPEC_B, taper=0.2).value
    assert e == pytest.approx(np.pi * np.sqrt(2 * np.pi), rel=1e-3)


def test_sampled_energy_aliasing_warning():
    x = np.arange(0, 400) * 0.1
    rep = fp_energy_sampled(np.cos(0.95 * np.pi / 0.1 * x), 0.1, SPEC_B)
    assert rep.warnings and rep.nyquist_fraction > 0.05
    assert not fp_energy_sampled(np.sin(x), 0.1, SPEC_B).warnings


# ---------------------------------------------------------------------------
# bound and scaling
# ---------------------------------------------------------------------------


def test_bound_examples():
    assert generalization_bound(0.0, 10, 0.1).bound == 0.0
    rep = generalization_bound(1.0, 100, 0.05, 1.0, measured_mse=0.01)
    assert rep.bound == pytest.approx(0.1 * (2 + 4 * np.sqrt(2 * np.log(80))), rel=1e-14)
    assert abs(rep.bound - 1.383) < 2e-3  # 1.38417
    assert generalization_bound(2.0, 400, 0.1).bound * 2 == pytest.approx(generalization_bound(2.0, 100, 0.1).bound,
                                                                          rel=1e-15)
    assert json.loads(rep.to_json())["measured_mse"] == 0.01


@settings(max_examples=40, deadline=None)
@given(E=st.floats(0.01, 100), n=st.integers(1, 10 ** 6), d1=st.floats(0.001, 0.5), d2=st.floats(0.51, 0.999))
def test_bound_monotone(E, n, d1, d2):
    assert generalization_bound(E, n, d1).bound > generalization_bound(E, n, d2).bound
    assert generalization_bound(E, n, d1).bound > generalization_bound(E, n + 1, d1).bound


def test_bound_errors():
    for args in [(1.0, 0, 0.1), (1.0, 5, 0.0), (1.0, 5, 1.0), (-1.0, 5, 0.5)]:
        with pytest.raises(DomainError):
            generalization_bound(*args)
    with pytest.raises(DomainError):
        generalization_bound(1.0, 5, 0.5, C_gamma=0.0)


def _uniform_sampler(rng, n):
    return np.sort(rng.uniform(-3, 3, n))


def _scenario(target, C_gamma=1.0):
    grid = np.linspace(-2.5, 2.5, 501)
    return ScalingScenario(target=target, sampler=_uniform_sampler, kernel=kernel_weights_from_stats(1.0, 1.0, 1),
                           eval_points=grid, eval_weights=np.ones_like(grid), C_gamma=C_gamma)


def test_scaling_degenerate_target():
    rep = error_vs_n_scaling(_scenario(lambda x: np.zeros(np.shape(x)[0])), [4, 8, 16, 32], 10,
                             rng=np.random.default_rng(0))
    assert rep.degenerate and np.isnan(rep.slope)
    assert json.loads(rep.to_json())["slope"] is None


def test_scaling_c_gamma_does_not_change_errors():
    f = lambda x: np.sin(np.ravel(x))
    a = error_vs_n_scaling(_scenario(f), [4, 8, 16, 32], 10, rng=np.random.default_rng(3), bootstrap=50)
    b = error_vs_n_scaling(_scenario(f, C_gamma=2.0), [4, 8, 16, 32], 10, rng=np.random.default_rng(3),
                           bootstrap=50)
    np.testing.assert_array_equal(a.errors, b.errors)
    assert b.C_gamma == 2.0
    assert a.slope < 0


def test_scaling_requires_enough_sizes():
    with pytest.raises(DomainError):
        error_vs_n_scaling(_scenario(np.sin), [4, 8, 16], 10, rng=np.random.default_rng(0))
    with pytest.raises(DomainError):
        error_vs_n_scaling(_scenario(np.sin), [4, 8, 16, 32], 9, rng=np.random.default_rng(0))
