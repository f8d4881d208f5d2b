import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import cumulative_simpson, cumulative_trapezoid
from scipy.special import j0

from parallelgates.core import SliceSchedule, propagate, trace_fidelity
from parallelgates.deviation import quadrature_deviation, vanloan_deviation
from parallelgates.gates import SX, SY, ry, rz
from parallelgates.geometric import (
    BESSEL_ZERO,
    GeometricTrajectory,
    SynthesisError,
    analytic_ry_pi_amplitude,
    bessel_j0,
    bessel_j0_first_zero,
    bloch_components,
    chain_pulses,
    cross_integral_matrix,
    pair_norm_from_cross_integrals,
    primitive_pulse,
    robust_ry_pi_pulses,
    ry_pi_trajectories,
    trajectory_to_pulse,
)
from parallelgates.model import build_nv_chain, pair_space


def phase_distance(U, V):
    """min over global phase of ||U - e^{ia} V||_F."""
    ov = np.vdot(V, U)
    return float(np.linalg.norm(U - np.exp(1j * np.angle(ov)) * V))


def drive(pulse):
    return propagate(SliceSchedule(pulse.T, np.zeros((2, 2)), (SX / 2, SY / 2), pulse.amplitudes))


def test_bessel_zero():
    A = bessel_j0_first_zero()
    assert A == pytest.approx(2.404826, abs=1e-6)
    assert abs(bessel_j0(A)) <= 1e-10
    assert A == BESSEL_ZERO


@pytest.mark.parametrize("x", [0.0, 0.5, 1.7, 2.404825557695773, 4.2, 7.5])
def test_bessel_series_against_scipy(x):
    assert bessel_j0(x) == pytest.approx(j0(x), abs=1e-14)


def test_trajectory_endpoints_and_peak_rate():
    T = 2.0
    tk, tj = ry_pi_trajectories(T)
    for tr in (tk, tj):
        assert tr.theta[0] == 0.0 and tr.theta[-1] == np.pi
    rate = np.gradient(tk.theta, tk.t)
    assert rate[0] == pytest.approx((1 + BESSEL_ZERO) * np.pi / T, rel=1e-5)


def test_bloch_examples():
    t = np.linspace(0, 1, 3)
    p = bloch_components(GeometricTrajectory.ry(t, np.zeros(3)))
    assert np.allclose(p.as_array()[:, 0], [0, 0, 1])
    p = bloch_components(GeometricTrajectory.ry(t, np.full(3, np.pi / 2)))
    assert np.allclose(p.as_array()[:, 0], [-1, 0, 0])


def test_cross_integrals_bessel_pair():
    T = 1.5
    tk, tj = ry_pi_trajectories(T, 4097)
    C = cross_integral_matrix(bloch_components(tk), bloch_components(tj), T)
    assert np.max(np.abs(C)) <= 1e-8 * T


def test_cross_integrals_primitive_and_zero():
    T = 1.0
    t = np.linspace(0, T, 2049)
    tr = GeometricTrajectory.ry(t, np.pi * t / T)
    p = bloch_components(tr)
    C = cross_integral_matrix(p, p, T)
    assert C[2, 2] == pytest.approx(T / 2, rel=1e-10)
    zero = type(p)(0 * p.r_x, 0 * p.r_y, 0 * p.r_z)
    assert not np.any(cross_integral_matrix(p, zero, T))


def test_rectangular_trajectory_gives_constant_pulse():
    T = 1.0
    t = np.linspace(0, T, 1025)
    pulse = trajectory_to_pulse(GeometricTrajectory.ry(t, np.pi * t / T), 64)
    assert np.allclose(pulse.amplitudes[:, 1], np.pi / T, rtol=1e-12)
    assert np.allclose(pulse.amplitudes[:, 0], 0.0)


def test_robust_pulse_matches_analytic_amplitude():
    T = 1.0
    uk, uj = robust_ry_pi_pulses(T, 512, 1025)
    mid = (np.arange(512) + 0.5) * T / 512
    peak = (1 + BESSEL_ZERO) * np.pi / T
    for p, sign in ((uk, 1), (uj, -1)):
        err = np.abs(p.amplitudes[:, 1] - analytic_ry_pi_amplitude(mid, T, sign))
        assert err.max() <= 1e-4 * peak


def test_primitive_pulses():
    T = 2.0
    p = primitive_pulse("y", np.pi, T, 8)
    assert np.allclose(p.amplitudes[:, 1], np.pi / T) and not np.any(p.amplitudes[:, 0])
    p = primitive_pulse("x", np.pi / 2, T, 8)
    assert np.allclose(p.amplitudes[:, 0], np.pi / (2 * T))


def test_singular_trajectory_rejected():
    t = np.linspace(0, 1, 257)
    theta = 0.5 * np.pi * np.abs(1 - 2 * t)    # passes through the pole at t = 1/2
    gamma = t.copy()
    phi = -cumulative_trapezoid(np.cos(theta), t, initial=0.0)
    with pytest.raises(SynthesisError, match="128"):
        trajectory_to_pulse(GeometricTrajectory(t, theta, phi, gamma), 64)


def test_chain_alternation():
    ps = chain_pulses(5, 1.0, 64)
    assert ps[0] is ps[2] is ps[4]
    assert ps[1] is ps[3]
    assert not np.allclose(ps[0].amplitudes, ps[1].amplitudes)


def test_three_routes_agree_on_bessel_pair():
    # 2048 slices: the piecewise-constant residual scales as dt^4
    T = 1.0
    g = 0.1 * np.pi / T
    tk, tj = ry_pi_trajectories(T, 4097)
    C = cross_integral_matrix(bloch_components(tk), bloch_components(tj), T)
    f_closed = pair_norm_from_cross_integrals(C, g)
    uk, uj = trajectory_to_pulse(tk, 2048), trajectory_to_pulse(tj, 2048)
    pair = pair_space(build_nv_chain(2, g, T=T), 0, 1)
    f_vl = vanloan_deviation(pair, uk, uj).f_pair
    f_q = quadrature_deviation(pair, uk, uj, substeps=4).f_pair
    scale = (g * T) ** 2
    bound = 1e-12 * scale / 4 * 9
    assert f_closed <= bound and f_vl <= bound and f_q <= bound
    for a, b in ((f_closed, f_vl), (f_vl, f_q), (f_closed, f_q)):
        assert abs(a - b) <= 1e-7 * scale


def test_primitive_pair_norm_three_routes():
    T, g = 1.0, 0.05
    t = np.linspace(0, T, 4097)
    tr = GeometricTrajectory.ry(t, np.pi * t / T)
    p = bloch_components(tr)
    f_closed = pair_norm_from_cross_integrals(cross_integral_matrix(p, p, T), g)
    pulse = primitive_pulse("y", np.pi, T, 64)
    f_vl = vanloan_deviation(pair_space(build_nv_chain(2, g, T=T), 0, 1), pulse, pulse).f_pair
    assert f_closed == pytest.approx(g**2 * T**2 / 2, rel=1e-9)
    assert f_vl == pytest.approx(f_closed, rel=1e-9)


@st.composite
def smooth_trajectories(draw):
    a = draw(st.floats(min_value=0.2, max_value=1.0))
    b = draw(st.floats(min_value=-0.4, max_value=0.4))
    c = draw(st.floats(min_value=-1.5, max_value=1.5))
    T = draw(st.floats(min_value=0.5, max_value=3.0))
    t = np.linspace(0, T, 2049)
    s = t / T
    theta = np.pi * a * s + b * np.sin(np.pi * s) ** 2
    gamma = c * s * np.sin(np.pi * s) ** 2
    dgamma = np.gradient(gamma, t, edge_order=2)
    phi = -cumulative_simpson(dgamma * np.cos(theta), x=t, initial=0.0)
    return GeometricTrajectory(t, theta, phi, gamma)


@settings(max_examples=20, deadline=None)
@given(smooth_trajectories())
def test_round_trip_reproduces_euler_unitary(tr):
    V = rz(tr.phi[-1]) @ ry(tr.theta[-1]) @ rz(tr.gamma[-1])
    U = drive(trajectory_to_pulse(tr, 512))
    assert 1 - trace_fidelity(U, V) <= 1e-6
    assert phase_distance(U, V) <= 1e-5


@settings(max_examples=20, deadline=None)
@given(smooth_trajectories())
def test_bloch_normalization(tr):
    assert bloch_components(tr).norm_error() <= 1e-14
