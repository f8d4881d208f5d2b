import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from helpers import random_pair_model, random_pulses
from parallelgates.core import ValidationError, random_unitary, trace_fidelity
from parallelgates.evaluator import (
    block_fidelity,
    coupling_sweep,
    exact_fidelity,
    fit_decay,
    lattice_tiles,
    repeat_gate,
    repeat_unitary,
)
from parallelgates.gates import SY, SZ, named_gate
from parallelgates.geometric import chain_pulses
from parallelgates.grape import subsystem_fidelity
from parallelgates.model import DimensionCapExceeded, build_nv_chain, build_transmon_array, sample_transmon_params

TWO_PI = 2 * np.pi


def lorentzian_phase_gate(d, gamma):
    """Diagonal gate with wrapped-Cauchy phases: mean of z^M is exp(-gamma M) up to aliasing.

    A Moebius map of the shifted d-th roots of unity gives the phases; the
    trace fidelity of ``U^M`` then decays as ``exp(-2 gamma M)``.
    """
    rho = np.exp(-gamma)
    w = np.exp(2j * np.pi * (np.arange(d) + 0.5) / d)
    return np.diag((w + rho) / (1 + rho * w))


def transmon(q, g_hz=1.0e6, seed=0):
    return build_transmon_array(sample_transmon_params(q, TWO_PI * g_hz, seed))


def transmon_pulses(model, rng, n=6, T=40e-9):
    return random_pulses(model, rng, n, T=T, frac=0.05)


def test_factorized_evolution_is_perfect():
    T = 1.0
    m = build_nv_chain(2, 0.0, T=T)
    assert exact_fidelity(m, chain_pulses(2, T, 64, robust=False)) >= 1 - 1e-9


def test_nv_primitive_matches_fine_step_reference():
    # a constant pulse makes the Hamiltonian time independent: one dense expm is the reference
    T = 1.0
    g = 0.1 * np.pi / T
    m = build_nv_chain(2, g, T=T)
    ps = chain_pulses(2, T, 64, robust=False)
    F = exact_fidelity(m, ps)
    a = np.pi / T
    H = a / 2 * (np.kron(SY, np.eye(2)) + np.kron(np.eye(2), SY)) + g * np.kron(SZ, SZ)
    U = expm(-1j * H * T)
    ref = trace_fidelity(U, np.kron(named_gate("ry_pi", 1), named_gate("ry_pi", 1)))
    assert F < 1
    assert F == pytest.approx(ref, abs=1e-9)


def test_target_phase_invariance():
    rng = np.random.default_rng(0)
    m = random_pair_model(rng)
    ps = random_pulses(m, rng, 5)
    shifted = m.with_targets([np.exp(0.7j) * m.subsystems[0].target, m.subsystems[1].target])
    assert exact_fidelity(shifted, ps) == pytest.approx(exact_fidelity(m, ps), abs=1e-13)


def test_dimension_cap():
    m = build_nv_chain(4, 0.1)
    ps = chain_pulses(4, 1.0, 4)
    with pytest.raises(DimensionCapExceeded):
        exact_fidelity(m, ps, dim_cap=8)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_factorization_without_crosstalk(seed):
    rng = np.random.default_rng(seed)
    m = random_pair_model(rng, dims=[(2, 2), (2, 4), (4, 4)][seed % 3]).without_crosstalk()
    ps = random_pulses(m, rng, 6)
    prod = np.prod([subsystem_fidelity(s, p) for s, p in zip(m.subsystems, ps)])
    assert exact_fidelity(m, ps) == pytest.approx(prod, abs=1e-9)


def test_lattice_tiles():
    assert lattice_tiles(2) == [[0, 1, 2, 3]]
    assert len(lattice_tiles(10)) == 25
    tiles = lattice_tiles(3)
    assert [len(t) for t in tiles] == [4, 2, 2, 1]
    assert sorted(i for t in tiles for i in t) == list(range(9))
    with pytest.raises(ValidationError):
        lattice_tiles(0)


def test_block_q2_equals_exact():
    rng = np.random.default_rng(1)
    m = transmon(2)
    ps = transmon_pulses(m, rng)
    rep = block_fidelity(m, ps)
    assert rep.n_blocks == 1 and len(m.crosstalk) == 5
    assert rep.F4 == pytest.approx(exact_fidelity(m, ps), abs=1e-9)
    assert rep.F4_min == rep.F4_mean


def test_block_without_crosstalk_is_product():
    rng = np.random.default_rng(2)
    m = transmon(3).without_crosstalk()
    ps = transmon_pulses(m, rng)
    rep = block_fidelity(m, ps)
    for tile, f in zip(rep.tiles, rep.fidelities):
        prod = np.prod([subsystem_fidelity(m.subsystems[i], ps[i]) for i in tile])
        assert f == pytest.approx(prod, abs=1e-9)


def test_block_worker_independence():
    rng = np.random.default_rng(3)
    m = transmon(3)
    ps = transmon_pulses(m, rng)
    assert block_fidelity(m, ps, workers=1) == block_fidelity(m, ps, workers=3)


def test_block_requires_lattice():
    m = build_nv_chain(2, 0.1)
    with pytest.raises(ValidationError):
        block_fidelity(m, chain_pulses(2, 1.0, 4))


def test_perfect_gate_decay():
    s = repeat_unitary(np.eye(4), np.eye(4), [1, 2, 5, 10])
    assert s.F_values == (1.0,) * 4
    assert s.fit.eps_lin == 0.0 and s.fit.eps_exp == 0.0


def test_lorentzian_rate_recovered():
    gamma = 0.015
    s = repeat_unitary(lorentzian_phase_gate(512, gamma), np.eye(512), range(1, 51))
    assert s.fit.eps_exp == pytest.approx(2 * gamma, rel=0.05)


@settings(max_examples=10, deadline=None)
@given(st.floats(min_value=0.02, max_value=0.06))
def test_rate_is_additive_under_composition(gamma):
    U = lorentzian_phase_gate(256, gamma)
    a = repeat_unitary(U, np.eye(256), range(1, 11)).fit.eps_exp
    b = repeat_unitary(U, np.eye(256), range(2, 21, 2)).fit.eps_exp
    assert b == pytest.approx(a, rel=0.02)
    # the composed gate U^2 on M = 1..10 is the same series
    c = repeat_unitary(U @ U, np.eye(256), range(1, 11)).fit.eps_exp
    assert c == pytest.approx(2 * b, rel=1e-10)


def test_coherent_revival_reported_not_raised():
    U = expm(-0.5j * 0.4 * SY)
    s = repeat_unitary(U, np.eye(2), range(1, 20))
    assert s.violations


def test_fit_decay_examples():
    M = np.arange(1, 11)
    fit = fit_decay(M, 1 - 0.01 * M)
    assert fit.eps_lin == pytest.approx(0.01, rel=1e-12) and fit.res_lin < 1e-28
    fit = fit_decay(M, np.exp(-0.02 * M))
    assert fit.eps_exp == pytest.approx(0.02, rel=1e-12) and fit.res_exp < 1e-28
    fit = fit_decay([1, 2], [0.1, 0.01])
    assert np.isnan(fit.eps_exp)


def test_repeat_gate_against_target_power():
    rng = np.random.default_rng(4)
    m = random_pair_model(rng)
    ps = random_pulses(m, rng, 4)
    s = repeat_gate(m, ps, [1, 3])
    assert s.F_values[0] == pytest.approx(exact_fidelity(m, ps), abs=1e-12)
    with pytest.raises(ValidationError):
        repeat_gate(m, ps, [0, 1])


def nv_family(T):
    return lambda x, seed: build_nv_chain(2, x * np.pi / T, T=T)


def test_sweep_at_zero_coupling():
    T = 1.0
    res = coupling_sweep(nv_family(T), chain_pulses(2, T, 256), chain_pulses(2, T, 256, robust=False), [0.0])
    assert res.F_robust[0, 0] >= 1 - 1e-6 and res.F_primitive[0, 0] >= 1 - 1e-6


def test_sweep_csv_and_workers():
    T = 1.0
    args = (nv_family(T), chain_pulses(2, T, 64), chain_pulses(2, T, 64, robust=False), [0.05, 0.1])
    a = coupling_sweep(*args, seeds=(0, 1))
    b = coupling_sweep(*args, seeds=(0, 1), workers=2)
    assert a.to_csv() == b.to_csv()
    lines = a.to_csv("gT_over_pi").splitlines()
    assert lines[0].startswith("gT_over_pi,F_robust_mean") and len(lines) == 3
    assert np.all((a.F_robust >= 0) & (a.F_robust <= 1))
    with pytest.raises(ValidationError):
        coupling_sweep(*args, mode="tiles")


def test_infidelity_scaling_with_coupling():
    T = 1.0
    rob, prim = chain_pulses(2, T, 512), chain_pulses(2, T, 512, robust=False)
    xs = np.array([0.0125, 0.025, 0.05])
    res = coupling_sweep(nv_family(T), rob, prim, xs)
    ratio_p = (1 - res.F_primitive[:, 0]) / xs**2
    ratio_r = (1 - res.F_robust[:, 0]) / xs**2
    assert ratio_p.max() / ratio_p.min() < 1.1
    # first-order term cancelled: ratio keeps shrinking with g
    assert ratio_r[0] < ratio_r[1] < ratio_r[2] < 1e-2 * ratio_p.min()
