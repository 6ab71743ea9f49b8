import warnings

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings, strategies as st

from mwkeldysh.core import BipartiteSystem, gibbs_weights, pauli
from mwkeldysh.master import (BlochGenerator, DegenerateDominantWarning, DegenerateNullSpace, GapTooSmall,
                              RateGenerator, bloch_steady_state, build_generator, count_transfers, cumulants,
                              dominant_eigenvalue, fcs_distribution, keldysh_action, multiworld_flow_via_d0,
                              sandwich_superop, solve_bloch, solve_master, solve_memory_kernel, stationary_state)
from mwkeldysh.perturbative import RateTable, golden_rule_rates

SX = pauli("x")


def _two_state(a, b, chi=0.0):
    # 0 -> 1 at rate a (counted +1), 1 -> 0 at rate b
    return RateGenerator(np.array([[-a, b], [a * np.exp(1j * chi), -b]], dtype=complex), chi)


def _ladder(beta_a=1.0):
    # resonant A qubit against a B ladder with equal gaps; off-resonant pairs are far out in the line tails
    a = np.array([[0, 1.0], [1.0, 0]])
    b = np.array([[0, 1.0, 0.3], [1.0, 0, 0.8], [0.3, 0.8, 0]])
    s = BipartiteSystem(np.diag([0.0, 1.0]), np.diag([0.0, 1.0, 2.0]), [(a, b)], 0.1)
    return golden_rule_rates(s, 0.05), gibbs_weights([0, 1], beta_a)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 3), st.integers(2, 3))
def test_generator_columns_sum_to_zero(seed, da, db):
    rng = np.random.default_rng(seed)
    g = rng.uniform(size=(da, db, da, db))
    table = RateTable(g + g.transpose(2, 3, 0, 1), np.sort(rng.uniform(0, 2, da)), np.sort(rng.uniform(0, 2, db)), 0.1)
    for gen in (build_generator(table), build_generator(table, m=2),
                build_generator(table, pA=rng.dirichlet(np.ones(da)), m=1)):
        assert np.allclose(gen.matrix.sum(axis=0), 0, atol=1e-12)


def test_frozen_reservoir_thermalizes_b():
    rates, pa = _ladder(1.3)
    p = stationary_state(build_generator(rates, pA=pa))
    assert np.allclose(p, gibbs_weights([0, 1, 2], 1.3), atol=1e-12)


def test_two_state_relaxation():
    a, b, t = 0.8, 0.3, 1.7
    gen = _two_state(a, b)
    pinf = np.array([b, a]) / (a + b)
    assert np.allclose(stationary_state(gen), pinf)
    p0 = np.array([1.0, 0.0])
    assert np.allclose(solve_master(gen, p0, t), pinf + (p0 - pinf) * np.exp(-(a + b) * t), atol=1e-13)


def test_degenerate_null_space_detected():
    with pytest.raises(DegenerateNullSpace):
        stationary_state(RateGenerator(np.zeros((2, 2))))


@pytest.mark.parametrize("chi", [0.0, 0.4, -1.1, 0.3j])
def test_two_state_dominant_eigenvalue_closed_form(chi):
    a, b = 0.8, 0.3
    lam = (-(a + b) + np.sqrt((a - b) ** 2 + 4 * a * b * np.exp(1j * chi))) / 2
    assert dominant_eigenvalue(_two_state(a, b, chi)) == pytest.approx(-lam, abs=1e-13)


def test_degenerate_dominant_warns():
    with pytest.warns(DegenerateDominantWarning):
        assert dominant_eigenvalue(np.diag([-1.0, -1.0])) == pytest.approx(1.0)


def test_cumulants_and_distribution_match_jump_counting():
    a, b, window = 1.0, 0.5, 20.0
    p0 = np.array([b, a]) / (a + b)
    factory = lambda c: _two_state(a, b, c)  # noqa: E731
    transfer = np.array([[0, 1], [0, 0]])
    rates = np.array([[0, a], [b, 0]])
    qs, pq = count_transfers([(rates, transfer)], 1.0, p0, window, 80)
    mean = np.sum(qs * pq)
    var = np.sum(qs ** 2 * pq) - mean ** 2
    k = cumulants(factory, window, 2, p0=p0)
    assert k[0] == pytest.approx(mean, rel=1e-7)
    assert k[1] == pytest.approx(var, rel=1e-6)
    chis = np.linspace(-np.pi, np.pi, 257)
    dist = fcs_distribution(keldysh_action(factory, chis, window, p0=p0), 1.0, qs)
    # near chi = +-pi both modes share a real part, so the single-mode action is only asymptotic there
    assert np.abs(dist - pq).max() < 1e-7 * pq.max()
    assert np.sum(dist) == pytest.approx(1.0, abs=1e-10)
    assert dist.min() > -1e-7 * pq.max()


def test_keldysh_action_requires_gap():
    with pytest.raises(GapTooSmall):
        keldysh_action(lambda c: _two_state(0.1, 0.1, c), [0.0], 1.0)


def test_fluctuation_symmetry():
    # B exchanges energy with a frozen A reservoir at beta_a and a thermal pump at beta_b;
    # energy counted into A satisfies D0(chi) = D0(-chi + i (beta_a - beta_b))
    beta_a, beta_b = 1.5, 0.4
    rates, pa = _ladder(beta_a)
    up = np.exp(-beta_b)
    pump = np.array([[0, 0.2 * up, 0], [0.2, 0, 0.2 * up], [0, 0.2, 0]])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDominantWarning)
        for chi in (0.3, 1.0, -0.7):
            lhs = dominant_eigenvalue(build_generator(rates, chi, pA=pa, b_rates=pump))
            rhs = dominant_eigenvalue(build_generator(rates, -chi + 1j * (beta_a - beta_b), pA=pa, b_rates=pump))
            assert lhs == pytest.approx(rhs, abs=1e-10)


def test_bloch_amplitude_damping():
    g, w, t = 0.7, 1.3, 1.1
    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    n = lower.conj().T @ lower
    eye = np.eye(2)
    dis = g * (sandwich_superop(lower, lower.conj().T) - 0.5 * (sandwich_superop(n, eye) + sandwich_superop(eye, n)))
    gen = BlochGenerator(np.diag([0.0, w]), dis)
    assert np.allclose(bloch_steady_state(gen), np.diag([1.0, 0.0]), atol=1e-12)
    rho0 = np.full((2, 2), 0.5)
    r = solve_bloch(gen, rho0, t)
    assert r[1, 1].real == pytest.approx(0.5 * np.exp(-g * t))
    assert r[0, 1] == pytest.approx(0.5 * np.exp(-g * t / 2 + 1j * w * t))


def test_memory_kernel_against_augmented_system():
    kappa = 2.0
    l = _two_state(0.8, 0.3).matrix.real
    p0 = np.array([1.0, 0.0])
    # q = int K p obeys dq/dt = L p - kappa q for K(tau) = L exp(-kappa tau)
    aug = np.block([[np.zeros((2, 2)), np.eye(2)], [l, -kappa * np.eye(2)]])
    exact = (la.expm(aug * 3.0) @ np.concatenate([p0, np.zeros(2)]))[:2]
    approx = [solve_memory_kernel(lambda s: l * np.exp(-kappa * s), p0, 3.0, dt).real for dt in (0.02, 0.01)]
    assert np.abs(approx[1] - exact).max() < 1e-4
    assert 3.0 < np.abs(approx[0] - exact).max() / np.abs(approx[1] - exact).max() < 5.0


def test_multiworld_flow_via_d0_reductions():
    rates, pa = _ladder(1.0)
    assert abs(multiworld_flow_via_d0(build_generator(rates, pA=pa, m=1)).flow) < 1e-12
    loss = rates.gamma[0].sum(axis=(1, 2))  # leaving the A ground state, per B level
    for m in (2, 3):
        gen = build_generator(rates, pA=[1.0, 0.0], m=m)
        assert multiworld_flow_via_d0(gen).flow == pytest.approx(-m * loss.min(), rel=1e-10)
