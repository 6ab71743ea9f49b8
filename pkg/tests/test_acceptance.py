"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest

from mwkeldysh import correspondence as cs
from mwkeldysh import kms, master as ms, qhe
from mwkeldysh.core import (BipartiteSystem, conserved_measure_k, gibbs_weights, offdiagonal_in_eigenbasis,
                            pauli, random_density_matrix, random_hermitian)
from mwkeldysh.dynamics import EvolutionJob, SwitchingProfile, log_derivatives, oracle_renyi_flow
from mwkeldysh.perturbative import (flow_2nd_shannon, flow_2nd_states, flow_4th_order, fourth_order_amplitudes,
                                    golden_rule_rates)

from conftest import report

SX = pauli("x")


def test_acceptance_01_conservation_suite():
    rng = np.random.default_rng(20)
    worst_s, worst_k = 0.0, 0.0
    start = time.perf_counter()
    for _ in range(20):
        da, db = int(rng.integers(2, 5)), int(rng.integers(2, 7))
        ha, hb = random_hermitian(da, rng), random_hermitian(db, rng)
        a = offdiagonal_in_eigenbasis(random_hermitian(da, rng), ha)
        b = offdiagonal_in_eigenbasis(random_hermitian(db, rng), hb)
        s = BipartiteSystem(ha, hb, [(a, b)], lam=0.0)
        job = EvolutionJob(s, random_density_matrix(da * db, rng), 0.0, 1.0, 0.01)
        for m in (2, 3):
            worst_s = max(worst_s, abs(oracle_renyi_flow(job, m, probe_times=[0.5]).flow))
        (kslope, _), = log_derivatives(job, lambda r: abs(conserved_measure_k(r, s.dims)), [0.5], check=False)
        worst_k = max(worst_k, abs(kslope))
    elapsed = time.perf_counter() - start
    ok = worst_s < 1e-9 and worst_k < 1e-9 and elapsed < 60
    report(1, ok, f"max |dlnS_M/dt| = {worst_s:.2e}, max |dlnK/dt| = {worst_k:.2e}, {elapsed:.1f} s")
    assert ok


def _zero_t_model(lam):
    rng = np.random.default_rng(1)
    ha = np.diag([0.0, 1.0])
    eb = np.sort(rng.uniform(0, 3, 6))
    hb = np.diag(eb)
    b = offdiagonal_in_eigenbasis(random_hermitian(6, rng), hb)
    pb = rng.uniform(size=6)
    pb /= pb.sum()
    return BipartiteSystem(ha, hb, [(SX, b)], lam), pb


def test_acceptance_02_zero_temperature_second_order():
    rate, m = 0.2, 2
    errs = []
    start = time.perf_counter()
    for lam in (0.02, 0.01):
        s, pb = _zero_t_model(lam)
        job = EvolutionJob(s, np.kron(np.diag([1.0, 0.0]), np.diag(pb)), 0.0, 25 / rate, 0.01,
                           SwitchingProfile("exponential", rate))
        oracle = oracle_renyi_flow(job, m).flow
        # escape rate out of the ground state, Lorentzian line of width = switching rate
        g0 = golden_rule_rates(s, rate, "lorentzian").a_to_b(pb)[0].sum()
        errs.append(abs(oracle + m * g0) / abs(m * g0))
    ratio = errs[0] / errs[1]
    elapsed = time.perf_counter() - start
    ok = errs[1] < 0.05 and 3 <= ratio <= 5 and elapsed < 120
    report(2, ok, f"rel err {errs[1]:.2e} at lambda=0.01, halving ratio {ratio:.2f}, {elapsed:.1f} s")
    assert ok


def test_acceptance_03_equilibrium_null():
    # A has a degenerate excited pair, B is resonant with the A gap
    ha, hb = np.diag([0.0, 1.0, 1.0]), np.diag([0.0, 1.0])
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1.0
    a[0, 2] = a[2, 0] = 0.6
    s = BipartiteSystem(ha, hb, [(a, SX)], 0.1)
    beta, eta = 1.3, 0.05
    rates = golden_rule_rates(s, eta)
    pa, pb = gibbs_weights([0, 1, 1], beta), gibbs_weights([0, 1], beta)
    scale = rates.gamma.max()
    worst = max(abs(flow_2nd_states(rates, pa, pb, m).flow) for m in (2, 3, 4))
    # amplitudes that enter the flow: pairs with E_a = E_b
    same = np.abs(np.diag(ha)[:, None] - np.diag(ha)[None, :]) < 1e-12
    amp = np.abs(fourth_order_amplitudes(s, pa, pb, eta)[same]).max()
    # the same amplitudes with B held away from equilibrium set the nonzero scale
    amp_off = np.abs(fourth_order_amplitudes(s, pa, np.array([0.5, 0.5]), eta)[same]).max()
    ok = worst < 1e-3 * scale and amp < 1e-10 * amp_off
    report(3, ok, f"max |F_M| / Gamma = {worst / scale:.2e}, |A_ab| = {amp:.2e} vs {amp_off:.2e} off equilibrium")
    assert ok


def test_acceptance_04_textbook_relation():
    rng = np.random.default_rng(4)
    ha, hb = np.diag([0.0, 0.8, 1.9]), np.diag([0.0, 0.5, 1.1, 2.0])
    a = offdiagonal_in_eigenbasis(random_hermitian(3, rng), ha)
    b = offdiagonal_in_eigenbasis(random_hermitian(4, rng), hb)
    rates = golden_rule_rates(BipartiteSystem(ha, hb, [(a, b)], 0.1), 0.4)
    worst = 0.0
    for beta in (0.3, 1.0, 3.0):
        pb = rng.dirichlet(np.ones(4))
        rep = flow_2nd_shannon(rates, gibbs_weights([0, 0.8, 1.9], beta), pb, beta)
        de = rep.breakdown["dE_dt"]
        worst = max(worst, abs(rep.flow - beta * de) / abs(de))
    ok = worst < 1e-10
    report(4, ok, f"max |dS/dt - beta dE/dt| / |dE/dt| = {worst:.2e}")
    assert ok


def test_acceptance_05_generalized_kms():
    rng = np.random.default_rng(3)
    worst = 0.0
    w = np.linspace(-4, 4, 401)
    w = w[w != 0]
    for d in (4, 6):
        h = random_hermitian(d, rng)
        sp = kms.SpectralData(h, 0.7, [random_hermitian(d, rng) for _ in range(2)], 0.05)
        for m in (2, 3):
            for n in range(m + 1):
                worst = max(worst, kms.check_kms_multi(sp, w, n, m)["residual"])
    ok = worst < 1e-8
    report(5, ok, f"max relative KMS residual = {worst:.2e}")
    assert ok


def test_acceptance_06_free_energy_identity():
    rng = np.random.default_rng(6)
    h = random_hermitian(6, rng)
    worst = max(kms.renyi_free_energy_identity(h, b, m)["residual"] for b in (0.1, 1.0, 10.0) for m in (2, 3, 5))
    ok = worst < 1e-12
    report(6, ok, f"max residual = {worst:.2e}")
    assert ok


def _fcs_model():
    rng = np.random.default_rng(1)
    ha, hb = np.diag([0.0, 1.0]), np.diag([0.0, 1.0, 2.0])
    a = offdiagonal_in_eigenbasis(random_hermitian(2, rng), ha)
    b = offdiagonal_in_eigenbasis(random_hermitian(3, rng), hb)
    rates = golden_rule_rates(BipartiteSystem(ha, hb, [(a, b)], lam=0.2), 0.3)
    ar = np.array([[0, 0.01], [0.05, 0]])
    br = np.array([[0, 0.05, 0.01], [0.01, 0, 0.05], [0.01, 0.01, 0]])
    return rates, ar, br


def test_acceptance_07_tilted_generator_fcs():
    rates, ar, br = _fcs_model()

    def fac(c):
        return ms.build_generator(rates, c, a_rates=ar, b_rates=br)

    # the bare energy-conserving chain is reducible, so its zero mode is degenerate
    with pytest.warns(ms.DegenerateDominantWarning):
        d0_bare = abs(ms.dominant_eigenvalue(ms.build_generator(rates)))
    d0 = max(abs(ms.dominant_eigenvalue(fac(0.0))), d0_bare)
    p0 = ms.stationary_state(fac(0.0))
    window = 10 / ms.spectral_gap(fac(0.0))
    k1, k2 = ms.cumulants(fac, window, 2, p0=p0)
    # explicit counting of every energy quantum exchanged with B
    channels = [(rates.composite(), ms.a_energy_transfer(rates)), (np.kron(ar, np.eye(3)), None),
                (np.kron(np.eye(2), br), None)]
    qs, pq = ms.count_transfers(channels, 1.0, p0, window, 40)
    m1 = float(np.sum(qs * pq))
    m2 = float(np.sum((qs - m1) ** 2 * pq))
    e1, e2 = abs(k1 / m1 - 1), abs(k2 / m2 - 1)
    ok = d0 < 1e-12 and e1 < 0.01 and e2 < 0.01
    report(7, ok, f"|D0(0)| = {d0:.1e}, cumulant rel errors {e1:.1e}, {e2:.1e}")
    assert ok


def test_acceptance_08_d0_route_vs_oracle():
    rate, m, lam = 0.2, 2, 0.02
    s = BipartiteSystem(np.diag([0.0, 1.0]), np.diag([0.0, 1.1]), [(SX, SX)], lam)
    pa = np.array([0.8, 0.2])
    gen = ms.build_generator(golden_rule_rates(s, rate, "lorentzian"), m=m, pA=pa)
    e, v = np.linalg.eig(gen.single_world)
    pb = np.abs(v[:, np.argmax(e.real)].real)
    pb /= pb.sum()
    d0_flow = ms.multiworld_flow_via_d0(gen).flow
    job = EvolutionJob(s, np.kron(np.diag(pa), np.diag(pb)), 0.0, 25 / rate, 0.01,
                       SwitchingProfile("exponential", rate))
    oracle = oracle_renyi_flow(job, m).flow
    rel = abs(d0_flow / oracle - 1)
    ok = rel < 0.05
    report(8, ok, f"F_M = -D0 = {d0_flow:.4e}, oracle {oracle:.4e}, rel diff {rel:.1e}")
    assert ok


def _driven_pair(lam):
    return BipartiteSystem(np.diag([0.0, 1.0]), np.diag([0.0, 0.8]), [(SX, SX)], lam)


def test_acceptance_09_correspondence():
    drive = lambda t: 0.3 * np.cos(1.1 * t) * SX  # noqa: E731
    rho_b = np.diag([1.0, 0.0])
    rel = {}
    for m in (2, 3):
        for lam in (0.05, 0.025):
            rel[m, lam] = cs.check_correspondence(_driven_pair(lam), 1.0, m, rho_b, drive).relative
    shrinking = all(rel[m, 0.025] < 0.5 * rel[m, 0.05] for m in (2, 3))
    # classical limit: B operators proportional to the identity along a prescribed trajectory
    s = _driven_pair(0.05)
    times = np.linspace(0.0, 20.0, 2001)
    ops = (0.4 * np.cos(0.9 * times) + 0.1)[:, None, None, None] * np.eye(2)[None, None]
    hist = cs.BHistory(times, ops, np.diag([0.3, 0.7]))
    env = SwitchingProfile("exponential", 0.5, 20.0)
    envelope = lambda x: env.envelope(x, 20.0)  # noqa: E731
    gi = cs.instantaneous_rates(s, hist, len(times) - 1, envelope)
    gc = cs.instantaneous_rates(s, hist, len(times) - 1, envelope, coherent=True)
    e = s.eig_A()[0]
    q = cs.rescaled_populations(e, 1.0, 2)
    fi, fc = cs.cgf_rate(gi, e, q, 1j), cs.cgf_rate(gc, e, q, 1j)
    classical = abs(fi - fc)
    ok = all(rel[m, 0.05] < 0.05 for m in (2, 3)) and shrinking and classical < 1e-10
    report(9, ok, "rel residual " + ", ".join(f"M={m} lambda={l}: {v:.2e}" for (m, l), v in sorted(rel.items()))
           + f"; classical |f_i - f_c| = {classical:.1e}")
    assert ok


def test_acceptance_10_qhe():
    up = [False, True, True]
    energies = [0.0, 1.0, 1.2]
    x_ops = [np.array([[0, 1, 0.5], [1, 0, 0], [0.5, 0, 0]])]
    # undriven engine relaxes to a diagonal state
    hot = qhe.Environment.from_modes(x_ops, [0.05], up, 1.5)
    cold = qhe.Environment.from_modes(x_ops, [0.05], up, 0.2)
    probe = qhe.Environment.from_modes(x_ops, [0.0005], up, 0.4, probe=True)
    spec = qhe.QheSpec(energies, up, 1.1, np.zeros((3, 3)), [hot, cold, probe])
    rho = qhe.steady_state(spec)
    diag_qc = qhe.q_coherent(spec, np.diag(np.diag(rho)))
    # M -> 1 prefactor against (M - 1)/T
    t, om = 0.4, 1.1
    dm = 1e-7
    pre_err = abs(qhe.flow_prefactor(1 + dm, om / t, om) / (dm / t) - 1)
    # low temperature form on a driven engine, beta omega > 20
    drive = np.zeros((3, 3))
    drive[1, 0] = 0.05
    cold_probe = qhe.Environment.from_modes(x_ops, [0.0005], up, om / 25, probe=True)
    dspec = qhe.QheSpec(energies, up, om, drive, [hot, cold, cold_probe])
    drho = qhe.steady_state(dspec)
    rep = qhe.qhe_flows(dspec, drho, 3)
    low_err = abs(rep.flow / rep.breakdown["F_M_low_T"] - 1)
    ok = diag_qc == 0.0 and pre_err < 1e-6 and low_err < 0.01
    report(10, ok, f"diagonal Q_c = {diag_qc}, prefactor limit err {pre_err:.1e}, low-T err {low_err:.1e}")
    assert ok


def test_acceptance_11_fourth_order_shannon_trend():
    ha, hb = np.diag([0.0, 1.0, 1.0]), np.diag([0.0, 1.0])
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1.0
    a[0, 2] = a[2, 0] = 0.6
    s = BipartiteSystem(ha, hb, [(a, SX)], 1.0)
    pb = np.array([0.6, 0.4])  # driven bath held away from equilibrium
    mags = [abs(flow_4th_order(s, gibbs_weights([0, 1, 1], b), pb, 2, 0.05).breakdown["shannon_dS_dt"])
            for b in (1, 2, 4, 8)]
    ok = all(x < y for x, y in zip(mags, mags[1:]))
    report(11, ok, "|dS/dt| at beta 1, 2, 4, 8: " + ", ".join(f"{x:.3e}" for x in mags))
    assert ok
