import numpy as np
import pytest
import scipy.linalg as la

from mwkeldysh import correspondence as cs
from mwkeldysh.core import BipartiteSystem, gibbs_weights, pauli, thermal_state
from mwkeldysh.dynamics import SwitchingProfile
from mwkeldysh.perturbative import golden_rule_rates

SX = pauli("x")


def _pair(lam):
    return BipartiteSystem(np.diag([0.0, 1.0]), np.diag([0.0, 0.8]), [(SX, SX)], lam)


def test_generating_rate_vanishes_at_zero_field():
    rates = np.array([[0, 0.3, 0.1], [0.2, 0, 0.4], [0.05, 0.6, 0]])
    assert cs.cgf_rate(rates, [0.0, 0.5, 1.2], [0.2, 0.3, 0.5], 0.0) == 0
    # first derivative is the mean energy flow into A
    x = 1e-6
    q, e = np.array([0.2, 0.3, 0.5]), np.array([0.0, 0.5, 1.2])
    slope = (cs.cgf_rate(rates, e, q, x) - cs.cgf_rate(rates, e, q, -x)) / (2j * x)
    assert slope.real == pytest.approx(np.einsum("a,ab,ab->", q, rates, e[None, :] - e[:, None]), rel=1e-8)


def test_rescaled_populations():
    e, beta, m = np.array([0.0, 0.4, 1.1]), 0.9, 3
    p = gibbs_weights(e, beta)
    assert np.allclose(cs.rescaled_populations(e, beta, m), p ** m / np.sum(p ** m), atol=1e-15)


def test_b_history_static():
    hb = np.diag([0.0, 0.8])
    hist = cs.b_history(hb, [SX], np.diag([0.6, 0.4]), 0.0, 2.0, 0.1)
    u = la.expm(-1j * 2.0 * hb)
    assert np.allclose(hist.ops[-1, 0], u.conj().T @ SX @ u, atol=1e-13)
    assert np.allclose(hist.means(), 0, atol=1e-14)
    c = hist.correlators(len(hist.times) - 1)
    assert c[-1, 0, 0] == pytest.approx(1.0)


def test_instantaneous_rates_match_lorentzian_golden_rule():
    # undriven thermal B under exponential switching: the damped integral is a Lorentzian line of the switching rate
    s, rate = _pair(0.1), 0.3
    t_full = 25 / rate
    rho_b = thermal_state(s.hB, 0.7)
    hist = cs.b_history(s.hB, [SX], rho_b, 0.0, t_full, 0.01)
    sw = SwitchingProfile("exponential", rate, t_full)
    g = cs.instantaneous_rates(s, hist, len(hist.times) - 1, lambda x: sw.envelope(x, t_full))
    gamma = golden_rule_rates(s, rate, "lorentzian").gamma
    expect = np.einsum("l,albm->ab", np.diag(rho_b).real, gamma)
    np.fill_diagonal(expect, 0.0)
    assert np.allclose(g, expect, rtol=1e-6)


def test_single_world_gives_zero_on_both_sides():
    rep = cs.check_correspondence(_pair(0.05), 1.0, 1, np.diag([1.0, 0.0]), with_oracle=True)
    assert rep.lhs == 0.0 and rep.rhs == 0.0
    with pytest.raises(ValueError):
        cs.check_correspondence(_pair(0.05), 1.0, 0, np.diag([1.0, 0.0]))


def test_period_averaged_correspondence():
    # the relation holds at order lambda^2, so the relative residual falls as lambda^2
    drive = lambda t: 0.3 * np.cos(1.1 * t) * SX  # noqa: E731
    rel = []
    for lam in (0.025, 0.0125):
        rep = cs.check_correspondence(_pair(lam), 1.0, 2, np.diag([1.0, 0.0]), drive,
                                      period=2 * np.pi / 1.1, points=8)
        assert len(rep.lhs_samples) == 8
        rel.append(rep.relative)
    assert rel[1] < 0.01
    assert 3.0 < rel[0] / rel[1] < 5.0
