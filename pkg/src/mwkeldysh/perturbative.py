"""Second- and fourth-order Renyi/Shannon flows.

Conventions: a, b label eigenstates of H_A, alpha, beta those of H_B;
probabilities are diagonal ensembles in these bases. Energy deltas are
broadened with width ``eta``, Gaussian by default. ``"lorentzian"``
broadening of width ``eta`` is what an exponentially switched coupling
at rate ``eta`` produces, so it is the one to use against the exact
evolution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la
from scipy.integrate import simpson

from .core import BipartiteSystem, FlowReport, hermitian


class NonStationaryState(ValueError):
    pass


class NonConvergentExtrapolation(RuntimeError):
    pass


def delta(x, eta: float, broadening: str = "gaussian"):
    """Normalized broadened delta function of width ``eta``."""
    x = np.asarray(x, dtype=float)
    if broadening == "gaussian":
        return np.exp(-0.5 * (x / eta) ** 2) / (np.sqrt(2 * np.pi) * eta)
    if broadening == "lorentzian":
        return (eta / np.pi) / (x * x + eta * eta)
    raise ValueError(f"unknown broadening {broadening!r}")


def principal_value(x, eta: float):
    x = np.asarray(x, dtype=float)
    return x / (x * x + eta * eta)


def joint_eigenbasis(h: np.ndarray, r: np.ndarray, tol: float = 1e-10):
    """Energies, populations and basis diagonalizing both h and a commuting state r."""
    h, r = hermitian(h), np.asarray(r, dtype=complex)
    if np.max(np.abs(h @ r - r @ h)) > tol * max(1.0, np.max(np.abs(h))):
        raise NonStationaryState("state does not commute with its Hamiltonian")
    e, v = la.eigh(h)
    rr = v.conj().T @ r @ v
    scale = max(1.0, np.max(np.abs(e)))
    i = 0
    while i < len(e):
        j = i + 1
        while j < len(e) and abs(e[j] - e[i]) <= 1e-10 * scale:
            j += 1
        if j - i > 1:
            _, w = la.eigh(rr[i:j, i:j])
            v[:, i:j] = v[:, i:j] @ w
        i = j
    p = np.real(np.diag(v.conj().T @ r @ v))
    return e, p, v


@dataclass
class Correlator:
    """Two-operator correlator in spectral form.

    values(tau)[i, j] = sum_k weights[i, j, k] exp(i freqs[k] tau).
    ``kind`` is "C" for bath correlators and "K" for multi-world ones
    (then ``n``, ``m`` are the world indices).
    """

    weights: np.ndarray
    freqs: np.ndarray
    kind: str = "C"
    n: int = 0
    m: int = 1

    def at(self, taus) -> np.ndarray:
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        ph = np.exp(1j * np.outer(self.freqs, taus))
        return np.einsum("ijk,kt->ijt", self.weights, ph)

    def spectrum(self, omegas, eta: float, broadening: str = "gaussian") -> np.ndarray:
        """Fourier transform int dtau e^{i omega tau} values(tau): peaks at omega = -freq."""
        omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
        d = 2 * np.pi * delta(omegas[None, :] + self.freqs[:, None], eta, broadening)
        return np.einsum("ijk,kw->ijw", self.weights, d)


def bath_correlator(state, b_ops: Sequence[np.ndarray], hB) -> Correlator:
    """C_ij(tau) = Tr[B_i(tau) B_j(0) R_B] for a state stationary under hB."""
    e, p, v = joint_eigenbasis(hB, state)
    bs = np.array([v.conj().T @ hermitian(b) @ v for b in b_ops])
    # indices al (left), be: B_i[al, be] B_j[be, al] p_al exp(i (E_al - E_be) tau)
    w = np.einsum("ixy,jyx,x->ijxy", bs, bs, p)
    freqs = (e[:, None] - e[None, :]).ravel()
    return Correlator(w.reshape(len(bs), len(bs), -1), freqs, "C")


def multiworld_correlator(stateA, a_ops: Sequence[np.ndarray], hA, n: int, m: int) -> Correlator:
    """K^{N,M}_ij(tau) = Tr[A_i(t1) R^N A_j(t2) R^{M-N}] / Tr[R^M], tau = t1 - t2."""
    if not 0 <= n <= m:
        raise ValueError("need 0 <= n <= m")
    e, p, v = joint_eigenbasis(hA, stateA)
    s_m = np.sum(p ** m)
    As = np.array([v.conj().T @ hermitian(a) @ v for a in a_ops])
    # A_i[x, y] R_y^N A_j[y, x] R_x^{M-N}, phase exp(i (E_x - E_y) tau)
    w = np.einsum("ixy,jyx,y,x->ijxy", As, As, p ** n, p ** (m - n)) / s_m
    freqs = (e[:, None] - e[None, :]).ravel()
    return Correlator(w.reshape(len(As), len(As), -1), freqs, "K", n, m)


def w_block(c: Correlator, k0: Correlator, k1: Correlator, taus) -> np.ndarray:
    """W(tau) for the M-world second-order block, tau = t1 - t2 >= 0.

    Four terms, one per placement of the two couplings on the contour:
      -C_ij(t1,t2) K0_ij(t1,t2) - C_ji(t2,t1) K0_ji(t2,t1)
      +C_ji(t2,t1) K1_ij(t1,t2) + C_ij(t1,t2) K1_ji(t2,t1)
    times M from the cyclic placement over the worlds, so that
    F_M = int_0^inf W. K0 = K^{0,M}, K1 = K^{1,M}.
    """
    if k0.m != k1.m or k0.n != 0 or k1.n != 1:
        raise ValueError("w_block needs K^{0,M} and K^{1,M} with equal M")
    taus = np.asarray(taus, dtype=float)
    cp, cm = c.at(taus), c.at(-taus)
    k0p, k0m = k0.at(taus), k0.at(-taus)
    k1p, k1m = k1.at(taus), k1.at(-taus)
    if cp.shape[:2] != k0p.shape[:2]:
        raise ValueError("coupling index sets do not match")
    t1 = -np.einsum("ijt,ijt->t", cp, k0p)
    t2 = -np.einsum("jit,jit->t", cm, k0m)
    t3 = np.einsum("jit,ijt->t", cm, k1p)
    t4 = np.einsum("ijt,jit->t", cp, k1m)
    w = k0.m * (t1 + t2 + t3 + t4)
    return w.real


def _damped_integral(w, taus, eta):
    return float(simpson(w * np.exp(-eta * taus), x=taus))


def flow_second_order(w, taus, eta: float, extrapolate: bool = True, m: int = 0) -> FlowReport:
    """int_0^inf W(tau) exp(-eta tau) dtau on the grid.

    With ``extrapolate`` the result is Richardson-extrapolated to eta -> 0
    from eta and eta/2; a relative spread above 5% raises.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    taus = np.asarray(taus, dtype=float)
    w = np.asarray(w, dtype=float)
    f1 = _damped_integral(w, taus, eta)
    if not extrapolate:
        return FlowReport(m, f1, "2nd", {"eta": eta})
    f2 = _damped_integral(w, taus, eta / 2)
    f0 = 2 * f2 - f1
    spread = abs(f2 - f1) / max(abs(f0), 1e-300)
    if spread > 0.05:
        raise NonConvergentExtrapolation(f"eta extrapolation spread {spread:.2%}")
    return FlowReport(m, f0, "2nd", {"eta": eta, "at_eta": f1, "at_half_eta": f2, "spread": spread})


def tau_grid(system: BipartiteSystem, eta: float, decay_lengths: float = 40.0, points_per_period: int = 40):
    """Uniform tau grid resolving the fastest Bohr frequency out to decay_lengths/eta."""
    eA, eB = system.eig_A()[0], system.eig_B()[0]
    wmax = (eA.max() - eA.min()) + (eB.max() - eB.min())
    wmax = max(wmax, eta, 1e-9)
    dtau = 2 * np.pi / wmax / points_per_period
    n = int(np.ceil(decay_lengths / eta / dtau))
    n += n % 2
    return np.linspace(0.0, n * dtau, n + 1)


def second_order_flow_block(system: BipartiteSystem, stateA, stateB, m: int, eta: float,
                            extrapolate: bool = False) -> FlowReport:
    """W-block route to F_M for stationary stateA, stateB."""
    a_ops = [a for a, _ in system.couplings]
    b_ops = [b for _, b in system.couplings]
    c = bath_correlator(stateB, b_ops, system.hB)
    k0 = multiworld_correlator(stateA, a_ops, system.hA, 0, m)
    k1 = multiworld_correlator(stateA, a_ops, system.hA, 1, m)
    taus = tau_grid(system, eta / 2 if extrapolate else eta)
    w = system.lam ** 2 * w_block(c, k0, k1, taus)
    rep = flow_second_order(w, taus, eta, extrapolate, m)
    rep.method = "2nd-block"
    return rep


@dataclass
class RateTable:
    """Golden-rule rates gamma[a, al, b, be] for |a al> -> |b be> with their energies."""

    gamma: np.ndarray
    eA: np.ndarray
    eB: np.ndarray
    eta: float
    broadening: str = "gaussian"

    def a_to_b(self, pB) -> np.ndarray:
        """Gamma_{a->b} = sum_{al, be} Gamma[a al, b be] p_al."""
        return np.einsum("xlym,l->xy", self.gamma, np.asarray(pB, dtype=float))

    def b_to_b(self, pA) -> np.ndarray:
        """Rates of B transitions al -> be averaged over A states with weights pA."""
        return np.einsum("xlym,x->lm", self.gamma, np.asarray(pA, dtype=float))

    def composite(self) -> np.ndarray:
        dA, dB = len(self.eA), len(self.eB)
        return self.gamma.reshape(dA * dB, dA * dB)


def default_eta(system: BipartiteSystem) -> float:
    """Line width of 3 mean level spacings of H_A + H_B."""
    return 3.0 * system.mean_level_spacing()


def golden_rule_rates(system: BipartiteSystem, eta: float, broadening: str = "gaussian") -> RateTable:
    """Gamma[a al, b be] = 2 pi |<a al|H_AB|b be>|^2 delta_eta(E_a + E_al - E_b - E_be)."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    eA, eB = system.eig_A()[0], system.eig_B()[0]
    h = system.coupling_matrix_elements()
    e_tot = eA[:, None] + eB[None, :]
    de = e_tot[:, :, None, None] - e_tot[None, None, :, :]
    g = 2 * np.pi * np.abs(h) ** 2 * delta(de, eta, broadening)
    dA, dB = system.dims
    g[np.arange(dA), :, np.arange(dA), :] = 0.0
    g[:, np.arange(dB), :, np.arange(dB)] = 0.0
    return RateTable(g, eA, eB, eta, broadening)


def renyi_sum(p, m) -> float:
    p = np.asarray(p, dtype=float)
    return float(np.sum(np.where(p > 0, p, 0.0) ** m))


def _pow(p, x):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(p > 0, np.abs(p) ** x, 0.0 if x > 0 else (1.0 if x == 0 else np.inf))


def flow_2nd_states(rates: RateTable, pA, pB, m: float) -> FlowReport:
    """Second-order F_M from

        S_M F_M = M sum Gamma[a al, b be] (p_b p_be - p_a p_al) p_a^{M-1}      (form 1)
                = M sum_ab Gamma_{a->b} p_a (p_b^{M-1} - p_a^{M-1})             (form 2)

    The reported flow is form 2 divided by S_M = sum p_a^M. ``m`` may be
    non-integer (used for Shannon limits by finite differences).
    """
    pA, pB = np.asarray(pA, float), np.asarray(pB, float)
    pm1 = _pow(pA, m - 1)
    joint = pA[:, None] * pB[None, :]
    g = rates.gamma
    form1 = m * np.einsum("xlym,xlym->", g, (joint[None, None, :, :] - joint[:, :, None, None])
                          * pm1[:, None, None, None])
    gab = rates.a_to_b(pB)
    form2 = m * np.sum(gab * pA[:, None] * (pm1[None, :] - pm1[:, None]))
    s_m = renyi_sum(pA, m)
    return FlowReport(m, float(form2 / s_m), "2nd",
                      {"form1": float(form1), "form2": float(form2), "S_M": s_m,
                       "gamma_ab": gab, "eta": rates.eta})


def flow_2nd_shannon(rates: RateTable, pA, pB, beta: float | None = None) -> FlowReport:
    """Shannon flow dS/dt with -dS/dt = sum ln(p_b/p_a) Gamma_{a->b} p_a, plus dE/dt of A."""
    pA, pB = np.asarray(pA, float), np.asarray(pB, float)
    gab = rates.a_to_b(pB)
    flux = gab * pA[:, None]
    active = flux > 0
    if np.any(active & (pA[None, :] <= 0)):
        raise ValueError("transition into a zero-probability state makes the Shannon flow infinite")
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(active, np.log(np.where(active, pA[None, :], 1.0) / np.where(active, pA[:, None], 1.0)), 0.0)
    ds_dt = -float(np.sum(logs * flux))
    de_dt = float(np.sum(flux * (rates.eA[None, :] - rates.eA[:, None])))
    bd = {"dE_dt": de_dt}
    if beta is not None:
        bd["beta_dE_dt"] = beta * de_dt
    return FlowReport(1, ds_dt, "2nd-shannon", bd)


def divided_difference(pa, pb, m: float, tol: float = 1e-12):
    """(p_a^{M-1} - p_b^{M-1}) / (p_a - p_b), with the limit (M-1) p^{M-2} for p_a ~ p_b."""
    pa, pb = np.broadcast_arrays(np.asarray(pa, float), np.asarray(pb, float))
    close = np.abs(pa - pb) < tol
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = (_pow(pa, m - 1) - _pow(pb, m - 1)) / np.where(close, 1.0, pa - pb)
        lim = (m - 1) * _pow(0.5 * (pa + pb), m - 2)
    return np.where(close, lim, dd)


def log_divided_difference(pa, pb, tol: float = 1e-12):
    """d/dM of the divided difference at M = 1: (ln p_a - ln p_b)/(p_a - p_b), limit 1/p."""
    pa, pb = np.broadcast_arrays(np.asarray(pa, float), np.asarray(pb, float))
    close = np.abs(pa - pb) < tol
    with np.errstate(divide="ignore", invalid="ignore"):
        dd = (np.log(pa) - np.log(pb)) / np.where(close, 1.0, pa - pb)
        lim = 1.0 / (0.5 * (pa + pb))
    return np.where(close, lim, dd)


def fourth_order_amplitudes(system: BipartiteSystem, pA, pB, eta: float,
                            broadening: str = "gaussian") -> np.ndarray:
    """A_ab = sum_{c al be} H[a al, c be] H[c be, b al]
    (pi ((p_a + p_b) p_al - 2 p_c p_be) delta(E_a + E_al - E_c - E_be)
     - i (p_a - p_b) PV 1/(E_a + E_al - E_c - E_be)).
    """
    pA, pB = np.asarray(pA, float), np.asarray(pB, float)
    eA, eB = system.eig_A()[0], system.eig_B()[0]
    h = system.coupling_matrix_elements()  # [a, al, c, be]
    x = (eA[:, None, None, None] + eB[None, :, None, None]
         - eA[None, None, :, None] - eB[None, None, None, :])  # [a, al, c, be]
    d = delta(x, eta, broadening)
    pv = principal_value(x, eta)
    pp = np.einsum("c,m->cm", pA, pB)
    # amplitude product H[a al, c be] H[c be, b al] -> [a, b, al, c, be]
    prod = np.einsum("alcm,cmbl->ablcm", h, h)
    real_part = np.pi * ((pA[:, None, None, None, None] + pA[None, :, None, None, None]) * pB[None, None, :, None, None]
                         - 2 * pp[None, None, None, :, :]) * d[:, None, :, :, :]
    imag_part = -1j * (pA[:, None] - pA[None, :])[:, :, None, None, None] * pv[:, None, :, :, :]
    return np.einsum("ablcm,ablcm->ab", prod, real_part + imag_part)


def flow_4th_order(system: BipartiteSystem, pA, pB, m: float, eta: float,
                   broadening: str = "gaussian") -> FlowReport:
    """Two-world fourth-order correction

        dS_M/dt = (M/2) pi sum_{a != b} |A_ab|^2 delta(E_a - E_b) (p_a^{M-1} - p_b^{M-1})/(p_a - p_b)

    M/2 counts the unordered world pairs not already covered by the divided
    difference (its M - 1 terms are the world separations along the loop).
    Same-world fourth-order terms and the a = b term are excluded from the
    flow; the a = b part is reported separately, since with a finite
    switching regulator it is finite. The breakdown also carries the
    Shannon-limit rate
    dS/dt = -(pi/2) sum |A_ab|^2 delta(E_a - E_b) (ln p_a - ln p_b)/(p_a - p_b).
    """
    pA = np.asarray(pA, float)
    eA = system.eig_A()[0]
    amp = fourth_order_amplitudes(system, pA, pB, eta, broadening)
    dab = delta(eA[:, None] - eA[None, :], eta, broadening)
    off = ~np.eye(len(pA), dtype=bool)
    base = np.pi * np.abs(amp) ** 2 * dab
    weight = base * off
    dd = divided_difference(pA[:, None], pA[None, :], m)
    ds_m = 0.5 * m * float(np.sum(weight * dd))
    ds_diag = 0.5 * m * float(np.sum(np.diag(base) * np.diag(dd)))
    positive = pA > 0
    pair_ok = positive[:, None] & positive[None, :]
    shannon = -0.5 * float(np.sum(np.where(pair_ok, weight * log_divided_difference(
        np.where(positive, pA, 1.0)[:, None], np.where(positive, pA, 1.0)[None, :]), 0.0)))
    s_m = renyi_sum(pA, m)
    return FlowReport(m, ds_m / s_m, "4th",
                      {"dS_M_dt": ds_m, "S_M": s_m, "shannon_dS_dt": shannon,
                       "diagonal_dS_M_dt": ds_diag, "amplitudes": amp, "eta": eta})
