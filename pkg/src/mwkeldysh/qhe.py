"""Driven multilevel heat engine with susceptibility-characterized environments.

Levels split into an upper set {u} and a lower set {d}; eta[n, m] = +1 for
n in u, m in d, -1 for the reverse, 0 otherwise. An environment couples
through H_int = sum_mn |m><n| X_mn and is described by its dissipative
susceptibility tensor chi[m, n, p, q] = chi~_{mn,pq}(omega) at the drive
frequency. Within the rotating-wave selection it is nonzero only for
eta[m, n] = -1 and eta[p, q] = +1 (a lowering pair first); chi~ at -omega
follows from antisymmetry, and correlators from S(nu) = n_B(nu/T) chi~(nu).

Dynamics is computed in the frame rotating at omega, with the standard
sign d rho/dt = -i [H^r, rho] + dissipators.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .core import FlowReport, density_matrix, hermitian
from .master import BlochGenerator, bloch_steady_state, sandwich_superop


class ProbeTooStrong(UserWarning):
    pass


PROBE_RATIO = 0.1


def eta_matrix(upper: Sequence[bool]) -> np.ndarray:
    u = np.asarray(upper, dtype=bool)
    return (np.outer(u, ~u).astype(int) - np.outer(~u, u).astype(int))


def bose_t(omega: float, temperature: float) -> float:
    """n_B(omega/T); zero at T = 0."""
    if temperature == 0:
        return 0.0
    return float(1.0 / np.expm1(omega / temperature))


@dataclass
class Environment:
    chi: np.ndarray               # chi~_{mn,pq}(omega), shape (n, n, n, n)
    temperature: float
    probe: bool = False
    name: str = ""
    modes: Optional[list] = None  # [(O_r, chi~_r)] when built from modes

    @classmethod
    def from_modes(cls, ops: Sequence[np.ndarray], strengths: Sequence[float], upper,
                   temperature: float, probe: bool = False, name: str = "") -> "Environment":
        """Environment of independent bosonic modes X_r coupled as O_r (x) X_r.

        ``strengths[r]`` = chi~_r(omega) > 0. The tensor is the rotating-wave
        projection of sum_r O_r[m, n] O_r[p, q] chi~_r.
        """
        eta = eta_matrix(upper)
        n = len(eta)
        chi = np.zeros((n, n, n, n), dtype=complex)
        for o, s in zip(ops, strengths):
            if s < 0:
                raise ValueError("susceptibility strengths must be nonnegative")
            o = hermitian(o)
            chi += s * np.einsum("mn,pq->mnpq", o, o)
        mask = np.einsum("mn,pq->mnpq", eta == -1, eta == 1)
        modes = [(hermitian(o), float(s)) for o, s in zip(ops, strengths)]
        return cls(chi * mask, temperature, probe, name, modes)

    def scale(self) -> float:
        return float(np.max(np.abs(self.chi)))


@dataclass
class QheSpec:
    energies: np.ndarray
    upper: np.ndarray
    omega: float
    drive: np.ndarray            # Omega[m, n], m in u, n in d
    environments: list = field(default_factory=list)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.upper = np.asarray(self.upper, dtype=bool)
        self.drive = np.asarray(self.drive, dtype=complex)
        n = len(self.energies)
        if self.upper.shape != (n,) or self.drive.shape != (n, n):
            raise ValueError("level data have inconsistent sizes")
        if not (self.upper.any() and (~self.upper).any()):
            raise ValueError("both level sets must be nonempty")
        eu, ed = self.energies[self.upper], self.energies[~self.upper]
        if not eu.min() > ed.max():
            raise ValueError("upper set must lie above the lower set")
        eta = self.eta
        if np.any(np.abs(self.drive[eta != 1]) > 0):
            raise ValueError("drive may only couple an upper level (row) to a lower level (column)")
        probes = [e for e in self.environments if e.probe]
        if len(probes) > 1:
            raise ValueError("at most one probe environment")
        others = [e for e in self.environments if not e.probe]
        if probes and others:
            ratio = probes[0].scale() / max(e.scale() for e in others)
            if ratio >= PROBE_RATIO:
                warnings.warn(f"probe rates are {ratio:.2g} of the others", ProbeTooStrong, stacklevel=2)

    @property
    def n(self) -> int:
        return len(self.energies)

    @property
    def eta(self) -> np.ndarray:
        return eta_matrix(self.upper)

    @property
    def probe(self) -> Environment:
        for e in self.environments:
            if e.probe:
                return e
        raise ValueError("no probe environment")

    def rotating_hamiltonian(self) -> np.ndarray:
        h = np.diag(self.energies - self.omega * self.upper).astype(complex)
        return h + self.drive + self.drive.conj().T


def _lowering_pairs(upper) -> list:
    u = np.asarray(upper, dtype=bool)
    return [(m, n) for m in np.flatnonzero(~u) for n in np.flatnonzero(u)]


def dissipator(env: Environment, upper, omega: float) -> np.ndarray:
    """Lindblad superoperator (row-major vec) of one environment at the drive frequency.

    Emission through lowering L_l = |m><n| with Kossakowski weight
    (1 + n_B) chi~_{l, reverse(k)}; absorption through L_k^dagger with n_B chi~_{k, reverse(l)}.
    """
    pairs = _lowering_pairs(upper)
    n = len(upper)
    nb = bose_t(omega, env.temperature)
    sup = np.zeros((n * n, n * n), dtype=complex)
    eye = np.eye(n)

    def op(m, k):
        o = np.zeros((n, n))
        o[m, k] = 1.0
        return o

    for (mk, nk) in pairs:
        lk = op(mk, nk)
        for (ml, nl) in pairs:
            ll = op(ml, nl)
            g_em = (1 + nb) * env.chi[ml, nl, nk, mk]
            g_ab = nb * env.chi[mk, nk, nl, ml]
            if g_em != 0:
                # L_l rho L_k^+ - 1/2 {L_k^+ L_l, rho}
                kl = lk.T @ ll
                sup += g_em * (sandwich_superop(ll, lk.T) - 0.5 * (sandwich_superop(kl, eye)
                                                                  + sandwich_superop(eye, kl)))
            if g_ab != 0:
                # L_k^+ rho L_l - 1/2 {L_l L_k^+, rho}
                lk_ = ll @ lk.T
                sup += g_ab * (sandwich_superop(lk.T, ll) - 0.5 * (sandwich_superop(lk_, eye)
                                                                  + sandwich_superop(eye, lk_)))
    return sup


def bloch_generator(spec: QheSpec, include_probe: bool = False) -> BlochGenerator:
    n = spec.n
    d = np.zeros((n * n, n * n), dtype=complex)
    for env in spec.environments:
        if env.probe and not include_probe:
            continue
        d += dissipator(env, spec.upper, spec.omega)
    return BlochGenerator(spec.rotating_hamiltonian(), d)


def steady_state(spec: QheSpec) -> np.ndarray:
    """Null vector of the rotating-frame Bloch generator without the probe."""
    return density_matrix(bloch_steady_state(bloch_generator(spec)))


def q_incoherent(spec: QheSpec, rho, env: Optional[Environment] = None) -> float:
    """Energy flow into the probe: emission weighted by 1 + n_B minus absorption weighted by n_B."""
    env = spec.probe if env is None else env
    rho = np.asarray(rho, dtype=complex)
    eta = spec.eta
    nb = bose_t(spec.omega, env.temperature)
    chi = env.chi
    # emission: rho_mn chi_{pm,np}, n in u, p in d
    em = np.einsum("mn,pmnp,np->", rho, chi, eta == 1)
    # absorption: rho_mn chi_{np,pm}, n in d, p in u
    ab = np.einsum("mn,nppm,np->", rho, chi, eta == -1)
    return float(np.real(spec.omega * ((1 + nb) * em - nb * ab)))


def q_coherent(spec: QheSpec, rho, env: Optional[Environment] = None) -> float:
    """omega sum_{eta_pq = 1} rho_nm rho_qp chi~_{mn,pq}(omega)."""
    env = spec.probe if env is None else env
    rho = np.asarray(rho, dtype=complex)
    val = np.einsum("nm,qp,mnpq,pq->", rho, rho, env.chi, spec.eta == 1)
    return float(np.real(spec.omega * val))


def probe_energy_flux(spec: QheSpec, rho, env: Optional[Environment] = None) -> float:
    """Energy flow into the probe from its Lindblad dissipator: -omega d<P_u>/dt."""
    env = spec.probe if env is None else env
    n = spec.n
    d = dissipator(env, spec.upper, spec.omega) @ np.asarray(rho, dtype=complex).reshape(-1)
    dr = d.reshape(n, n)
    return float(-spec.omega * np.real(np.trace(np.diag(spec.upper.astype(float)) @ dr)))


def classical_force_dissipation(spec: QheSpec, forces, env: Optional[Environment] = None) -> float:
    """Power absorbed by a mode environment when |m><n| is replaced by a classical force f_mn.

    Each mode X_r then feels F_r(t) = sum over lowering pairs of O_r[m, n] f_mn e^{i omega t} + c.c.
    A linear environment absorbs omega chi~_r |F_r|^2 from it: the driven
    emission (1 + n_B) and absorption (n_B) differ by exactly chi~_r.
    """
    env = spec.probe if env is None else env
    if env.modes is None:
        raise ValueError("classical-force surrogate needs an environment built from modes")
    f = np.asarray(forces, dtype=complex)
    low = spec.eta == -1
    nb = bose_t(spec.omega, env.temperature)
    total = 0.0
    for o, s in env.modes:
        amp = abs(np.sum(o[low] * f[low])) ** 2
        total += s * ((1 + nb) * amp - nb * amp)
    return float(spec.omega * total)


def mean_forces(rho) -> np.ndarray:
    """f_mn = <|m><n|> = rho_nm."""
    return np.asarray(rho).T.copy()


def flow_prefactor(m: float, x: float, omega: float) -> float:
    """M n_B(Mx) / (n_B((M-1)x) n_B(x) omega), x = omega/T; zero at M = 1."""
    if m == 1:
        return 0.0
    if np.isinf(x):
        return m / omega
    return float(m * np.expm1((m - 1) * x) * np.expm1(x) / (np.expm1(m * x) * omega))


def qhe_flows(spec: QheSpec, rho, m: float) -> FlowReport:
    """F_M of the probe, with Q_i, Q_c, F_S and the low-temperature form in the breakdown."""
    if m < 1:
        raise ValueError("m must be >= 1")
    env = spec.probe
    qi, qc = q_incoherent(spec, rho, env), q_coherent(spec, rho, env)
    t = env.temperature
    x = np.inf if t == 0 else spec.omega / t
    pref = flow_prefactor(m, x, spec.omega)
    f_s = (qi - qc) / t if t > 0 else np.sign(qi - qc) * np.inf
    return FlowReport(m, pref * (qi - qc), "qhe",
                      {"Q_i": qi, "Q_c": qc, "prefactor": pref, "F_S": f_s,
                       "F_M_low_T": m * (qi - qc) / spec.omega,
                       "F_M_over_M_minus_1_limit": (qi - qc) / t if t > 0 else np.inf})


def balance_temperature(spec: QheSpec, rho, t_lo: float, t_hi: float) -> float:
    """Probe temperature at which Q_i vanishes, by bracketing root search."""
    base = spec.probe

    def qi(t):
        env = Environment(base.chi, t, True, base.name)
        return q_incoherent(spec, rho, env)

    return float(brentq(qi, t_lo, t_hi, xtol=1e-14, rtol=1e-14))
