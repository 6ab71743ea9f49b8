"""Renyi flow of a thermal subsystem versus energy-transfer counting statistics.

A is thermal at beta and coupled to an arbitrary, possibly driven, B. The
flow of ln Tr R_A^M per world equals the difference of two cumulant
generating rates of the energy absorbed by A when A is held at the
rescaled inverse temperature M beta, both evaluated at the imaginary
counting field xi* = i beta (M - 1):

    F_M / M = f_i(xi*) - f_c(xi*)

f_i uses the full two-time correlators of B; f_c replaces the B operators
by their mean values, i.e. A driven by classical forces. Rates are the
instantaneous second-order rates at time t including the coupling
envelope, so the relation holds pointwise in time at order lambda^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
from scipy.integrate import simpson, trapezoid

from .core import BipartiteSystem, density_matrix, hermitian, tensor_product, thermal_state
from .dynamics import EvolutionJob, SwitchingProfile, oracle_renyi_flow

PERIOD_POINTS = 64


@dataclass
class BHistory:
    """Heisenberg-picture coupling operators of a driven B on a uniform grid."""

    times: np.ndarray
    ops: np.ndarray        # [k, i, :, :] = B_i(t_k)
    rho0: np.ndarray

    def means(self) -> np.ndarray:
        """<B_i(t_k)>, shape (k, i)."""
        return np.einsum("kiab,ba->ki", self.ops, self.rho0)

    def correlators(self, k_top: int) -> np.ndarray:
        """C_ji(t_k, t_top) = <B_j(t_k) B_i(t_top)> for k <= k_top, shape (k, j, i)."""
        top = self.ops[k_top]
        return np.einsum("kjab,ibc,ca->kji", self.ops[: k_top + 1], top, self.rho0)


def b_history(hB, b_ops: Sequence[np.ndarray], rho0, t_start: float, t_end: float, dt: float,
              drive: Optional[Callable[[float], np.ndarray]] = None) -> BHistory:
    """Evolve B alone with midpoint exponential steps and record B_i(t) = U^+ B_i U."""
    hB = hermitian(hB)
    n = max(1, int(np.ceil((t_end - t_start) / dt - 1e-9)))
    h = (t_end - t_start) / n
    d = hB.shape[0]
    u = np.eye(d, dtype=complex)
    bs = np.array([hermitian(b) for b in b_ops])
    ops = np.empty((n + 1, len(bs), d, d), dtype=complex)
    ops[0] = bs
    static = None
    for k in range(n):
        if drive is None:
            if static is None:
                static = la.expm(-1j * h * hB)
            step = static
        else:
            step = la.expm(-1j * h * (hB + hermitian(drive(t_start + (k + 0.5) * h))))
        u = step @ u
        ops[k + 1] = np.einsum("ba,ibc,cd->iad", u.conj(), bs, u)
    return BHistory(t_start + h * np.arange(n + 1), ops, density_matrix(rho0))


def instantaneous_rates(system: BipartiteSystem, hist: BHistory, k_top: int,
                        envelope: Callable[[np.ndarray], np.ndarray], coherent: bool = False) -> np.ndarray:
    """Gamma_{a->b}(t) at t = hist.times[k_top], in the H_A eigenbasis.

    Gamma = 2 lambda^2 g(t) Re sum_ij A_{i,ba} A_{j,ab} int_0 dtau g(t - tau) e^{i E_ba tau} C_ji(t - tau, t),
    with C_ji(t', t) = <B_j(t') B_i(t)>, or <B_j(t')><B_i(t)> when ``coherent``.
    """
    eA, vA = system.eig_A()
    a_ops = np.array([vA.conj().T @ hermitian(a) @ vA for a, _ in system.couplings])
    t = hist.times[k_top]
    ts = hist.times[: k_top + 1]
    taus = t - ts
    if coherent:
        m = hist.means()
        c = np.einsum("kj,i->kji", m[: k_top + 1], m[k_top])
    else:
        c = hist.correlators(k_top)
    g = envelope(ts)
    eba = eA[None, :] - eA[:, None]  # [a, b] -> E_b - E_a
    ph = np.exp(1j * eba[None, :, :] * taus[:, None, None])  # [k, a, b]
    # sum_ij A_i[b, a] A_j[a, b] C_ji(k)
    amp = np.einsum("iba,jab,kji->kab", a_ops, a_ops, c)
    integrand = g[:, None, None] * ph * amp
    # ts ascending, taus descending: integrate over t' then tau = t - t'
    integral = simpson(integrand, x=ts, axis=0) if len(ts) > 2 else trapezoid(integrand, x=ts, axis=0)
    rates = 2 * system.lam ** 2 * float(envelope(np.array([t]))[0]) * np.real(integral)
    np.fill_diagonal(rates, 0.0)
    return rates


def cgf_rate(rates: np.ndarray, energies, q, xi: complex) -> complex:
    """f(xi) = sum_a q_a sum_b Gamma_{a->b} (e^{i xi (E_b - E_a)} - 1) for A held at populations q."""
    e = np.asarray(energies, dtype=float)
    tilt = np.exp(1j * xi * (e[None, :] - e[:, None])) - 1.0
    return complex(np.einsum("a,ab,ab->", np.asarray(q, float), rates, tilt))


def rescaled_populations(energies, beta: float, m: int) -> np.ndarray:
    """Thermal populations at M beta, i.e. p_a^M / S_M for p thermal at beta."""
    e = np.asarray(energies, dtype=float)
    w = np.exp(-m * beta * (e - e.min()))
    return w / w.sum()


def incoherent_fcs(rates: np.ndarray, energies, beta_star: float, xi) -> np.ndarray:
    q = rescaled_populations(energies, beta_star, 1)
    return np.array([cgf_rate(rates, energies, q, x) for x in np.atleast_1d(xi)])


def coherent_fcs(rates_c: np.ndarray, energies, beta_star: float, xi) -> np.ndarray:
    """Same generating rate for rates built from mean forces <B_n>(t)."""
    return incoherent_fcs(rates_c, energies, beta_star, xi)


@dataclass
class CorrespondenceReport:
    m: int
    lhs: float
    rhs: float
    f_i: complex
    f_c: complex
    times: list
    lhs_samples: list = None
    rhs_samples: list = None

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def relative(self) -> float:
        return self.residual / abs(self.lhs) if self.lhs != 0 else self.residual


def check_correspondence(system: BipartiteSystem, beta: float, m: int, rhoB0,
                         drive_B: Optional[Callable[[float], np.ndarray]] = None,
                         rate: float = 0.5, ramp_lengths: float = 25.0, dt: float = 0.01,
                         period: Optional[float] = None, points: int = PERIOD_POINTS,
                         with_oracle: bool = True) -> CorrespondenceReport:
    """Compare F_M / M from exact evolution with f_i(xi*) - f_c(xi*).

    A starts thermal at ``beta`` and B in ``rhoB0``; the coupling is switched
    on exponentially at ``rate`` and reaches full strength at t_full =
    ramp_lengths / rate. Without ``period`` both sides are taken just
    after t_full; with it they are averaged over one drive period using
    ``points`` uniform samples.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    eA, _ = system.eig_A()
    t_full = ramp_lengths / rate
    sw = SwitchingProfile("exponential", rate, t_full)
    rhoA = thermal_state(system.hA, beta)
    h_fd = 0.25e-6 / rate
    if period is None:
        probes = np.array([t_full + 2 * h_fd])
    else:
        probes = t_full + 2 * h_fd + period * np.arange(points) / points
    t_end = float(probes[-1] + 2 * h_fd)
    job = EvolutionJob(system, tensor_product(rhoA, rhoB0), 0.0, t_end, dt, sw, None, drive_B)

    # B alone, on one uniform grid that contains every probe time
    spacing = (period / points) if period is not None else probes[0]
    step = spacing / max(1, int(np.ceil(spacing / dt - 1e-9)))
    n_back = int(np.floor(probes[0] / step + 1e-9))
    t_s = float(probes[0] - n_back * step)
    b_ops = [b for _, b in system.couplings]
    rho_s = np.asarray(rhoB0, dtype=complex)
    if t_s > 0:
        hb = system.hB + (hermitian(drive_B(0.5 * t_s)) if drive_B is not None else 0)
        u = la.expm(-1j * t_s * hb)
        rho_s = u @ rho_s @ u.conj().T
    hist = b_history(system.hB, b_ops, rho_s, t_s, float(probes[-1]), step, drive_B)
    env = lambda x: sw.envelope(x, t_full)
    xi = 1j * beta * (m - 1)
    q = rescaled_populations(eA, beta, m)
    fi, fc = [], []
    for t in probes:
        k = int(np.rint((t - t_s) / step))
        gi = instantaneous_rates(system, hist, k, env)
        gc = instantaneous_rates(system, hist, k, env, coherent=True)
        fi.append(cgf_rate(gi, eA, q, xi))
        fc.append(cgf_rate(gc, eA, q, xi))
    hist_times = list(map(float, probes))
    f_i, f_c = complex(np.mean(fi)), complex(np.mean(fc))
    rhs = float(np.real(f_i - f_c))
    rhs_samples = [float(np.real(a - b)) for a, b in zip(fi, fc)]
    lhs, lhs_samples = np.nan, None
    if with_oracle:
        if m == 1:
            lhs, lhs_samples = 0.0, [0.0] * len(probes)
        else:
            rep = oracle_renyi_flow(job, m, probe_times=list(probes), h=h_fd)
            lhs, lhs_samples = rep.flow / m, [x / m for x in rep.breakdown["slopes"]]
    return CorrespondenceReport(m, lhs, rhs, f_i, f_c, hist_times, lhs_samples, rhs_samples)
