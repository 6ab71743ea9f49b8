"""Rate and Bloch generators, tilted (counting-field) generators and FCS.

Convention: generators act as dp/dt = L p (columns are the "from" state).
Decay rates relate by D = -eig(L), so the long-time Keldysh action is
S(chi) = -T D0(chi) with D0 = -(eigenvalue of L with the largest real part).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
from scipy.integrate import trapezoid as _trapz

from .core import FlowReport, hermitian
from .perturbative import RateTable


class DegenerateDominantWarning(UserWarning):
    pass


class GapTooSmall(ValueError):
    pass


class DegenerateNullSpace(ValueError):
    pass


@dataclass
class RateGenerator:
    matrix: np.ndarray
    chi: complex = 0.0
    m: int = 1
    labels: list = field(default_factory=list)
    single_world: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def kron_sum(l: np.ndarray, m: int) -> np.ndarray:
    """sum over worlds of I x ... x L x ... x I (independent replicas)."""
    d = l.shape[0]
    out = np.zeros((d ** m, d ** m), dtype=l.dtype)
    for k in range(m):
        out += np.kron(np.kron(np.eye(d ** k), l), np.eye(d ** (m - k - 1)))
    return out


def _composite_generator(rates: RateTable, chi: complex, transfer: np.ndarray) -> np.ndarray:
    g = rates.composite()  # [from, to]
    n = g.shape[0]
    off = (g * np.exp(1j * chi * transfer)).T.astype(complex)
    np.fill_diagonal(off, 0.0)
    return off - np.diag(g.sum(axis=1) - np.diag(g))


def _plain_generator(rates_from_to) -> np.ndarray:
    g = np.array(rates_from_to, dtype=float)
    if np.any(g < 0):
        raise ValueError("rates must be nonnegative")
    np.fill_diagonal(g, 0.0)
    return g.T - np.diag(g.sum(axis=1))


def a_energy_transfer(rates: RateTable) -> np.ndarray:
    """Energy received by A in each composite transition, [from, to]."""
    dB = len(rates.eB)
    ea = np.repeat(rates.eA, dB)
    return ea[None, :] - ea[:, None]


def build_generator(rates: RateTable, chi: complex = 0.0, transfer: Optional[np.ndarray] = None,
                    m: int = 1, pA: Optional[Sequence[float]] = None,
                    a_rates: Optional[np.ndarray] = None,
                    b_rates: Optional[np.ndarray] = None) -> RateGenerator:
    """Counting-field generator.

    Without ``pA`` the states are the composite |a al>; each transition
    carries exp(i chi * transfer[from, to]) (default: energy received by A).
    For m > 1 the replicas are independent copies.

    With ``pA`` system A is a reservoir frozen at populations pA and the
    states are those of B. The A contour threads all m worlds, which
    weights an A transition a -> b by p_a p_b^{m-1} / S_m on top of the
    counting factor exp(i chi (E_b - E_a)). The returned generator acts on
    the m-world vector index (al_1, ..., al_m).

    ``a_rates`` / ``b_rates`` ([from, to]) add uncounted transitions of one
    subsystem alone, caused by some other bath or pump. Without them the
    composite chain conserves total energy and the net transfer into a
    finite A stays bounded. ``a_rates`` is only meaningful in composite mode.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if pA is None:
        if transfer is None:
            transfer = a_energy_transfer(rates)
        l1 = _composite_generator(rates, chi, np.asarray(transfer))
        dB = len(rates.eB)
        if a_rates is not None:
            l1 = l1 + np.kron(_plain_generator(a_rates), np.eye(dB))
        if b_rates is not None:
            l1 = l1 + np.kron(np.eye(len(rates.eA)), _plain_generator(b_rates))
        labels = [(a, al) for a in range(len(rates.eA)) for al in range(dB)]
    else:
        if a_rates is not None:
            raise ValueError("a_rates conflicts with a frozen A (pA given)")
        pA = np.asarray(pA, float)
        s_m = np.sum(pA ** m)
        w_from = pA / s_m * np.where(pA > 0, pA, 0.0) ** (m - 1)     # p_a^m / S_m
        w_tilt = np.outer(pA, np.where(pA > 0, pA, 0.0) ** (m - 1)) / s_m  # p_a p_b^{m-1} / S_m
        ea = rates.eA
        count = np.exp(1j * chi * (ea[None, :] - ea[:, None]))
        g = rates.gamma  # [a, al, b, be]
        gain = np.einsum("xlym,xy,xy->ml", g, w_tilt, count)
        loss = np.einsum("xlym,x->l", g, w_from)
        l1 = gain.astype(complex)
        np.fill_diagonal(l1, np.diag(gain) - loss)
        if b_rates is not None:
            l1 = l1 + _plain_generator(b_rates)
        labels = list(range(len(rates.eB)))
    big = kron_sum(l1, m) if m > 1 else l1
    return RateGenerator(big, chi, m, labels, l1)


def solve_master(gen: RateGenerator, p0, t: float) -> np.ndarray:
    """p(t) = exp(L t) p0."""
    p0 = np.asarray(p0, dtype=complex)
    out = la.expm(gen.matrix * t) @ p0
    return out.real if gen.chi == 0 and np.allclose(out.imag, 0) else out


def stationary_state(gen: RateGenerator) -> np.ndarray:
    """Normalized null vector of a conservative generator."""
    e, v = la.eig(gen.matrix)
    k = np.argmin(np.abs(e))
    if np.sum(np.abs(e) < 1e-10 * max(1.0, np.abs(e).max())) > 1:
        raise DegenerateNullSpace("generator has more than one stationary state")
    p = np.real(v[:, k])
    return p / p.sum()


def dominant_eigenvalue(gen: RateGenerator | np.ndarray, tol: float = 1e-10) -> complex:
    """D0 = -(eigenvalue of L with the largest real part); ties go to the smaller |imag|."""
    mat = gen.matrix if isinstance(gen, RateGenerator) else np.asarray(gen)
    if not np.all(np.isfinite(mat)):
        raise ValueError("generator has non-finite entries")
    e = la.eigvals(mat)
    scale = max(1.0, np.max(np.abs(e)))
    top = e.real.max()
    cands = e[e.real >= top - tol * scale]
    # smallest |imag| first, then the larger real part (imag differences below tol count as equal)
    cands = cands[np.lexsort((-cands.real, np.round(np.abs(cands.imag) / (tol * scale))))]
    if len(cands) > 1:
        warnings.warn(f"dominant eigenvalue is {len(cands)}-fold degenerate in real part",
                      DegenerateDominantWarning, stacklevel=2)
    return complex(-cands[0])


def spectral_gap(gen: RateGenerator) -> float:
    """Distance in real part between the two slowest modes."""
    e = np.sort(la.eigvals(gen.matrix).real)[::-1]
    return float(e[0] - e[1]) if len(e) > 1 else np.inf


@dataclass
class KeldyshAction:
    chis: np.ndarray
    values: np.ndarray
    window: float


def _dominant_projection(mat: np.ndarray, p0) -> tuple[complex, complex]:
    """(dominant eigenvalue, ln[(1^T v)(u^T p0)]) with u^T v = 1."""
    e, left, right = la.eig(mat, left=True, right=True)
    top = e.real.max()
    cands = np.flatnonzero(e.real >= top - 1e-10 * max(1.0, np.abs(e).max()))
    k = cands[np.argmin(np.abs(e[cands].imag))]
    u, v = left[:, k].conj(), right[:, k]
    v = v / (u @ v)
    return e[k], np.log(np.sum(v) * (u @ np.asarray(p0)))


def keldysh_action(factory: Callable[[complex], RateGenerator], chis, window: float,
                   min_gap_windows: float = 5.0, p0=None) -> KeldyshAction:
    """S(chi) = -T D0(chi) over a chi grid; needs T * gap(L(0)) >= ``min_gap_windows``.

    With ``p0`` the initial-state projection ln[(1^T v0)(u0^T p0)] of the
    dominant mode is added, which removes the O(1) boundary term and leaves
    only corrections of order exp(-gap T).
    """
    gap = spectral_gap(factory(0.0))
    if window * gap < min_gap_windows:
        raise GapTooSmall(f"T * gap = {window * gap:.3g} < {min_gap_windows}")
    chis = np.asarray(chis, dtype=complex)
    vals = []
    for c in chis:
        mat = factory(c).matrix
        if p0 is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateDominantWarning)
                vals.append(-window * dominant_eigenvalue(mat))
        else:
            lam, proj = _dominant_projection(mat, p0)
            vals.append(window * lam + proj)
    return KeldyshAction(chis, np.array(vals), window)


def cumulants(factory: Callable[[complex], RateGenerator], window: float, order: int = 2,
              step: float = 1e-2, min_gap_windows: float = 5.0, p0=None) -> np.ndarray:
    """First ``order`` cumulants of the counted quantity, (-i d/dchi)^n S at chi = 0.

    Derivatives are taken along the imaginary chi axis, where S is real:
    with chi = -i x, kappa_n = d^n S / dx^n, by finite differences on a
    9-point stencil of spacing ``step``.
    """
    xs = step * np.arange(-4, 5)
    act = keldysh_action(factory, -1j * xs, window, min_gap_windows, p0)
    s = act.values.real
    return np.array([float(_fd_weights(xs, n) @ s) for n in range(1, order + 1)])


def _fd_weights(xs, n):
    k = len(xs)
    a = np.vander(xs, k, increasing=True).T
    b = np.zeros(k)
    b[n] = math.factorial(n)
    return la.solve(a, b)


def fcs_distribution(action: KeldyshAction, quantum: float, qs) -> np.ndarray:
    """P(Q) for Q on the lattice ``quantum * integer`` by trapezoid quadrature over chi.

    ``action`` must be sampled on a uniform real chi grid spanning
    [-pi/quantum, pi/quantum]. Our action is the characteristic function
    sum_Q P(Q) exp(i chi Q), so the inverse carries exp(-i chi Q).
    """
    chis = action.chis.real
    qs = np.asarray(qs, dtype=float)
    integrand = np.exp(action.values)[None, :] * np.exp(-1j * np.outer(qs, chis))
    return (quantum / (2 * np.pi)) * _trapz(integrand, chis, axis=1).real


def count_transfers(channels, quantum: float, p0, window: float,
                    qmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of the counted quantity over a window by explicit bookkeeping.

    ``channels`` is a list of (rates[from, to], transfer[from, to]) pairs of
    classical jump processes sharing one state space; a transfer of None
    means the channel is not counted. The state space is augmented with
    the running total Q (lattice spacing ``quantum``, truncated at
    |Q| <= qmax * quantum). No counting field is used, so this is
    independent of the tilted-generator route. Returns (Q values, P(Q)).
    """
    n = len(p0)
    nq = 2 * qmax + 1
    big = np.zeros((n * nq, n * nq))
    for rates, transfer in channels:
        rates = np.asarray(rates, float)
        steps = (np.zeros((n, n), int) if transfer is None
                 else np.rint(np.asarray(transfer, float) / quantum).astype(int))
        for s_from in range(n):
            for s_to in range(n):
                k = rates[s_from, s_to]
                if s_to == s_from or k == 0:
                    continue
                for q in range(nq):
                    col = q * n + s_from
                    big[col, col] -= k
                    q2 = q + steps[s_from, s_to]
                    if 0 <= q2 < nq:
                        big[q2 * n + s_to, col] += k
    v0 = np.zeros(n * nq)
    v0[qmax * n:(qmax + 1) * n] = np.asarray(p0, float)
    v = la.expm(big * window) @ v0
    pq = v.reshape(nq, n).sum(axis=1)
    return quantum * np.arange(-qmax, qmax + 1), pq


def multiworld_flow_via_d0(gen: RateGenerator) -> FlowReport:
    """Renyi flow from the m-world generator: F_M = -D0(M) under dp/dt = L p."""
    if gen.m < 1:
        raise ValueError("needs m >= 1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateDominantWarning)
        d0 = dominant_eigenvalue(gen)
    if abs(d0.imag) > 1e-9 * max(1.0, abs(d0.real)):
        raise ValueError(f"complex D0 {d0} for a Renyi flow")
    return FlowReport(gen.m, -d0.real, "d0", {"D0": d0.real})


# --- Bloch equation ---------------------------------------------------------

def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> -i [h, rho] on row-major vec(rho)."""
    n = h.shape[0]
    eye = np.eye(n)
    return -1j * (np.kron(h, eye) - np.kron(eye, h.T))


def sandwich_superop(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Superoperator of rho -> left @ rho @ right on row-major vec(rho)."""
    return np.kron(left, right.T)


@dataclass
class BlochGenerator:
    """d rho/dt = -i [H^r, rho] + Gamma rho with Gamma given as a superoperator."""

    hr: np.ndarray
    dissipator: np.ndarray

    def __post_init__(self):
        self.hr = hermitian(self.hr)
        n = self.hr.shape[0]
        self.dissipator = np.asarray(self.dissipator, dtype=complex)
        if self.dissipator.shape != (n * n, n * n):
            raise ValueError("dissipator must be an n^2 x n^2 superoperator")

    @classmethod
    def from_tensor(cls, hr, gamma_tensor) -> "BlochGenerator":
        """Gamma_{ab,cd}: d rho_ab/dt += Gamma_{ab,cd} rho_cd."""
        g = np.asarray(gamma_tensor, dtype=complex)
        n = g.shape[0]
        return cls(hr, g.reshape(n * n, n * n))

    @property
    def superoperator(self) -> np.ndarray:
        return commutator_superop(self.hr) + self.dissipator


def solve_bloch(gen: BlochGenerator, rho0, t: float) -> np.ndarray:
    rho0 = hermitian(rho0)
    n = rho0.shape[0]
    v = la.expm(gen.superoperator * t) @ rho0.reshape(-1)
    r = v.reshape(n, n)
    return 0.5 * (r + r.conj().T)


def bloch_steady_state(gen: BlochGenerator, tol: float = 1e-9) -> np.ndarray:
    """Unique trace-one null vector of the Bloch superoperator."""
    sup = gen.superoperator
    n = gen.hr.shape[0]
    s = la.svdvals(sup)
    if np.sum(s < tol * max(1.0, s.max())) > 1:
        raise DegenerateNullSpace("Bloch generator has a degenerate null space")
    null = la.null_space(sup, rcond=tol)
    if null.shape[1] == 0:
        _, _, vh = la.svd(sup)
        null = vh[-1].conj()[:, None]
    r = null[:, 0].reshape(n, n)
    r = r / np.trace(r)
    return 0.5 * (r + r.conj().T)


def solve_memory_kernel(kernel: Callable[[float], np.ndarray], p0, t: float, dt: float) -> np.ndarray:
    """Reference solver for dp/dt = int_0^t K(tau) p(t - tau) dtau (trapezoid in tau, Heun in t)."""
    n = int(np.ceil(t / dt))
    h = t / n if n else 0.0
    ks = [np.asarray(kernel(k * h)) for k in range(n + 1)]
    ps = [np.asarray(p0, dtype=complex)]

    def rhs(j, pj_override=None):
        hist = ps[: j] + [pj_override if pj_override is not None else ps[j]]
        if j == 0:
            return np.zeros_like(ps[0])
        acc = 0.5 * (ks[0] @ hist[j] + ks[j] @ hist[0])
        for k in range(1, j):
            acc = acc + ks[k] @ hist[j - k]
        return h * acc

    for j in range(n):
        f0 = rhs(j)
        ps.append(ps[j] + h * f0)
        f1 = rhs(j + 1, ps[j + 1])
        ps[j + 1] = ps[j] + 0.5 * h * (f0 + f1)
    return ps[-1]
