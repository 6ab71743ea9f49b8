"""Exact evolution of bipartite density matrices.

This is the brute-force reference every perturbative formula is checked
against. Time stepping is fixed-step and midpoint-sampled,
``U_step = exp(-i H(tau + dt/2) dt)``, so the global error is O(dt^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la

from .core import BipartiteSystem, FlowReport, density_matrix, hermitian, partial_trace, renyi_entropy


class StabilityError(ValueError):
    """dt * max|H| exceeds the stability guard."""


class FlowNotStationary(RuntimeError):
    pass


STABILITY_GUARD = 0.1


@dataclass(frozen=True)
class SwitchingProfile:
    """Coupling envelope g(tau) = exp(rate * (tau - t_full)) for tau <= t_full, 1 afterwards.

    ``t_full=None`` means the envelope reaches 1 at the job's end time.
    """

    kind: str = "none"
    rate: float = 0.0
    t_full: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("none", "exponential"):
            raise ValueError(f"unknown switching kind {self.kind!r}")
        if self.kind == "exponential" and not self.rate > 0:
            raise ValueError("exponential switching needs rate > 0")

    def envelope(self, tau, t_full: float):
        if self.kind == "none":
            return np.ones_like(np.asarray(tau, dtype=float))
        tf = t_full if self.t_full is None else self.t_full
        return np.exp(self.rate * np.minimum(np.asarray(tau, dtype=float) - tf, 0.0))


def default_switching(system: BipartiteSystem) -> SwitchingProfile:
    """Rate 0.05 x the smallest nonzero Bohr frequency of H_A + H_B."""
    return SwitchingProfile("exponential", 0.05 * system.smallest_bohr_frequency())


@dataclass(frozen=True)
class EvolutionJob:
    system: BipartiteSystem
    initial: np.ndarray
    t_start: float
    t_end: float
    dt: float
    switching: SwitchingProfile = SwitchingProfile()
    drive_A: Optional[Callable[[float], np.ndarray]] = None
    drive_B: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "initial", density_matrix(self.initial))
        if self.initial.shape[0] != self.system.dimA * self.system.dimB:
            raise ValueError("initial state dimension does not match the system")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end < t_start")
        hmax = np.max(np.abs(self.hamiltonian(self.t_start, envelope=1.0)))
        if self.dt * hmax > STABILITY_GUARD:
            raise StabilityError(f"dt * max|H| = {self.dt * hmax:.3g} > {STABILITY_GUARD}")

    @property
    def t_full(self) -> float:
        return self.t_end if self.switching.t_full is None else self.switching.t_full

    def envelope(self, tau):
        return self.switching.envelope(tau, self.t_full)

    def hamiltonian(self, tau: float, envelope: Optional[float] = None) -> np.ndarray:
        s = self.system
        g = float(self.envelope(tau)) if envelope is None else envelope
        h = s.h0() + (g * s.lam) * s.coupling_operator()
        if self.drive_A is not None:
            h = h + np.kron(hermitian(self.drive_A(tau)), np.eye(s.dimB))
        if self.drive_B is not None:
            h = h + np.kron(np.eye(s.dimA), hermitian(self.drive_B(tau)))
        return h

    def with_initial(self, r) -> "EvolutionJob":
        return EvolutionJob(self.system, r, self.t_start, self.t_end, self.dt, self.switching,
                            self.drive_A, self.drive_B)


@dataclass(frozen=True)
class CountingConfig:
    """Counting field ``chi`` for the observable ``oA`` on A, active inside ``window``."""

    oA: np.ndarray
    chi: complex
    window: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "oA", hermitian(self.oA))
        if not self.window[0] <= self.window[1]:
            raise ValueError("counting window must be ordered")
        if not np.isfinite(self.chi):
            raise ValueError("chi must be finite")


def _herm_exp(h: np.ndarray, factor: complex) -> np.ndarray:
    """exp(factor * h) for Hermitian h."""
    e, v = la.eigh(h)
    return (v * np.exp(factor * e)) @ v.conj().T


def _static(job: EvolutionJob) -> bool:
    return (job.switching.kind == "none" and job.drive_A is None and job.drive_B is None)


class _Propagator:
    """Advances a (pseudo-)density matrix through a job's time grid."""

    def __init__(self, job: EvolutionJob, counting: Optional[CountingConfig] = None):
        self.job = job
        self.counting = counting
        self._cache: dict = {}
        if counting is not None:
            oa = np.kron(counting.oA, np.eye(job.system.dimB))
            e, v = la.eigh(oa)
            chi = counting.chi
            # U_A(x) = exp(i x O_A); chi may be complex so these need not be unitary.
            self._up = (v * np.exp(0.5j * chi * e)) @ v.conj().T
            self._um = (v * np.exp(-0.5j * chi * e)) @ v.conj().T

    def _counting_active(self, tau: float) -> bool:
        c = self.counting
        return c is not None and c.chi != 0 and c.window[0] <= tau <= c.window[1]

    def _steps(self, tau: float, h: float):
        """(left, right) factors for one step starting at tau."""
        mid = tau + 0.5 * h
        counting = self._counting_active(mid)
        key = (h, counting)
        if _static(self.job) and key in self._cache:
            return self._cache[key]
        ham = self.job.hamiltonian(mid)
        if counting:
            hp = self._up @ ham @ self._um
            hm = self._um @ ham @ self._up
            left = la.expm(-1j * h * hp)
            right = la.expm(1j * h * hm)
        else:
            left = _herm_exp(ham, -1j * h)
            right = left.conj().T
        if _static(self.job):
            self._cache[key] = (left, right)
        return left, right

    def advance(self, r: np.ndarray, t0: float, t1: float) -> np.ndarray:
        if t1 < t0:
            raise ValueError("cannot evolve backwards")
        if t1 == t0:
            return r
        # split at counting-window edges so the field switches exactly there
        cuts = [t0, t1]
        if self.counting is not None:
            cuts += [w for w in self.counting.window if t0 < w < t1]
        cuts = sorted(set(cuts))
        for a, b in zip(cuts[:-1], cuts[1:]):
            n = max(1, int(np.ceil((b - a) / self.job.dt - 1e-9)))
            h = (b - a) / n
            for k in range(n):
                left, right = self._steps(a + k * h, h)
                r = left @ r @ right
        return r


def evolve_unitary(job: EvolutionJob) -> np.ndarray:
    """R(t_end) = U R(t_start) U^dagger."""
    return _Propagator(job).advance(job.initial.copy(), job.t_start, job.t_end)


def evolve_extended(job: EvolutionJob, counting: CountingConfig) -> np.ndarray:
    """Two-sided evolution with H+ on kets and H- on bras; returns the pseudo-density matrix.

    H+- = U_A(+-chi/2) H U_A(-+chi/2) with U_A(x) = exp(i x O_A). The bra
    factor is continued analytically in chi (not complex-conjugated), so the
    trace is the characteristic function of the O_A transfer for any complex chi.
    """
    return _Propagator(job, counting).advance(job.initial.copy(), job.t_start, job.t_end)


def sample_states(job: EvolutionJob, times: Sequence[float],
                  counting: Optional[CountingConfig] = None) -> list[np.ndarray]:
    """States at the requested times (any order), from one pass of the integrator."""
    times = np.asarray(times, dtype=float)
    order = np.argsort(times)
    if times.size and times[order[0]] < job.t_start:
        raise ValueError("sample time before t_start")
    prop = _Propagator(job, counting)
    r, t = job.initial.copy(), job.t_start
    out: list = [None] * len(times)
    for idx in order:
        r = prop.advance(r, t, times[idx])
        t = times[idx]
        out[idx] = r
    return out


def reduced_renyi_a(m: int, dims) -> Callable[[np.ndarray], float]:
    def fn(r):
        return renyi_entropy(partial_trace(r, dims, "A"), m)
    return fn


def stencil_step(job: EvolutionJob) -> float:
    """Half-spacing of the derivative stencil.

    With exponential switching the whole stencil must sit where the
    envelope is within 1e-6 of one; otherwise 2% of the shortest
    relaxation time (1 / largest Bohr frequency).
    """
    if job.switching.kind == "exponential":
        return 0.25e-6 / job.switching.rate
    e = np.linalg.eigvalsh(job.system.h0())
    spread = max(e[-1] - e[0], 1e-12)
    return 0.02 / spread / 4


def _stencil_slope(f, h: float, check: bool = True) -> tuple[float, float]:
    """Five-point slope of samples at -2h, -h, +h, +2h and its gap to the three-point one."""
    slope5 = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h)
    slope3 = (f[2] - f[1]) / (2 * h)
    resid = abs(slope5 - slope3)
    if check and resid > 0.1 * abs(slope5) and resid > 1e-9:
        raise FlowNotStationary(f"stencil residual {resid:.3e} vs slope {slope5:.3e}")
    return float(slope5), float(resid)


_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])


def log_derivative(job: EvolutionJob, fn: Callable[[np.ndarray], float], t_center: float,
                   h: Optional[float] = None, check: bool = True) -> tuple[float, float]:
    """Five-point central difference of ln fn(R(t)) at ``t_center``.

    Returns (slope, residual), the residual being the disagreement with the
    three-point estimate. Raises FlowNotStationary when it exceeds 10% of
    the slope (and an absolute floor of 1e-9).
    """
    return log_derivatives(job, fn, [t_center], h, check)[0]


def log_derivatives(job: EvolutionJob, fn: Callable[[np.ndarray], float], centers: Sequence[float],
                    h: Optional[float] = None, check: bool = True) -> list[tuple[float, float]]:
    """log_derivative at several centers from a single pass of the integrator."""
    h = stencil_step(job) if h is None else h
    centers = np.asarray(centers, dtype=float)
    ts = (centers[:, None] + h * _OFFSETS[None, :]).ravel()
    states = sample_states(job, ts)
    f = np.log([fn(r) for r in states]).reshape(len(centers), 4)
    return [_stencil_slope(row, h, check) for row in f]


def oracle_renyi_flow(job: EvolutionJob, m: int, probe_times: Optional[Sequence[float]] = None,
                      h: Optional[float] = None, subsystem: str = "A") -> FlowReport:
    """F_M = d/dt ln Tr[(Tr_B R)^M] from exact evolution.

    The default probe sits so the stencil ends at ``t_end``. Several probe
    times are averaged.
    """
    h = stencil_step(job) if h is None else h
    if probe_times is None:
        probe_times = [job.t_end - 2 * h]
    for t in probe_times:
        if job.switching.kind == "exponential" and job.envelope(t - 2 * h) < 1 - 1e-6:
            raise ValueError(f"probe time {t} is inside the switching ramp")
    dims = job.system.dims

    def fn(r):
        return renyi_entropy(partial_trace(r, dims, subsystem), m)

    slopes, resids = zip(*log_derivatives(job, fn, probe_times, h))
    return FlowReport(m, float(np.mean(slopes)), "oracle",
                      {"residual": float(max(resids)), "probe_times": list(map(float, probe_times)),
                       "slopes": list(slopes), "dt": job.dt, "h": h})
