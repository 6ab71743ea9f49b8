"""Contour reconnection across parallel worlds.

A pattern closes the M replica contours at the observation time. For each
subsystem X it is a permutation pi_X of the worlds: the bra index of world
m on X is contracted with the ket index of world pi_X(m). Closing X within
each world is the identity; one loop through all worlds is a cycle.

    value = sum prod_m R_m[(a_m, al_m), (a_{pi_A(m)}, al_{pi_B(m)})]
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import FlowReport, density_matrix
from .dynamics import EvolutionJob, log_derivatives, stencil_step


class InvalidPattern(ValueError):
    pass


def _check_perm(p, m: int) -> tuple[int, ...]:
    p = tuple(int(x) for x in p)
    if len(p) != m or sorted(p) != list(range(m)):
        raise InvalidPattern(f"{p} is not a permutation of {m} worlds "
                             "(every index must be contracted exactly once)")
    return p


@dataclass(frozen=True)
class ReconnectionPattern:
    m: int
    perm_a: tuple
    perm_b: tuple
    name: str = "custom"

    def __post_init__(self):
        if self.m < 1:
            raise InvalidPattern("need at least one world")
        object.__setattr__(self, "perm_a", _check_perm(self.perm_a, self.m))
        object.__setattr__(self, "perm_b", _check_perm(self.perm_b, self.m))

    @classmethod
    def renyi_a(cls, m: int) -> "ReconnectionPattern":
        """One loop through all worlds on A, per-world closure on B: Tr[(Tr_B R)^M]."""
        return cls(m, _cycle(m, 1), tuple(range(m)), "renyi-A")

    @classmethod
    def renyi_b(cls, m: int) -> "ReconnectionPattern":
        return cls(m, tuple(range(m)), _cycle(m, 1), "renyi-B")

    @classmethod
    def k_measure(cls) -> "ReconnectionPattern":
        """Three worlds, A looped forward and B looped backward."""
        return cls(3, _cycle(3, 1), _cycle(3, -1), "K")

    @classmethod
    def custom(cls, perm_a: Sequence[int], perm_b: Sequence[int]) -> "ReconnectionPattern":
        return cls(len(perm_a), tuple(perm_a), tuple(perm_b), "custom")

    def relabeled(self, shift: int) -> "ReconnectionPattern":
        """Same pattern with worlds renamed m -> m + shift (mod M)."""
        m = self.m
        src = [(k - shift) % m for k in range(m)]
        pa = tuple((self.perm_a[src[k]] + shift) % m for k in range(m))
        pb = tuple((self.perm_b[src[k]] + shift) % m for k in range(m))
        return ReconnectionPattern(m, pa, pb, self.name)


def _cycle(m: int, step: int) -> tuple:
    return tuple((k + step) % m for k in range(m))


@dataclass
class WorldEnsemble:
    """M replica states on A x B, stored per world."""

    states: list
    dims: tuple

    def __post_init__(self):
        self.states = [density_matrix(r) for r in self.states]
        n = self.dims[0] * self.dims[1]
        if any(r.shape != (n, n) for r in self.states):
            raise ValueError("replica dimension does not match dims")

    @classmethod
    def identical(cls, r, dims, m: int) -> "WorldEnsemble":
        return cls([r] * m, tuple(dims))

    @property
    def m(self) -> int:
        return len(self.states)


def contract(states: Sequence[np.ndarray], dims, pat: ReconnectionPattern) -> complex:
    """Raw contraction without physicality checks (states may be pseudo-density matrices)."""
    m = pat.m
    if len(states) != m:
        raise InvalidPattern(f"pattern has {m} worlds, ensemble has {len(states)}")
    dA, dB = dims
    if 2 * m > len(string.ascii_letters):
        raise InvalidPattern("too many worlds for one contraction")
    la_, lb_ = string.ascii_letters[:m], string.ascii_letters[m:2 * m]
    terms = []
    for k in range(m):
        terms.append(la_[k] + lb_[k] + la_[pat.perm_a[k]] + lb_[pat.perm_b[k]])
    ops = [np.asarray(r).reshape(dA, dB, dA, dB) for r in states]
    return complex(np.einsum(",".join(terms) + "->", *ops, optimize=True))


def evaluate_pattern(ens: WorldEnsemble, pat: ReconnectionPattern) -> complex:
    return contract(ens.states, ens.dims, pat)


def pattern_flow(job: EvolutionJob, pat: ReconnectionPattern,
                 probe_times: Optional[Sequence[float]] = None, h: Optional[float] = None) -> FlowReport:
    """d/dt ln|value| of a pattern on identical replicas of the evolving state."""
    h = stencil_step(job) if h is None else h
    if probe_times is None:
        probe_times = [job.t_end - 2 * h]
    for t in probe_times:
        if job.switching.kind == "exponential" and job.envelope(t - 2 * h) < 1 - 1e-6:
            raise ValueError(f"probe time {t} is inside the switching ramp")
    dims = job.system.dims

    def fn(r):
        return abs(contract([r] * pat.m, dims, pat))

    slopes, resids = zip(*log_derivatives(job, fn, probe_times, h))
    return FlowReport(pat.m, float(np.mean(slopes)), "oracle",
                      {"pattern": pat.name, "residual": float(max(resids)),
                       "probe_times": list(map(float, probe_times)), "h": h, "dt": job.dt})
