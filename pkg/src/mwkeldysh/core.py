"""Dense complex-matrix foundation for bipartite systems.

Composite indices are A-major: the basis state |a, alpha> of A (x) B has
flat index ``a * dimB + alpha``. Units are hbar = k_B = 1 throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la

HERMITIAN_RTOL = 1e-12
PSD_TOL = 1e-10
TRACE_TOL = 1e-10
ZERO_EIG = 1e-14


class DimensionError(ValueError):
    pass


class NotPhysicalError(ValueError):
    """A matrix violates a density-matrix or Hermiticity invariant."""


def as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=complex)
    if m.ndim != 2 or m.size == 0:
        raise DimensionError(f"expected a non-empty 2D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    return m


def is_hermitian(m: np.ndarray) -> bool:
    scale = max(np.max(np.abs(m)), 1e-300)
    return m.shape[0] == m.shape[1] and np.max(np.abs(m - m.conj().T)) <= HERMITIAN_RTOL * scale


def hermitian(x) -> np.ndarray:
    """Validate and return a Hermitian operator as a complex array."""
    m = as_matrix(x)
    if m.shape[0] != m.shape[1]:
        raise DimensionError("Hermitian operator must be square")
    if not is_hermitian(m):
        raise NotPhysicalError("operator is not Hermitian")
    return m


def density_matrix(x) -> np.ndarray:
    """Validate a density matrix. Inputs outside tolerance are rejected, never clipped."""
    m = as_matrix(x)
    if m.shape[0] != m.shape[1]:
        raise DimensionError("density matrix must be square")
    if np.max(np.abs(m - m.conj().T)) > PSD_TOL:
        raise NotPhysicalError("density matrix is not Hermitian")
    tr = np.trace(m).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise NotPhysicalError(f"density matrix trace {tr!r} != 1")
    evals = la.eigvalsh(0.5 * (m + m.conj().T))
    if evals.min() < -PSD_TOL:
        raise NotPhysicalError(f"density matrix has negative eigenvalue {evals.min():.3e}")
    return m


def tensor_product(x, y) -> np.ndarray:
    """Kronecker product, first factor major."""
    return np.kron(as_matrix(x), as_matrix(y))


def _check_dims(r: np.ndarray, dims: tuple[int, int]) -> tuple[int, int]:
    dA, dB = (int(d) for d in dims)
    if r.shape != (dA * dB, dA * dB):
        raise DimensionError(f"matrix shape {r.shape} does not match dims {dims}")
    return dA, dB


def partial_trace(r, dims: tuple[int, int], keep: str = "A") -> np.ndarray:
    """Reduced matrix on ``keep`` ("A" or "B") of an operator on A (x) B."""
    r = as_matrix(r)
    dA, dB = _check_dims(r, dims)
    t = r.reshape(dA, dB, dA, dB)
    if keep == "A":
        return np.einsum("ajbj->ab", t)
    if keep == "B":
        return np.einsum("iaib->ab", t)
    raise ValueError(f"keep must be 'A' or 'B', got {keep!r}")


def thermal_state(h, beta: float) -> np.ndarray:
    """Gibbs state exp(-beta H)/Z; ``beta=np.inf`` gives the normalized ground-space projector."""
    h = hermitian(h)
    if np.isnan(beta) or beta < 0:
        raise ValueError("beta must be >= 0 or +inf")
    e, v = la.eigh(h)
    if np.isinf(beta):
        scale = max(1.0, np.max(np.abs(e)))
        w = (e - e[0] <= 1e-10 * scale).astype(float)
    else:
        w = np.exp(-beta * (e - e[0]))
    w /= w.sum()
    return (v * w) @ v.conj().T


def gibbs_weights(energies: Sequence[float], beta: float) -> np.ndarray:
    """Boltzmann probabilities of a list of energies (shifted before exponentiating)."""
    e = np.asarray(energies, dtype=float)
    if np.isinf(beta):
        w = (e - e.min() <= 1e-10 * max(1.0, np.abs(e).max())).astype(float)
    else:
        w = np.exp(-beta * (e - e.min()))
    return w / w.sum()


def log_partition(energies: Sequence[float], beta: float) -> float:
    e = np.asarray(energies, dtype=float)
    emin = e.min()
    return float(-beta * emin + np.log(np.sum(np.exp(-beta * (e - emin)))))


def renyi_entropy(r, m: int) -> float:
    """S_M = Tr[r^M] (the trace of the M-th power, not its logarithm)."""
    if int(m) != m or m < 1:
        raise ValueError("m must be an integer >= 1")
    r = as_matrix(r)
    return float(np.trace(np.linalg.matrix_power(r, int(m))).real)


def shannon_entropy(r) -> float:
    p = la.eigvalsh(hermitian(r))
    p = p[p > ZERO_EIG]
    return float(-np.sum(p * np.log(p)))


def conserved_measure_k(r, dims: tuple[int, int]) -> complex:
    """K = sum R[a al, b ga] R[b be, c al] R[c ga, a be] over all six indices."""
    r = as_matrix(r)
    dA, dB = _check_dims(r, dims)
    t = r.reshape(dA, dB, dA, dB)
    return complex(np.einsum("apbg,bqcp,cgaq->", t, t, t))


def matrix_power(r, m: float) -> np.ndarray:
    """Real power of a Hermitian PSD matrix via eigendecomposition; zero modes stay zero."""
    if m <= 0:
        raise ValueError("m must be positive")
    r = hermitian(r)
    e, v = la.eigh(r)
    if float(m) != int(m) and e.min() < -PSD_TOL:
        raise NotPhysicalError("non-integer power of a matrix with negative eigenvalues")
    e = np.where(np.abs(e) < ZERO_EIG, 0.0, e)
    if float(m) == int(m):
        pw = e ** int(m)
    else:
        pw = np.where(e > 0, np.abs(e) ** m, 0.0)
    return (v * pw) @ v.conj().T


# --- common operators -------------------------------------------------------

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def pauli(name: str) -> np.ndarray:
    return PAULI[name.lower()].copy()


def bosonic_annihilation(n: int) -> np.ndarray:
    """Truncated annihilation operator on ``n`` Fock states."""
    return np.diag(np.sqrt(np.arange(1, n)), 1).astype(complex)


def random_hermitian(d: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * 0.5 * (x + x.conj().T)


def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    x = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(x)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_density_matrix(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    k = d if rank is None else rank
    g = rng.normal(size=(d, k)) + 1j * rng.normal(size=(d, k))
    r = g @ g.conj().T
    return r / np.trace(r).real


def offdiagonal_in_eigenbasis(op: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Remove the diagonal of ``op`` in the eigenbasis of ``h``.

    For a degenerate ``h`` the whole degenerate block is removed, which is
    what the bipartite coupling invariant needs.
    """
    e, v = la.eigh(h)
    o = v.conj().T @ op @ v
    scale = max(1.0, np.max(np.abs(e)))
    same = np.abs(e[:, None] - e[None, :]) <= 1e-10 * scale
    o[same] = 0.0
    return v @ o @ v.conj().T


@dataclass(frozen=True)
class BipartiteSystem:
    """H = H_A + H_B + lam * sum_i A_i (x) B_i."""

    hA: np.ndarray
    hB: np.ndarray
    couplings: tuple[tuple[np.ndarray, np.ndarray], ...] = ()
    lam: float = 1.0
    eigenbasis_tol: float = 1e-10
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "hA", hermitian(self.hA))
        object.__setattr__(self, "hB", hermitian(self.hB))
        cs = []
        for a_op, b_op in self.couplings:
            a_op, b_op = hermitian(a_op), hermitian(b_op)
            if a_op.shape != self.hA.shape or b_op.shape != self.hB.shape:
                raise DimensionError("coupling operator dimension mismatch")
            for op, h, name in ((a_op, self.hA, "A"), (b_op, self.hB, "B")):
                if not self._offdiagonal(op, h):
                    raise NotPhysicalError(
                        f"coupling operator on {name} has diagonal elements in the {name} eigenbasis"
                    )
            cs.append((a_op, b_op))
        object.__setattr__(self, "couplings", tuple(cs))

    def _offdiagonal(self, op, h) -> bool:
        e, v = la.eigh(h)
        o = v.conj().T @ op @ v
        scale = max(1.0, np.max(np.abs(e)))
        same = np.abs(e[:, None] - e[None, :]) <= 1e-10 * scale
        return bool(np.max(np.abs(o[same]), initial=0.0) <= self.eigenbasis_tol * max(1.0, np.max(np.abs(o))))

    @property
    def dimA(self) -> int:
        return self.hA.shape[0]

    @property
    def dimB(self) -> int:
        return self.hB.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.dimA, self.dimB

    def with_lambda(self, lam: float) -> "BipartiteSystem":
        return BipartiteSystem(self.hA, self.hB, self.couplings, lam)

    def h0(self) -> np.ndarray:
        return np.kron(self.hA, np.eye(self.dimB)) + np.kron(np.eye(self.dimA), self.hB)

    def coupling_operator(self) -> np.ndarray:
        """sum_i A_i (x) B_i without the lam prefactor."""
        v = np.zeros((self.dimA * self.dimB,) * 2, dtype=complex)
        for a_op, b_op in self.couplings:
            v += np.kron(a_op, b_op)
        return v

    def hamiltonian(self) -> np.ndarray:
        return self.h0() + self.lam * self.coupling_operator()

    def eig_A(self):
        if "A" not in self._cache:
            self._cache["A"] = la.eigh(self.hA)
        return self._cache["A"]

    def eig_B(self):
        if "B" not in self._cache:
            self._cache["B"] = la.eigh(self.hB)
        return self._cache["B"]

    def coupling_in_eigenbasis(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Coupling operators rotated into the H_A and H_B eigenbases."""
        _, vA = self.eig_A()
        _, vB = self.eig_B()
        return [(vA.conj().T @ a @ vA, vB.conj().T @ b @ vB) for a, b in self.couplings]

    def coupling_matrix_elements(self) -> np.ndarray:
        """lam * <a al| H_AB |b be> as a 4-index array [a, al, b, be] in the energy basis."""
        dA, dB = self.dims
        out = np.zeros((dA, dB, dA, dB), dtype=complex)
        for a, b in self.coupling_in_eigenbasis():
            out += np.einsum("ab,lm->albm", a, b)
        return self.lam * out

    def mean_level_spacing(self) -> float:
        e = np.sort(np.add.outer(self.eig_A()[0], self.eig_B()[0]).ravel())
        return float((e[-1] - e[0]) / max(len(e) - 1, 1))

    def smallest_bohr_frequency(self) -> float:
        e = np.add.outer(self.eig_A()[0], self.eig_B()[0]).ravel()
        d = np.abs(e[:, None] - e[None, :])
        d = d[d > 1e-9]
        return float(d.min()) if d.size else 1.0


@dataclass
class FlowReport:
    """A flow (1/time) of order ``m`` with the method that produced it."""

    m: float
    flow: float
    method: str
    breakdown: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.flow):
            raise ValueError(f"non-finite flow from {self.method}")
