"""Energy-basis spectra of multi-world correlators and KMS-type identities.

Frequency convention: K(omega) = int dtau e^{i omega tau} Tr[A_i(0) R^N A_j(tau) R^{M-N}] / S_M,
so peaks sit at omega = E_n - E_m for the matrix element A_{i,nm} A_{j,mn}.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la
from scipy.special import logsumexp

from .core import hermitian, renyi_entropy, thermal_state
from .perturbative import delta


def bose(x):
    """n_B = 1/(e^x - 1) for the dimensionless argument x = beta * omega."""
    return 1.0 / np.expm1(np.asarray(x, dtype=float))


def log_z(energies, beta: float) -> float:
    return float(logsumexp(-beta * np.asarray(energies, dtype=float)))


def free_energy(energies, beta: float) -> float:
    """F(beta) = -ln Z(beta) / beta."""
    return -log_z(energies, beta) / beta


@dataclass
class SpectralData:
    """Thermal data of a finite system A at inverse temperature ``beta``."""

    hA: np.ndarray
    beta: float
    a_ops: Sequence[np.ndarray]
    eta: float
    broadening: str = "gaussian"

    def __post_init__(self):
        self.hA = hermitian(self.hA)
        e, v = la.eigh(self.hA)
        self.energies = e
        self._ops = np.array([v.conj().T @ hermitian(a) @ v for a in self.a_ops])

    def n_b(self, omegas, beta=None):
        b = self.beta if beta is None else beta
        return bose(b * np.asarray(omegas, dtype=float))

    def z(self, beta=None) -> float:
        return float(np.exp(log_z(self.energies, self.beta if beta is None else beta)))

    def free_energy(self, beta=None) -> float:
        return free_energy(self.energies, self.beta if beta is None else beta)

    def correlator(self, omegas, n: int, m: int, form: str = "factored", beta=None) -> np.ndarray:
        return _energy_sum(self.energies, self._ops, self.beta if beta is None else beta, n, m,
                           omegas, self.eta, self.broadening, form)

    def susceptibility(self, omegas, beta=None) -> np.ndarray:
        """chi~(omega, beta) = K^{0,1}_beta(omega) (e^{beta omega} - 1), shares broadening with K."""
        b = self.beta if beta is None else beta
        omegas = np.asarray(omegas, dtype=float)
        return self.correlator(omegas, 0, 1, "factored", b) * np.expm1(b * omegas)[None, None, :]


def _energy_sum(e, ops, beta, n, m, omegas, eta, broadening, form):
    if not 0 <= n <= m:
        raise ValueError("need 0 <= n <= m")
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    lz = log_z(e, m * beta)
    pn = np.exp(-m * beta * (e - e.min()) - (lz + m * beta * e.min()))  # e^{-M beta E_n} / Z(M beta)
    en, em = e[:, None], e[None, :]
    d = 2 * np.pi * delta(em[..., None] - en[..., None] + omegas, eta, broadening)  # [n, m, w]
    amp = np.einsum("inm,jmn->ijnm", ops, ops) * pn[None, None, :, None]
    if form == "factored":
        return np.einsum("ijnm,nmw->ijw", amp, d) * np.exp(beta * n * omegas)[None, None, :]
    if form == "exact":
        return np.einsum("ijnm,nm,nmw->ijw", amp, np.exp(-beta * n * (em - en)), d)
    raise ValueError(f"unknown form {form!r}")


def energy_basis_correlator(hA, a_ops, beta: float, n: int, m: int, omegas, eta: float,
                            form: str = "factored", broadening: str = "gaussian") -> np.ndarray:
    """K^{N,M}_ij(omega) as a double sum over eigenpairs of hA, shape (i, j, omega).

    ``form="factored"`` carries e^{beta N omega} outside the broadened delta;
    ``form="exact"`` keeps e^{-beta N (E_m - E_n)} inside, which is the true
    Fourier transform of the broadened time-domain correlator. They agree
    as eta -> 0.
    """
    return SpectralData(hA, beta, a_ops, eta, broadening).correlator(omegas, n, m, form)


def check_kms_multi(spec: SpectralData, omegas, n: int, m: int, corr=None) -> dict:
    """Residual of K^{N,M}(omega) = n_B(M beta omega) e^{beta N omega} chi~(omega, M beta).

    Relative to the peak |K|. ``corr`` defaults to the factored energy sum.
    omega = 0 must be excluded (n_B diverges there).
    """
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas == 0):
        raise ValueError("omega = 0 is singular for n_B")
    k = spec.correlator(omegas, n, m) if corr is None else np.asarray(corr)
    b = spec.beta
    rhs = (bose(m * b * omegas) * np.exp(b * n * omegas))[None, None, :] \
        * spec.susceptibility(omegas, m * b)
    peak = np.max(np.abs(k))
    res = np.max(np.abs(k - rhs)) / peak if peak > 0 else float(np.max(np.abs(rhs)))
    return {"residual": float(res), "peak": float(peak), "n": n, "m": m}


def renyi_free_energy_identity(hA, beta: float, m: int) -> dict:
    """ln S_M(beta) against M beta (F(beta) - F(M beta)) for a thermal state.

    Returns both sides and the residual; ``flipped_rhs`` is the opposite
    sign convention, M beta (F(M beta) - F(beta)), kept for reference.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    h = hermitian(hA)
    e = la.eigvalsh(h)
    lhs = float(np.log(renyi_entropy(thermal_state(h, beta), m)))
    rhs = m * beta * (free_energy(e, beta) - free_energy(e, m * beta))
    return {"lhs": lhs, "rhs": float(rhs), "flipped_rhs": float(-rhs), "residual": abs(lhs - rhs)}
