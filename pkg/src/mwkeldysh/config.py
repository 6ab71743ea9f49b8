"""Scenario configuration: validation and construction of matrices, systems and states."""

from __future__ import annotations

from typing import Any

import numpy as np

from .core import (PAULI, BipartiteSystem, bosonic_annihilation, density_matrix, hermitian,
                   offdiagonal_in_eigenbasis, random_hermitian, thermal_state)

KINDS = ("simulate", "flows", "fcs", "kms-check", "qhe", "correspond", "patterns")


class SchemaError(ValueError):
    """Configuration problem; ``path`` points at the offending key."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def require(cfg: dict, key: str, path: str) -> Any:
    if not isinstance(cfg, dict) or key not in cfg:
        raise SchemaError(f"{path}.{key}" if path else key, "missing required key")
    return cfg[key]


def number(x, path: str, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise SchemaError(path, f"expected a number, got {x!r}")
    x = float(x)
    if not np.isfinite(x):
        raise SchemaError(path, "must be finite")
    if positive and not x > 0:
        raise SchemaError(path, "must be positive")
    if nonneg and x < 0:
        raise SchemaError(path, "must be nonnegative")
    return x


def axis(cfg: dict, key: str, path: str, default=None, integer: bool = False) -> list:
    """A sweep axis: a scalar or nonempty list of finite numbers."""
    full = f"{path}.{key}" if path else key
    if key not in (cfg or {}):
        if default is None:
            raise SchemaError(full, "missing required sweep axis")
        return list(default)
    v = cfg[key]
    vals = v if isinstance(v, list) else [v]
    if not vals:
        raise SchemaError(full, "sweep axis is empty")
    out = [number(x, f"{full}[{i}]") for i, x in enumerate(vals)]
    if integer:
        if any(x != int(x) for x in out):
            raise SchemaError(full, "expected integers")
        out = [int(x) for x in out]
    return out


def matrix(spec, path: str, rng: np.random.Generator) -> np.ndarray:
    """Inline row-major list (entries numbers or [re, im] pairs) or a named generator."""
    if isinstance(spec, list):
        if not spec or not all(isinstance(r, list) and r for r in spec):
            raise SchemaError(path, "inline matrix must be a nonempty list of nonempty rows")
        n = len(spec[0])
        if any(len(r) != n for r in spec):
            raise SchemaError(path, "ragged inline matrix")
        out = np.zeros((len(spec), n), dtype=complex)
        for i, row in enumerate(spec):
            for j, x in enumerate(row):
                p = f"{path}[{i}][{j}]"
                if isinstance(x, list):
                    if len(x) != 2:
                        raise SchemaError(p, "complex entries are [re, im] pairs")
                    out[i, j] = number(x[0], p) + 1j * number(x[1], p)
                else:
                    out[i, j] = number(x, p)
        return out
    if not isinstance(spec, dict):
        raise SchemaError(path, "expected an inline matrix or a generator mapping")
    gen = require(spec, "generator", path)
    scale = number(spec.get("scale", 1.0), f"{path}.scale")
    if gen == "pauli":
        name = require(spec, "name", path)
        if name not in PAULI:
            raise SchemaError(f"{path}.name", f"unknown Pauli matrix {name!r}")
        return scale * PAULI[name]
    if gen == "random-hermitian":
        dim = int(number(require(spec, "dim", path), f"{path}.dim", positive=True))
        seed = spec.get("seed")
        g = rng if seed is None else np.random.default_rng(int(number(seed, f"{path}.seed")))
        return random_hermitian(dim, g, scale)
    if gen == "bosonic-truncated":
        n = int(number(require(spec, "n", path), f"{path}.n", positive=True))
        a = bosonic_annihilation(n)
        which = spec.get("op", "x")
        ops = {"a": a, "adag": a.conj().T, "x": a + a.conj().T, "n": a.conj().T @ a}
        if which not in ops:
            raise SchemaError(f"{path}.op", f"unknown bosonic operator {which!r}")
        return scale * ops[which]
    if gen == "diag":
        vals = axis(spec, "values", path)
        return scale * np.diag(vals).astype(complex)
    raise SchemaError(f"{path}.generator", f"unknown generator {gen!r}")


def system(cfg: dict, path: str, rng: np.random.Generator, lam: float = 1.0) -> BipartiteSystem:
    hA = hermitian(matrix(require(cfg, "hA", path), f"{path}.hA", rng))
    hB = hermitian(matrix(require(cfg, "hB", path), f"{path}.hB", rng))
    raw = require(cfg, "couplings", path)
    if not isinstance(raw, list) or not raw:
        raise SchemaError(f"{path}.couplings", "need a nonempty list of [A, B] pairs")
    project = bool(cfg.get("project_offdiagonal", False))
    pairs = []
    for i, pair in enumerate(raw):
        if not isinstance(pair, list) or len(pair) != 2:
            raise SchemaError(f"{path}.couplings[{i}]", "each coupling is an [A, B] pair")
        a = hermitian(matrix(pair[0], f"{path}.couplings[{i}][0]", rng))
        b = hermitian(matrix(pair[1], f"{path}.couplings[{i}][1]", rng))
        if project:
            a, b = offdiagonal_in_eigenbasis(a, hA), offdiagonal_in_eigenbasis(b, hB)
        pairs.append((a, b))
    try:
        return BipartiteSystem(hA, hB, pairs, lam)
    except ValueError as exc:
        raise SchemaError(f"{path}.couplings", str(exc)) from exc


def state(spec, path: str, h: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """{thermal: beta} | {ground: true} | {populations: [...]} (in the eigenbasis of h) | inline matrix."""
    if isinstance(spec, list):
        try:
            return density_matrix(matrix(spec, path, rng))
        except ValueError as exc:
            raise SchemaError(path, str(exc)) from exc
    if not isinstance(spec, dict):
        raise SchemaError(path, "expected a state mapping or inline matrix")
    if "thermal" in spec:
        beta = spec["thermal"]
        b = np.inf if beta == "inf" else number(beta, f"{path}.thermal", nonneg=True)
        return thermal_state(h, b)
    if spec.get("ground"):
        return thermal_state(h, np.inf)
    if "populations" in spec:
        p = np.array(axis(spec, "populations", path))
        if len(p) != h.shape[0] or np.any(p < 0) or abs(p.sum() - 1) > 1e-10:
            raise SchemaError(f"{path}.populations", "need a probability vector of the right length")
        _, v = np.linalg.eigh(hermitian(h))
        return (v * p) @ v.conj().T
    raise SchemaError(path, "unknown state specification")
