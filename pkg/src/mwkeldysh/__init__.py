"""Multi-world Keldysh toolkit: exact evolution, Renyi flows, counting statistics."""

__version__ = "0.1.0"

from . import core, correspondence, dynamics, kms, master, multiworld, perturbative, qhe  # noqa: E402,F401

__all__ = ["core", "correspondence", "dynamics", "kms", "master", "multiworld", "perturbative", "qhe",
           "__version__"]
