"""Backend selection and problem assembly for the master-equation integrator.

The compiled extension is preferred; the pure-Python implementation is a
drop-in fallback selected at import time (or forced with backend="python").
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._ref import IntegrationError, integrate_py

try:  # compiled core is optional at runtime
    from . import _core

    HAVE_COMPILED = True
except ImportError:  # pragma: no cover - depends on build environment
    _core = None
    HAVE_COMPILED = False

DEFAULT_BACKEND = "compiled" if HAVE_COMPILED else "python"
_CARRIER_RESOLUTION = 50  # minimum steps per period of the fastest carrier


@dataclass
class Problem:
    """Assembled integrator inputs: additive Hamiltonian terms and dissipator rates.

    term_mats[0] is the static Hamiltonian in the rotating frame (real,
    symmetric); subsequent terms are drive matrices whose scalar profiles are
    envelope * carrier.  ``drive_params`` rows are
    (omega_d, phase, delay, rise, hold, total).
    """

    dim: int
    omega_rot: float
    term_mats: np.ndarray
    drive_params: np.ndarray
    rates: tuple[float, float, float]
    bands: np.ndarray = field(init=False)

    def __post_init__(self):
        n_terms = self.term_mats.shape[0]
        n_off = self.dim  # keep all offsets up to dim-1; zero rows cost nothing
        # trim to the largest nonzero offset across terms
        max_off = 0
        for k in range(n_terms):
            for d in range(self.dim - 1, 0, -1):
                if np.any(np.abs(np.diagonal(self.term_mats[k], d)) > 0):
                    max_off = max(max_off, d)
                    break
        n_off = max_off + 1
        bands = np.zeros((n_terms, n_off, self.dim))
        for k in range(n_terms):
            for d in range(n_off):
                diag = np.diagonal(self.term_mats[k], d)
                bands[k, d, : self.dim - d] = diag.real
        self.bands = np.ascontiguousarray(bands)

    def default_max_step(self) -> float:
        """Fifty steps per period of the fastest carrier; unbounded when undriven.

        Error control normally binds tighter; the cap guards against carrier
        aliasing at loose tolerances.
        """
        omegas = [abs(w) for w in self.drive_params[:, 0]] if len(self.drive_params) else []
        if omegas:
            return 2.0 * math.pi / (_CARRIER_RESOLUTION * max(omegas))
        return math.inf


def integrate_problem(
    problem: Problem,
    sigma0: np.ndarray,
    t_samples: np.ndarray,
    rtol: float = 1e-8,
    atol: float = 1e-12,
    max_step: float | None = None,
    backend: str = "auto",
):
    """Run the integrator, returning (states, n_steps, n_rhs)."""
    if backend == "auto":
        backend = DEFAULT_BACKEND
    if max_step is None:
        max_step = problem.default_max_step()
    sigma0 = np.ascontiguousarray(sigma0, dtype=complex)
    # symmetrize: the banded commutator assumes a Hermitian state
    sigma0 = 0.5 * (sigma0 + sigma0.conj().T)
    t_samples = np.ascontiguousarray(t_samples, dtype=float)
    if np.any(np.diff(t_samples) < 0):
        raise ValueError("t_samples must be non-decreasing")

    if backend == "compiled":
        if not HAVE_COMPILED:  # pragma: no cover
            raise RuntimeError("compiled core unavailable; rebuild or use backend='python'")
        return _core.integrate_c(
            problem.bands,
            np.ascontiguousarray(problem.drive_params),
            problem.omega_rot,
            problem.rates,
            sigma0,
            t_samples,
            rtol,
            atol,
            max_step,
        )
    if backend == "python":
        return integrate_py(
            problem.term_mats,
            problem.drive_params,
            problem.omega_rot,
            problem.rates,
            sigma0,
            t_samples,
            rtol,
            atol,
            max_step,
        )
    raise ValueError(f"unknown backend {backend!r}")
