"""Static circuit model of a flux-biased SNAIL-terminated quarter-wave resonator.

Maps external flux and the microscopic circuit parameters (junction asymmetry,
Josephson energy, bare mode frequency and impedance) to the dressed mode
frequency, the zero-point phase participation and the static/drive-activated
nonlinear coefficients of the expanded oscillator Hamiltonian.

Unit conventions
----------------
* External flux ``phi_e`` is quoted in flux quanta on all public interfaces;
  trigonometric formulas use radians internally (factor 2*pi).
* Energies are angular frequencies (hbar = 1).  With the Cooper-pair charge
  2e as charge unit, impedance becomes dimensionless through
  ``Z -> Z * (2e)**2 / hbar``, i.e. Z divided by ~1027.046 ohm.
* ``g_ac`` coefficients are quoted per flux quantum of drive amplitude, so the
  flux derivative carries a 2*pi Jacobian from flux quanta to radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants
from scipy.optimize import brentq

__all__ = [
    "Z_UNIT_OHM",
    "CircuitParams",
    "ModeSolution",
    "TaylorCoefficients",
    "SolverError",
    "potential",
    "potential_minimum",
    "potential_derivatives",
    "resonator_frequency",
    "hamiltonian_coefficients",
    "domega0_dphi",
]

# Impedance quantum hbar/(2e)^2 that makes Z dimensionless in hbar = 2e = 1 units.
Z_UNIT_OHM = constants.hbar / (2.0 * constants.e) ** 2

_ROOT_MAXITER = 200
_MIN_SCAN_POINTS = 721


class SolverError(RuntimeError):
    """A bracketed root search failed to converge or found no sign change."""


@dataclass(frozen=True)
class CircuitParams:
    """Microscopic description of the SNAIL-terminated resonator.

    beta         -- junction asymmetry (small/large junction energy ratio)
    ej           -- large-junction Josephson energy, GHz (E_J / h)
    n_junctions  -- number of large junctions in the array
    omega_inf    -- bare (unloaded) lowest-mode angular frequency, rad/s
    impedance    -- bare resonator impedance, ohm
    """

    beta: float
    ej: float
    omega_inf: float
    impedance: float
    n_junctions: int = 3

    def __post_init__(self):
        if not self.n_junctions >= 1:
            raise ValueError("n_junctions must be >= 1")
        if not 0.0 < self.beta < 1.0 / self.n_junctions:
            raise ValueError(
                "beta must lie in (0, 1/n_junctions) for a single-well SNAIL "
                f"potential, got beta={self.beta} with n={self.n_junctions}"
            )
        if not self.ej > 0.0:
            raise ValueError("ej must be > 0")
        if not self.omega_inf > 0.0:
            raise ValueError("omega_inf must be > 0")
        if not self.impedance > 0.0:
            raise ValueError("impedance must be > 0")

    @property
    def ej_rad(self) -> float:
        """Josephson energy as an angular frequency, rad/s."""
        return 2.0 * math.pi * 1e9 * self.ej

    @property
    def z_dimensionless(self) -> float:
        """Impedance in hbar = 2e = 1 units."""
        return self.impedance / Z_UNIT_OHM


@dataclass(frozen=True)
class ModeSolution:
    """Dressed fundamental mode of the boundary-loaded resonator.

    omega0        -- dressed angular frequency, rad/s
    l_j           -- linearized SNAIL inductance, henry
    participation -- zero-point amplitude of the SNAIL phase (dimensionless)
    """

    omega0: float
    l_j: float
    participation: float


@dataclass(frozen=True)
class TaylorCoefficients:
    """Flux-dependent expansion of the driven-oscillator Hamiltonian.

    Arrays are indexed by derivative order n; index 0 is unused (kept 0).
    ``c[n]`` are dimensionless potential derivatives at the minimum,
    ``g_dc[n]`` static and ``g_ac[n]`` drive-activated coefficients in rad/s
    (the latter per flux quantum of ac drive amplitude).
    """

    phi_e: float
    phi_m: float
    c: np.ndarray
    g_dc: np.ndarray
    g_ac: np.ndarray
    omega0: float
    participation: float
    l_j: float
    n_max: int = field(default=6)

    @property
    def order(self) -> int:
        return len(self.c) - 1


def _phi_e_rad(phi_e: float) -> float:
    return 2.0 * math.pi * phi_e


def potential(phi, phi_e: float, params: CircuitParams):
    """SNAIL potential U/E_J at phase ``phi`` (rad) and flux ``phi_e`` (flux quanta)."""
    n = params.n_junctions
    pe = _phi_e_rad(phi_e)
    return -(params.beta * np.cos(phi) + n * np.cos((pe - phi) / n))


def _c_k(phi, phi_e_rad: float, beta: float, n: int, k: int):
    """k-th phase derivative of U/E_J at phase ``phi`` (k >= 1, exact closed form)."""
    u = (phi_e_rad - phi) / n
    half_pi_k = 0.5 * math.pi * k
    return -beta * np.cos(phi + half_pi_k) - n * (-1.0 / n) ** k * np.cos(u + half_pi_k)


def _dc_k_dphie(phi, phi_e_rad: float, n: int, k: int):
    """Partial flux derivative (radians, fixed phase) of the k-th potential derivative."""
    u = (phi_e_rad - phi) / n
    return (-1.0 / n) ** k * np.sin(u + 0.5 * math.pi * k)


def potential_minimum(phi_e: float, params: CircuitParams, tol: float = 1e-12) -> float:
    """Locate the global potential minimum phi_m (rad) on one 2*pi window.

    Solves beta*sin(phi_m) = sin((phi_e - phi_m)/n) by bracketed root finding,
    after a dense scan of the window centered on phi_e that both brackets every
    stationary point and confirms the returned root is the global minimum.
    """
    if not np.isfinite(phi_e):
        raise ValueError("phi_e must be finite")
    beta, n = params.beta, params.n_junctions
    pe = _phi_e_rad(phi_e)
    grid = pe + np.linspace(-math.pi, math.pi, _MIN_SCAN_POINTS)
    c1 = _c_k(grid, pe, beta, n, 1)

    sign_change = np.nonzero(np.diff(np.signbit(c1)))[0]
    if len(sign_change) == 0:
        raise SolverError(
            f"no stationary point bracketed for phi_e={phi_e}: "
            f"c1 range [{c1.min():.3e}, {c1.max():.3e}]"
        )
    roots = []
    for i in sign_change:
        try:
            root = brentq(
                lambda p: _c_k(p, pe, beta, n, 1),
                grid[i],
                grid[i + 1],
                xtol=tol,
                rtol=4 * np.finfo(float).eps,
                maxiter=_ROOT_MAXITER,
            )
        except (RuntimeError, ValueError) as exc:  # pragma: no cover - defensive
            raise SolverError(
                f"root refinement failed near phi={grid[i]:.6f} for phi_e={phi_e}: {exc}"
            ) from exc
        roots.append(root)

    energies = [potential(r, phi_e, params) for r in roots]
    phi_m = roots[int(np.argmin(energies))]

    residual = float(_c_k(phi_m, pe, beta, n, 1))
    if abs(residual) > 1e-10:
        raise SolverError(
            f"minimum residual {residual:.3e} exceeds tolerance at phi_e={phi_e}"
        )
    # Guard against a grid minimum the stationary-point scan missed.
    u_grid = potential(grid, phi_e, params)
    if potential(phi_m, phi_e, params) > u_grid.min() + 1e-9:
        raise SolverError(f"refined minimum is not global at phi_e={phi_e}")
    return phi_m


def potential_derivatives(
    phi_e: float, params: CircuitParams, max_order: int = 6
) -> np.ndarray:
    """Exact derivatives c_n = d^n(U/E_J)/dphi^n at the potential minimum.

    Returns an array of length ``max_order + 1``; entry 0 holds U/E_J at the
    minimum, entries 1..max_order the derivatives (c_1 vanishes by construction).
    """
    if max_order < 2:
        raise ValueError("max_order must be >= 2")
    phi_m = potential_minimum(phi_e, params)
    return _derivatives_at(phi_m, phi_e, params, max_order)


def _derivatives_at(
    phi_m: float, phi_e: float, params: CircuitParams, max_order: int
) -> np.ndarray:
    pe = _phi_e_rad(phi_e)
    c = np.zeros(max_order + 1)
    c[0] = potential(phi_m, phi_e, params)
    for k in range(1, max_order + 1):
        c[k] = _c_k(phi_m, pe, params.beta, params.n_junctions, k)
    return c


def _mode_from_c2(c2: float, params: CircuitParams) -> ModeSolution:
    if c2 <= 0.0:
        raise SolverError(f"unstable minimum: c2={c2:.3e} <= 0")
    z = params.z_dimensionless
    ej = params.ej_rad
    w_inf = params.omega_inf
    k = z * ej * c2  # = Z / L_J in rad/s with 1/L_J = E_J * c2

    def eq(w):
        return w / w_inf - (2.0 / math.pi) * math.atan(k / w)

    lo, hi = w_inf * 1e-12, w_inf * (1.0 - 1e-14)
    if eq(lo) * eq(hi) >= 0.0:
        raise SolverError("no sign change when bracketing the mode frequency")
    omega0 = brentq(eq, lo, hi, rtol=1e-13, maxiter=_ROOT_MAXITER)

    r = omega0 / w_inf
    x = math.pi * r
    sinc = math.sin(x) / x
    participation = math.sqrt(z / x * (1.0 + math.cos(x)) / (1.0 + sinc))
    l_j = Z_UNIT_OHM / (ej * c2)  # henry
    return ModeSolution(omega0=omega0, l_j=l_j, participation=participation)


def resonator_frequency(phi_e: float, params: CircuitParams) -> ModeSolution:
    """Dressed mode frequency, SNAIL inductance and participation at a flux bias.

    The frequency solves  omega0/omega_inf = (2/pi) * arctan(Z / (L_J omega0))
    on (0, omega_inf) with 1/L_J = E_J c_2, and the participation follows from
    the closed-form mode normalization of the boundary-loaded line.
    """
    c = potential_derivatives(phi_e, params, 2)
    return _mode_from_c2(c[2], params)


def hamiltonian_coefficients(
    phi_e: float, params: CircuitParams, n_max: int = 6
) -> TaylorCoefficients:
    """Full set of static and drive coefficients at a flux bias.

    g_dc[n] = E_J Phi^n/n! * c_n   (orders 1 and 2 vanish: the linear term is
    zero at the minimum and the quadratic part is absorbed into omega0).

    g_ac[n] = 2*pi * E_J Phi^n/n! * d(c_n)/d(phi_e)  with the flux derivative
    taken at fixed phase and evaluated at the static minimum: a drive modulates
    the potential landscape seen by the mode, it does not re-expand the
    operator around the instantaneous minimum.  The 2*pi converts to a
    per-flux-quantum drive amplitude.
    """
    if n_max < 3:
        raise ValueError("n_max must be >= 3")
    phi_m = potential_minimum(phi_e, params)
    c = _derivatives_at(phi_m, phi_e, params, n_max)
    mode = _mode_from_c2(c[2], params)

    ej = params.ej_rad
    pe = _phi_e_rad(phi_e)
    g_dc = np.zeros(n_max + 1)
    g_ac = np.zeros(n_max + 1)
    for k in range(1, n_max + 1):
        prefactor = ej * mode.participation**k / math.factorial(k)
        if k >= 3:
            g_dc[k] = prefactor * c[k]
        dc = _dc_k_dphie(phi_m, pe, params.n_junctions, k)
        g_ac[k] = 2.0 * math.pi * prefactor * dc

    return TaylorCoefficients(
        phi_e=phi_e,
        phi_m=phi_m,
        c=c,
        g_dc=g_dc,
        g_ac=g_ac,
        omega0=mode.omega0,
        participation=mode.participation,
        l_j=mode.l_j,
        n_max=n_max,
    )


def domega0_dphi(phi_e: float, params: CircuitParams, step: float = 1e-6) -> float:
    """Flux slope of the dressed frequency, rad/s per flux quantum.

    Central finite difference of the implicit mode solve; feeds the
    flux-noise dephasing model.
    """
    up = resonator_frequency(phi_e + step, params).omega0
    down = resonator_frequency(phi_e - step, params).omega0
    return (up - down) / (2.0 * step)
