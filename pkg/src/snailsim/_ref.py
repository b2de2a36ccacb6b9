"""Pure-Python master-equation integrator, mirrored by the compiled core.

Both backends implement the identical algorithm: a Dormand-Prince 5(4)
embedded Runge-Kutta pair with PI-free step control, advancing the density
matrix in a frame rotating at ``omega_rot``.  The rotation is an exact change
of variables; counter-rotating terms survive as explicit band phases
exp(i*(j-k)*omega_rot*t) on the Hamiltonian matrix elements, and the
photon-loss/gain/dephasing dissipators are form-invariant under it.
"""

from __future__ import annotations

import math

import numpy as np

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
# b - bhat, error estimator weights (7 stages with FSAL)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


class IntegrationError(RuntimeError):
    """Step-size underflow or iteration-budget exhaustion during integration."""


def drive_profile(t: float, params) -> float:
    """Envelope times carrier for one drive: f(t-delay)*cos(wd*(t-delay)+phase)."""
    omega_d, phase, delay, rise, hold, total = params
    s = t - delay
    if s <= 0.0 or s >= total:
        return 0.0
    if rise > 0.0 and s < rise:
        env = 0.5 - 0.5 * math.cos(math.pi * s / rise)
    elif s <= rise + hold:
        env = 1.0
    else:
        env = 0.5 - 0.5 * math.cos(math.pi * (total - s) / rise)
    return env * math.cos(omega_d * s + phase)


def _make_rhs(term_mats, drive_params, omega_rot, rates, dim):
    r_down, r_up, r_phi = rates
    levels = np.arange(dim, dtype=float)
    s1 = np.sqrt(levels[1:])  # sqrt(1..dim-1)
    n_sum = levels[:, None] + levels[None, :]
    deph = -0.5 * (levels[:, None] - levels[None, :]) ** 2

    def rhs(t, sigma):
        coefs = np.empty(len(term_mats))
        coefs[0] = 1.0
        for k, dp in enumerate(drive_params):
            coefs[k + 1] = drive_profile(t, dp)
        h_real = np.tensordot(coefs, term_mats, axes=(0, 0))
        if omega_rot != 0.0:
            pv = np.exp(1j * omega_rot * t * levels)
            h = (pv[:, None] * h_real) * pv.conj()[None, :]
        else:
            h = h_real
        b = h @ sigma
        out = -1j * (b - b.conj().T)
        if r_down:
            out[:-1, :-1] += r_down * (s1[:, None] * s1[None, :]) * sigma[1:, 1:]
            out -= (0.5 * r_down) * n_sum * sigma
        if r_up:
            out[1:, 1:] += r_up * (s1[:, None] * s1[None, :]) * sigma[:-1, :-1]
            out -= (0.5 * r_up) * (n_sum + 2.0) * sigma
        if r_phi:
            out += (r_phi * deph) * sigma
        return out

    return rhs


def integrate_py(
    term_mats: np.ndarray,
    drive_params: np.ndarray,
    omega_rot: float,
    rates: tuple[float, float, float],
    sigma0: np.ndarray,
    t_samples: np.ndarray,
    rtol: float,
    atol: float,
    max_step: float,
    max_steps: int = 50_000_000,
):
    """Integrate the master equation, recording the state at ``t_samples``.

    Returns (states, n_steps, n_rhs).  ``t_samples`` must be increasing and
    start at the initial time.
    """
    dim = sigma0.shape[0]
    rhs = _make_rhs(term_mats, drive_params, omega_rot, rates, dim)

    t = float(t_samples[0])
    y = np.array(sigma0, dtype=complex)
    out = np.empty((len(t_samples), dim, dim), dtype=complex)
    out[0] = y

    n_steps = 0
    n_rhs = 1
    k1 = rhs(t, y)
    stages = [None] * 6
    h = min(max_step, (float(t_samples[-1]) - t) * 1e-6 + 1e-30)

    for idx in range(1, len(t_samples)):
        t_end = float(t_samples[idx])
        while t < t_end:
            if n_steps >= max_steps:
                raise IntegrationError(f"step budget exhausted at t={t:.3e}")
            h_try = min(h, t_end - t, max_step)
            if h_try <= abs(t) * 1e-15 + 1e-22:
                raise IntegrationError(f"step size underflow at t={t:.3e}")

            stages[0] = k1
            for i, row in enumerate(_A):
                yi = y + h_try * sum(aij * kj for aij, kj in zip(row, stages[: i + 1]))
                stages[i + 1] = rhs(t + _C[i + 1] * h_try, yi)
                n_rhs += 1
            y_new = y + h_try * sum(bj * kj for bj, kj in zip(_B, stages))
            k7 = rhs(t + h_try, y_new)
            n_rhs += 1

            err_mat = h_try * (
                sum(ej * kj for ej, kj in zip(_E[:6], stages)) + _E[6] * k7
            )
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = math.sqrt(float(np.mean((np.abs(err_mat) / scale) ** 2)))

            if err <= 1.0:
                t += h_try
                y = y_new
                k1 = k7
                n_steps += 1
                factor = _MAX_FACTOR if err == 0.0 else min(
                    _MAX_FACTOR, _SAFETY * err ** -0.2
                )
                h = h_try * max(_MIN_FACTOR, factor)
            else:
                h = h_try * max(_MIN_FACTOR, _SAFETY * err ** -0.2)
        out[idx] = y
    return out, n_steps, n_rhs
