# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled master-equation core.

Same algorithm as the pure-Python backend in ``_ref``: Dormand-Prince 5(4)
with adaptive steps, density matrix advanced in a frame rotating at
``omega_rot``.  The Hamiltonian is held as real band stacks (one per additive
term); per evaluation the bands are combined with the scalar drive profiles
and the rotating-frame phase exp(i*d*omega_rot*t) is applied per band offset.
The commutator uses the Hermiticity of H via  -i*(B - B^dag), B = H sigma.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, pi, fabs
from libc.stdlib cimport malloc, free
from libc.string cimport memset
from scipy.linalg.cython_blas cimport zgemm

cnp.import_array()

ctypedef double complex cplx

cdef double _SAFETY = 0.9
cdef double _MIN_FACTOR = 0.2
cdef double _MAX_FACTOR = 5.0


class IntegrationError(RuntimeError):
    pass


cdef inline double _profile(double t, const double* p) noexcept nogil:
    # p = [omega_d, phase, delay, rise, hold, total]
    cdef double s = t - p[2]
    cdef double env
    if s <= 0.0 or s >= p[5]:
        return 0.0
    if p[3] > 0.0 and s < p[3]:
        env = 0.5 - 0.5 * cos(pi * s / p[3])
    elif s <= p[3] + p[4]:
        env = 1.0
    else:
        env = 0.5 - 0.5 * cos(pi * (p[5] - s) / p[3])
    return env * cos(p[0] * s + p[1])


cdef void _rhs(double t,
               cplx* sig,
               cplx* out,
               const double* bands,      # [n_terms, n_off, dim]
               const double* drives,     # [n_terms-1, 6]
               double* cb,               # workspace [n_off, dim]
               cplx* hmat,               # workspace [dim, dim]
               int n_terms, int n_off, int dim,
               double omega_rot,
               double r_down, double r_up, double r_phi) noexcept nogil:
    cdef int k, d, i, m, base
    cdef double coef, wt
    cdef cplx ph, hv
    cdef cplx one = 1.0, zero = 0.0

    # combine term bands with scalar profiles
    for d in range(n_off):
        base = d * dim
        for i in range(dim):
            cb[base + i] = bands[base + i]
    for k in range(n_terms - 1):
        coef = _profile(t, drives + 6 * k)
        if coef == 0.0:
            continue
        for d in range(n_off):
            base = d * dim
            for i in range(dim):
                cb[base + i] += coef * bands[(k + 1) * n_off * dim + base + i]

    # dense H in the rotating frame: H[i, i+d] = cb[d][i] * exp(-i d w t)
    memset(hmat, 0, dim * dim * sizeof(cplx))
    wt = omega_rot * t
    for d in range(n_off):
        if d == 0:
            for i in range(dim):
                hmat[i * dim + i] = cb[i]
            continue
        ph = cos(d * wt) - 1j * sin(d * wt)
        base = d * dim
        for i in range(dim - d):
            hv = cb[base + i] * ph
            hmat[i * dim + i + d] = hv
            hmat[(i + d) * dim + i] = hv.real - 1j * hv.imag

    # B = H sigma (row-major trick: out^T = sig^T h^T via Fortran gemm)
    zgemm("N", "N", &dim, &dim, &dim, &one, sig, &dim, hmat, &dim, &zero, out, &dim)

    # out <- -i (B - B^dag)
    cdef cplx bij, bji
    for i in range(dim):
        for m in range(i, dim):
            bij = out[i * dim + m]
            bji = out[m * dim + i]
            out[i * dim + m] = -1j * (bij - (bji.real - 1j * bji.imag))
            if m > i:
                out[m * dim + i] = -1j * (bji - (bij.real - 1j * bij.imag))

    # dissipators (elementwise / shifted)
    cdef double si
    if r_down != 0.0:
        for i in range(dim - 1):
            si = r_down * sqrt(i + 1.0)
            for m in range(dim - 1):
                out[i * dim + m] = out[i * dim + m] + si * sqrt(m + 1.0) * sig[(i + 1) * dim + (m + 1)]
        for i in range(dim):
            for m in range(dim):
                out[i * dim + m] = out[i * dim + m] - 0.5 * r_down * (i + m) * sig[i * dim + m]
    if r_up != 0.0:
        for i in range(1, dim):
            si = r_up * sqrt(<double>i)
            for m in range(1, dim):
                out[i * dim + m] = out[i * dim + m] + si * sqrt(<double>m) * sig[(i - 1) * dim + (m - 1)]
        for i in range(dim):
            for m in range(dim):
                out[i * dim + m] = out[i * dim + m] - 0.5 * r_up * (i + m + 2.0) * sig[i * dim + m]
    if r_phi != 0.0:
        for i in range(dim):
            for m in range(dim):
                out[i * dim + m] = out[i * dim + m] - 0.5 * r_phi * (<double>(i - m)) * (i - m) * sig[i * dim + m]


def integrate_c(cnp.ndarray[double, ndim=3, mode="c"] bands,
                cnp.ndarray[double, ndim=2, mode="c"] drive_params,
                double omega_rot,
                tuple rates,
                cnp.ndarray[cplx, ndim=2, mode="c"] sigma0,
                cnp.ndarray[double, ndim=1, mode="c"] t_samples,
                double rtol, double atol, double max_step,
                long max_steps=50_000_000):
    """Compiled counterpart of ``_ref.integrate_py`` (identical contract)."""
    cdef int n_terms = bands.shape[0]
    cdef int n_off = bands.shape[1]
    cdef int dim = bands.shape[2]
    cdef int nsamp = t_samples.shape[0]
    cdef double r_down = rates[0], r_up = rates[1], r_phi = rates[2]

    cdef cnp.ndarray[cplx, ndim=3, mode="c"] states = np.empty((nsamp, dim, dim), dtype=complex)
    cdef int nn = dim * dim

    # stage storage: k1..k7, y, ytmp, ynew, hmat
    cdef cplx* work = <cplx*> malloc((7 * nn + 4 * nn) * sizeof(cplx))
    cdef double* cb = <double*> malloc(n_off * dim * sizeof(double))
    if work == NULL or cb == NULL:
        if work != NULL: free(work)
        if cb != NULL: free(cb)
        raise MemoryError()
    cdef cplx* k[7]
    cdef int j
    for j in range(7):
        k[j] = work + j * nn
    cdef cplx* y = work + 7 * nn
    cdef cplx* ytmp = work + 8 * nn
    cdef cplx* ynew = work + 9 * nn
    cdef cplx* hmat = work + 10 * nn

    # Butcher tableau
    cdef double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9
    cdef double a[5][5]
    a[0][0] = 1.0 / 5
    a[1][0] = 3.0 / 40; a[1][1] = 9.0 / 40
    a[2][0] = 44.0 / 45; a[2][1] = -56.0 / 15; a[2][2] = 32.0 / 9
    a[3][0] = 19372.0 / 6561; a[3][1] = -25360.0 / 2187; a[3][2] = 64448.0 / 6561; a[3][3] = -212.0 / 729
    a[4][0] = 9017.0 / 3168; a[4][1] = -355.0 / 33; a[4][2] = 46732.0 / 5247; a[4][3] = 49.0 / 176; a[4][4] = -5103.0 / 18656
    cdef double cc[6]
    cc[0] = 0.0; cc[1] = c2; cc[2] = c3; cc[3] = c4; cc[4] = c5; cc[5] = 1.0
    cdef double b[6]
    b[0] = 35.0 / 384; b[1] = 0.0; b[2] = 500.0 / 1113; b[3] = 125.0 / 192; b[4] = -2187.0 / 6784; b[5] = 11.0 / 84
    cdef double e[7]
    e[0] = 71.0 / 57600; e[1] = 0.0; e[2] = -71.0 / 16695; e[3] = 71.0 / 1920
    e[4] = -17253.0 / 339200; e[5] = 22.0 / 525; e[6] = -1.0 / 40

    cdef const double* bands_p = <const double*> bands.data
    cdef const double* drives_p = <const double*> drive_params.data
    cdef cplx* states_p = <cplx*> states.data

    cdef double t = t_samples[0]
    cdef long n_steps = 0, n_rhs = 1
    cdef double h, h_try, t_end, err, sc, fac, av_y, av_new, ae
    cdef int idx, i, stage, m
    cdef cplx acc

    try:
        for i in range(nn):
            y[i] = (<const cplx*> sigma0.data)[i]
            states_p[i] = y[i]

        with nogil:
            _rhs(t, y, k[0], bands_p, drives_p, cb, hmat, n_terms, n_off, dim,
                 omega_rot, r_down, r_up, r_phi)

        h = max_step
        if (t_samples[nsamp - 1] - t) * 1e-6 + 1e-30 < h:
            h = (t_samples[nsamp - 1] - t) * 1e-6 + 1e-30

        for idx in range(1, nsamp):
            t_end = t_samples[idx]
            while t < t_end:
                if n_steps >= max_steps:
                    raise IntegrationError(f"step budget exhausted at t={t:.3e}")
                h_try = h
                if t_end - t < h_try:
                    h_try = t_end - t
                if max_step < h_try:
                    h_try = max_step
                if h_try <= fabs(t) * 1e-15 + 1e-22:
                    raise IntegrationError(f"step size underflow at t={t:.3e}")

                with nogil:
                    # stages 2..6
                    for stage in range(5):
                        for i in range(nn):
                            acc = 0
                            for m in range(stage + 1):
                                acc = acc + a[stage][m] * k[m][i]
                            ytmp[i] = y[i] + h_try * acc
                        _rhs(t + cc[stage + 1] * h_try, ytmp, k[stage + 1],
                             bands_p, drives_p, cb, hmat, n_terms, n_off, dim,
                             omega_rot, r_down, r_up, r_phi)
                    # 5th order solution
                    for i in range(nn):
                        acc = b[0] * k[0][i] + b[2] * k[2][i] + b[3] * k[3][i] \
                            + b[4] * k[4][i] + b[5] * k[5][i]
                        ynew[i] = y[i] + h_try * acc
                    _rhs(t + h_try, ynew, k[6], bands_p, drives_p, cb, hmat,
                         n_terms, n_off, dim, omega_rot, r_down, r_up, r_phi)
                n_rhs += 6

                # error norm
                err = 0.0
                for i in range(nn):
                    acc = e[0] * k[0][i] + e[2] * k[2][i] + e[3] * k[3][i] \
                        + e[4] * k[4][i] + e[5] * k[5][i] + e[6] * k[6][i]
                    av_y = abs(y[i]); av_new = abs(ynew[i])
                    if av_new > av_y:
                        av_y = av_new
                    sc = atol + rtol * av_y
                    ae = abs(acc) * h_try / sc
                    err += ae * ae
                err = sqrt(err / nn)

                if err <= 1.0:
                    t += h_try
                    for i in range(nn):
                        y[i] = ynew[i]
                        k[0][i] = k[6][i]
                    n_steps += 1
                    if err == 0.0:
                        fac = _MAX_FACTOR
                    else:
                        fac = _SAFETY * err ** -0.2
                        if fac > _MAX_FACTOR:
                            fac = _MAX_FACTOR
                    if fac < _MIN_FACTOR:
                        fac = _MIN_FACTOR
                    h = h_try * fac
                else:
                    fac = _SAFETY * err ** -0.2
                    if fac < _MIN_FACTOR:
                        fac = _MIN_FACTOR
                    h = h_try * fac
            for i in range(nn):
                states_p[idx * nn + i] = y[i]
    finally:
        free(work)
        free(cb)
    return states, n_steps, n_rhs
