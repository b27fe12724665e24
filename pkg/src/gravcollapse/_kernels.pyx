# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops; see _fallback.py for the contract."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, INFINITY, M_PI

cnp.import_array()


def sse_chunk(psi_in, double[:, :, ::1] xi, double[:, ::1] factor, double[:, ::1] cov,
              unitary, double dt):
    psi_arr = np.ascontiguousarray(psi_in, dtype=np.complex128)
    cdef Py_ssize_t B = xi.shape[0], S = xi.shape[1], n = xi.shape[2]
    # real and imaginary parts are kept apart; complex memoryview access
    # does not vectorize
    cdef double[:, ::1] pr = np.ascontiguousarray(psi_arr.real)
    cdef double[:, ::1] pim = np.ascontiguousarray(psi_arr.imag)
    cdef double[:, ::1] ur, ui
    cdef bint has_u = unitary is not None
    if has_u:
        u_arr = np.asarray(unitary, dtype=np.complex128)
        ur = np.ascontiguousarray(u_arr.real)
        ui = np.ascontiguousarray(u_arr.imag)
    cdef double[::1] tr = np.empty(n)
    cdef double[::1] ti = np.empty(n)
    cdef double[::1] prob = np.empty(n)
    cdef double[::1] dW = np.empty(n)
    cdef double[::1] cp = np.empty(n)
    cdef double sqdt = sqrt(dt)
    cdef double min_norm = INFINITY
    cdef double mean_dW, pcp, acc, acc_i, norm, g
    cdef Py_ssize_t b, s, i, j
    for b in range(B):
        for s in range(S):
            if has_u:
                for i in range(n):
                    acc = 0.0
                    acc_i = 0.0
                    for j in range(n):
                        acc += ur[i, j] * pr[b, j] - ui[i, j] * pim[b, j]
                        acc_i += ur[i, j] * pim[b, j] + ui[i, j] * pr[b, j]
                    tr[i] = acc
                    ti[i] = acc_i
                for i in range(n):
                    pr[b, i] = tr[i]
                    pim[b, i] = ti[i]
            for i in range(n):
                prob[i] = pr[b, i] * pr[b, i] + pim[b, i] * pim[b, i]
            mean_dW = 0.0
            for i in range(n):
                acc = 0.0
                for j in range(i + 1):
                    acc += factor[i, j] * xi[b, s, j]
                dW[i] = acc * sqdt
                mean_dW += prob[i] * dW[i]
            pcp = 0.0
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += prob[j] * cov[j, i]
                cp[i] = acc
                pcp += prob[i] * acc
            norm = 0.0
            for i in range(n):
                g = 1.0 + dW[i] - mean_dW - 0.5 * dt * (cov[i, i] - 2.0 * cp[i] + pcp)
                pr[b, i] *= g
                pim[b, i] *= g
                norm += pr[b, i] * pr[b, i] + pim[b, i] * pim[b, i]
            norm = sqrt(norm)
            if norm < min_norm:
                min_norm = norm
            for i in range(n):
                pr[b, i] /= norm
                pim[b, i] /= norm
    return np.asarray(pr) + 1j * np.asarray(pim), min_norm


def relax_block(double[:, ::1] p, double[:, ::1] jump_times, double[:, :, ::1] rnd,
                double sigma, double drag, double[::1] checkpoints, double inv_two_m):
    cdef Py_ssize_t B = jump_times.shape[0], J = jump_times.shape[1]
    cdef Py_ssize_t K = checkpoints.shape[0]
    energies_arr = np.empty((B, K))
    cdef double[:, ::1] energies = energies_arr
    cdef Py_ssize_t b, j, ck
    cdef double t_next, z, phi, g, rho, n0, n1, n2, q
    for b in range(B):
        ck = 0
        for j in range(J + 1):
            t_next = jump_times[b, j] if j < J else INFINITY
            while ck < K and checkpoints[ck] < t_next:
                energies[b, ck] = inv_two_m * (p[b, 0] * p[b, 0] + p[b, 1] * p[b, 1]
                                               + p[b, 2] * p[b, 2])
                ck += 1
            if j == J or t_next == INFINITY:
                if ck >= K:
                    break
                continue
            z = 2.0 * rnd[b, j, 0] - 1.0
            phi = 2.0 * M_PI * rnd[b, j, 1]
            g = rnd[b, j, 2]
            rho = 1.0 - z * z
            rho = sqrt(rho) if rho > 0 else 0.0
            n0 = rho * cos(phi)
            n1 = rho * sin(phi)
            n2 = z
            q = sigma * g - drag * (p[b, 0] * n0 + p[b, 1] * n1 + p[b, 2] * n2)
            p[b, 0] += q * n0
            p[b, 1] += q * n1
            p[b, 2] += q * n2
    return np.asarray(p), energies_arr
