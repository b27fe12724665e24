"""Pure-numpy implementations of the hot loops.

Signatures mirror ``_kernels.pyx`` exactly; :mod:`gravcollapse.kernels`
picks one at import. Loops here run over time (or jump index) and are
vectorized across trajectories (or particles).
"""
import numpy as np


def sse_chunk(psi, xi, factor, cov, unitary, dt):
    """Advance a batch of lattice wave functions through ``xi.shape[1]`` steps.

    psi      (B, n) complex, modified in place and returned
    xi       (B, S, n) standard normals, one row per step
    factor   (n, n) lower-triangular, factor @ factor.T == cov
    cov      (n, n) noise covariance (rate units)
    unitary  (n, n) complex exp(-i H dt), or None for H = 0
    dt       step

    Returns the smallest pre-renormalization norm seen in the chunk.
    """
    sqdt = np.sqrt(dt)
    diag = cov.diagonal()
    min_norm = np.inf
    ft = factor.T
    ut = None if unitary is None else unitary.T
    for s in range(xi.shape[1]):
        if ut is not None:
            psi = psi @ ut
        prob = psi.real**2 + psi.imag**2
        dW = (xi[:, s, :] @ ft) * sqdt
        mean_dW = np.sum(prob * dW, axis=1)
        cp = prob @ cov
        pcp = np.sum(prob * cp, axis=1)
        drift = diag[None, :] - 2.0 * cp + pcp[:, None]
        psi = psi * (1.0 + dW - mean_dW[:, None] - 0.5 * dt * drift)
        norm = np.sqrt(np.sum(psi.real**2 + psi.imag**2, axis=1))
        min_norm = min(min_norm, float(norm.min()))
        psi /= norm[:, None]
    return psi, min_norm


def relax_block(p, jump_times, rnd, sigma, drag, checkpoints, inv_two_m):
    """Apply momentum kicks at the given jump times and record kinetic energies.

    p            (B, 3) initial momenta, modified in place
    jump_times   (B, J) increasing jump times, padded with +inf
    rnd          (B, J, 3) uniforms (cos polar, azimuth fraction) and one normal
    sigma        std of the Gaussian part of the signed kick magnitude
    drag         2k/(1+k): the kick magnitude along n is sigma*g - drag*(p.n)
    checkpoints  (K,) increasing times; energy is recorded at each
    inv_two_m    1/(2m)

    Returns (p, energies (B, K)).
    """
    B, J = jump_times.shape
    K = checkpoints.shape[0]
    energies = np.empty((B, K))
    next_ck = np.zeros(B, dtype=np.int64)
    rows = np.arange(B)
    for j in range(J + 1):
        t_next = jump_times[:, j] if j < J else np.full(B, np.inf)
        # record every checkpoint that precedes the next jump
        while True:
            pending = next_ck < K
            if not pending.any():
                break
            ck_time = checkpoints[np.minimum(next_ck, K - 1)]
            record = pending & (ck_time < t_next)
            if not record.any():
                break
            idx = rows[record]
            energies[idx, next_ck[idx]] = inv_two_m * np.sum(p[idx] ** 2, axis=1)
            next_ck[idx] += 1
        if j == J:
            break
        active = np.isfinite(t_next)
        if not active.any():
            continue
        z = 2.0 * rnd[active, j, 0] - 1.0
        phi = 2.0 * np.pi * rnd[active, j, 1]
        g = rnd[active, j, 2]
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        n = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
        pa = p[active]
        q = sigma * g - drag * np.sum(pa * n, axis=1)
        p[active] = pa + q[:, None] * n
    return p, energies
