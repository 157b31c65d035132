"""Finite-difference operators on periodic tori.

The gradient is the forward difference with periodic wrap and the
divergence is its negative adjoint, so ``<z, grad w> = -<div z, w>`` holds
exactly in exact arithmetic. Fields carry the component index on the last
axis.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def grad(w, h):
    m = w.ndim
    return np.stack([(np.roll(w, -1, axis=d) - w) / h for d in range(m)], axis=-1)


def grad_adjoint(z, h):
    """``D^T z`` for the forward-difference gradient ``D``."""
    m = z.shape[-1]
    out = np.zeros(z.shape[:-1])
    for d in range(m):
        zd = z[..., d]
        out += (np.roll(zd, 1, axis=d) - zd) / h
    return out


def divergence(z, h):
    return -grad_adjoint(z, h)


def rotated_grad(psi, h):
    """Divergence-free field ``(D_2^T psi, -D_1^T psi)`` on a 2-torus."""
    d1t = (np.roll(psi, 1, axis=0) - psi) / h
    d2t = (np.roll(psi, 1, axis=1) - psi) / h
    return np.stack([d2t, -d1t], axis=-1)


def solve_laplacian(rhs, h):
    """Mean-zero solution of ``D^T D q = rhs`` via FFT (rhs must have zero mean)."""
    shape = rhs.shape
    symbol = np.zeros(shape)
    for d, n in enumerate(shape):
        k = 2.0 * np.pi * np.fft.fftfreq(n)
        s = (2.0 - 2.0 * np.cos(k)) / h ** 2
        symbol = symbol + s.reshape([-1 if i == d else 1 for i in range(len(shape))])
    rhat = np.fft.fftn(rhs)
    symbol.flat[0] = 1.0
    qhat = rhat / symbol
    qhat.flat[0] = 0.0
    return np.real(np.fft.ifftn(qhat))


def project_solenoidal(z, h):
    """Orthogonal projection onto ``ker D^T`` (divergence-free fields)."""
    q = solve_laplacian(grad_adjoint(z, h), h)
    return z - grad(q, h)


def gradient_matrix(shape, h):
    """Sparse forward-difference gradient, component-major rows ``(m N, N)``."""
    n_total = int(np.prod(shape))
    idx = np.arange(n_total).reshape(shape)
    blocks = []
    for d in range(len(shape)):
        nxt = np.roll(idx, -1, axis=d).ravel()
        rows = np.arange(n_total)
        data = np.concatenate([-np.ones(n_total), np.ones(n_total)]) / h
        blocks.append(sp.csr_matrix(
            (data, (np.concatenate([rows, rows]), np.concatenate([rows, nxt]))),
            shape=(n_total, n_total)))
    return sp.vstack(blocks).tocsr()


def block_hessian(hess):
    """Sparse block matrix from per-node ``(N, m, m)`` Hessians (component-major)."""
    n, m, _ = hess.shape
    if m == 1:
        return sp.diags(hess[:, 0, 0])
    return sp.bmat([[sp.diags(hess[:, i, j]) for j in range(m)] for i in range(m)])
