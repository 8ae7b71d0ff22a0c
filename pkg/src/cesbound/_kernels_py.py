"""Pure-numpy implementations of the batched kernels in ``_ckernels.pyx``."""

import numpy as np


def hermitian_forms(x, g):
    """Real part of ``x_i^H G x_i`` for every row ``x_i`` of ``x`` (n x d)."""
    x = np.ascontiguousarray(x, dtype=np.complex128)
    return np.real(np.sum(x.conj() * (x @ np.asarray(g, dtype=np.complex128).T), axis=1))


def score_pieces(r, ginv, gammas, mus):
    """Per-sample pieces of the CES score.

    With ``w_i = Ginv r_i`` returns ``eta_i = Re(r_i^H w_i)/2``,
    ``lin[i, k] = Re(mu_k^H w_i)`` and ``quad[i, k] = Re(w_i^H Gamma_k w_i)``.
    """
    r = np.ascontiguousarray(r, dtype=np.complex128)
    w = r @ np.asarray(ginv, dtype=np.complex128).T
    eta = 0.5 * np.real(np.sum(r.conj() * w, axis=1))
    lin = np.real(w @ np.asarray(mus, dtype=np.complex128).conj().T)
    quad = np.empty((r.shape[0], len(gammas)))
    for k, gk in enumerate(gammas):
        quad[:, k] = np.real(np.sum(w.conj() * (w @ np.asarray(gk).T), axis=1))
    return eta, lin, quad
