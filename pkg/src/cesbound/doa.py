"""Stochastic Cramer-Rao bounds on directions of arrival under CES noise-plus-signal models.

Circular model: ``Sigma = A R_s A^H + sigma2 I``; directions ``theta`` are of
interest and ``(rho, sigma2)`` are nuisance, ``vec(R_s) = J rho``.

Noncircular model (rectilinear sources): ``Gamma = A_w R_r A_w^H + sigma2 I``
with ``A_w = [A Delta_phi; A* Delta_phi*]`` and real symmetric ``R_r``; the
parameters of interest are ``omega = (theta, phi)``, nuisance is
``vec(R_r) = D rho`` and ``sigma2``.

Each bound is available through two independent routes: the projector
algebra (closed forms in whitened coordinates) and the general Slepian-Bangs
matrix over all parameters followed by an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidParameter, SingularMatrix
from .fisher import fim_from_derivatives
from .generators import XiCoefficients
from .linalg import commutation_matrix, guarded_inv, inv_sqrt_pd, rcond, vec

INFO_RCOND_MIN = 1e-10


def ula_steering(theta, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Half-wavelength ULA steering matrix ``exp(i pi n sin(theta_k))`` and its derivatives.

    Returns ``A`` (M x K) and ``A_prime`` (K x M x K) where ``A_prime[k]`` is
    ``dA/dtheta_k`` (nonzero only in column k).
    """
    if m < 2:
        raise InvalidParameter("a ULA needs at least 2 sensors")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n = np.arange(m)[:, None]
    a = np.exp(1j * np.pi * n * np.sin(theta)[None, :])
    da = 1j * np.pi * n * np.cos(theta)[None, :] * a
    a_prime = np.zeros((theta.size, m, theta.size), dtype=complex)
    for k in range(theta.size):
        a_prime[k, :, k] = da[:, k]
    return a, a_prime


def _check_steering(a, a_prime):
    a = np.asarray(a, dtype=complex)
    a_prime = np.asarray(a_prime, dtype=complex)
    if a.ndim != 2 or a.shape[1] >= a.shape[0]:
        raise DimensionMismatch(f"steering matrix must be M x K with K < M, got {a.shape}")
    if a_prime.ndim != 3 or a_prime.shape[1:] != a.shape:
        raise DimensionMismatch("A_prime must stack one M x K derivative per parameter")
    return a, a_prime


def _hermitian(x, name):
    x = np.asarray(x)
    if not np.allclose(x, x.conj().T, atol=1e-10 * (1 + np.max(np.abs(x)))):
        raise InvalidParameter(f"{name} must be Hermitian")
    return 0.5 * (x + x.conj().T)


@dataclass(frozen=True)
class DoaModel:
    a: np.ndarray
    a_prime: np.ndarray
    r_s: np.ndarray
    sigma2: float
    snapshots: int = 1

    def __post_init__(self):
        a, a_prime = _check_steering(self.a, self.a_prime)
        r_s = _hermitian(np.asarray(self.r_s, dtype=complex), "R_s")
        if r_s.shape != (a.shape[1],) * 2:
            raise DimensionMismatch("R_s must be K x K")
        if not self.sigma2 > 0 or self.snapshots < 1:
            raise InvalidParameter("need sigma2 > 0 and at least one snapshot")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_prime", a_prime)
        object.__setattr__(self, "r_s", r_s)

    @classmethod
    def ula(cls, theta, m, r_s, sigma2, snapshots=1) -> "DoaModel":
        a, a_prime = ula_steering(theta, m)
        return cls(a, a_prime, r_s, sigma2, snapshots)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def k(self) -> int:
        return self.a.shape[1]

    @property
    def sigma(self) -> np.ndarray:
        s = self.a @ self.r_s @ self.a.conj().T + self.sigma2 * np.eye(self.m)
        return 0.5 * (s + s.conj().T)

    def dsigma_dtheta(self) -> np.ndarray:
        left = self.a_prime @ self.r_s @ self.a.conj().T
        return left + np.conj(np.swapaxes(left, 1, 2))


@dataclass(frozen=True)
class NcDoaModel:
    a: np.ndarray
    a_prime: np.ndarray
    r_r: np.ndarray
    phi: np.ndarray
    sigma2: float
    snapshots: int = 1

    def __post_init__(self):
        a, a_prime = _check_steering(self.a, self.a_prime)
        r_r = np.asarray(self.r_r, dtype=float)
        k = a.shape[1]
        if r_r.shape != (k, k) or not np.allclose(r_r, r_r.T):
            raise InvalidParameter("R_r must be a real symmetric K x K matrix")
        phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if phi.shape != (k,):
            raise DimensionMismatch("phi must have one phase per source")
        if a_prime.shape[0] != k:
            raise DimensionMismatch("noncircular model expects one direction per source")
        if not self.sigma2 > 0 or self.snapshots < 1:
            raise InvalidParameter("need sigma2 > 0 and at least one snapshot")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_prime", a_prime)
        object.__setattr__(self, "r_r", 0.5 * (r_r + r_r.T))
        object.__setattr__(self, "phi", phi)

    @classmethod
    def ula(cls, theta, m, r_r, phi, sigma2, snapshots=1) -> "NcDoaModel":
        a, a_prime = ula_steering(theta, m)
        return cls(a, a_prime, r_r, phi, sigma2, snapshots)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def k(self) -> int:
        return self.a.shape[1]

    @property
    def delta_phi(self) -> np.ndarray:
        return np.diag(np.exp(1j * self.phi))

    @property
    def a_omega(self) -> np.ndarray:
        ad = self.a @ self.delta_phi
        return np.vstack([ad, ad.conj()])

    @property
    def gamma(self) -> np.ndarray:
        aw = self.a_omega
        g = aw @ self.r_r @ aw.conj().T + self.sigma2 * np.eye(2 * self.m)
        return 0.5 * (g + g.conj().T)

    def a_omega_prime(self) -> np.ndarray:
        """``dA_w / d omega_j`` for ``omega = (theta, phi)``; shape 2K x 2M x K."""
        k = self.k
        dphi = self.delta_phi
        out = []
        for j in range(k):
            top = self.a_prime[j] @ dphi
            out.append(np.vstack([top, top.conj()]))
        for j in range(k):
            e = np.zeros((k, k))
            e[j, j] = 1.0
            top = 1j * self.a @ dphi @ e
            out.append(np.vstack([top, top.conj()]))
        return np.array(out)

    def dgamma_domega(self) -> np.ndarray:
        left = self.a_omega_prime() @ self.r_r @ self.a_omega.conj().T
        return left + np.conj(np.swapaxes(left, 1, 2))


# -- nuisance parameterisations -------------------------------------------

def hermitian_basis(k: int) -> np.ndarray:
    """Constant basis with ``R = sum_j rho_j E_j`` for Hermitian ``R``.

    ``rho`` holds the diagonal, then the real and imaginary parts of the strict
    upper triangle; ``J = [vec(E_1), ..., vec(E_{K^2})]`` is nonsingular.
    """
    mats = []
    for i in range(k):
        e = np.zeros((k, k), dtype=complex)
        e[i, i] = 1.0
        mats.append(e)
    upper = [(i, j) for i in range(k) for j in range(i + 1, k)]
    for i, j in upper:
        e = np.zeros((k, k), dtype=complex)
        e[i, j] = e[j, i] = 1.0
        mats.append(e)
    for i, j in upper:
        e = np.zeros((k, k), dtype=complex)
        e[i, j], e[j, i] = 1j, -1j
        mats.append(e)
    return np.array(mats)


def symmetric_basis(k: int) -> np.ndarray:
    """Real symmetric basis: diagonal entries, then the upper triangle (K(K+1)/2 matrices)."""
    mats = []
    for i in range(k):
        e = np.zeros((k, k))
        e[i, i] = 1.0
        mats.append(e)
    for i in range(k):
        for j in range(i + 1, k):
            e = np.zeros((k, k))
            e[i, j] = e[j, i] = 1.0
            mats.append(e)
    return np.array(mats)


def basis_matrix(mats) -> np.ndarray:
    """Stack ``vec`` of each basis matrix as columns (``J`` or ``D_rho``)."""
    return np.stack([vec(e) for e in mats], axis=1)


def symmetrizer(k: int) -> np.ndarray:
    """``N_K = (I + K_{K,K}) / 2``, the projector onto vecs of symmetric matrices."""
    return 0.5 * (np.eye(k * k) + commutation_matrix(k, k))


def structured_sqrt(diag: float, rank_one: float, n: int) -> tuple[float, float] | None:
    """Square root ``a I + b e e^T`` of ``diag I + rank_one e e^T`` with ``e^T e = n``.

    Returns ``None`` when the matrix is not positive semidefinite.
    """
    top = diag + rank_one * n
    if diag < 0 or top < 0:
        return None
    a = np.sqrt(diag)
    return float(a), float((np.sqrt(top) - a) / n)


def _guard_info(info, what):
    rc = rcond(info)
    if not rc >= INFO_RCOND_MIN:
        raise SingularMatrix(f"{what} information matrix is singular (rcond={rc:.2e}); sources may coalesce")


def _check_xi2(xi2):
    if not xi2 > 0:
        raise InvalidParameter(f"xi2 must be positive, got {xi2}")
    return float(xi2)


# -- projector machinery ----------------------------------------------------

@dataclass(frozen=True)
class ProjectorBundle:
    """Whitened-coordinate objects of the projector derivation.

    ``t_i`` uses the metric ``c0 I + c1 vec(I) vec(I)^T``; its structured square
    root, and hence ``pi_perp_v``, exists only when that metric is positive
    semidefinite (``t_i_sqrt`` and ``pi_perp_v`` are ``None`` otherwise).
    """

    xi2: float
    t_i: np.ndarray
    t_i_sqrt: np.ndarray | None
    sigma_inv: np.ndarray
    sigma_inv_half: np.ndarray
    w: np.ndarray
    u: np.ndarray
    h1: np.ndarray
    eta: float
    b: np.ndarray
    x: np.ndarray
    v_n: np.ndarray
    z: np.ndarray | None
    pi_perp_v: np.ndarray | None
    u_n: np.ndarray | None
    g: np.ndarray | None

    @property
    def metric_projector(self) -> np.ndarray:
        """``T - T B T``, equal to ``T^(1/2) Pi_V^perp T^(1/2)`` whenever the root exists."""
        return self.t_i - self.t_i @ self.b @ self.t_i

    def orthogonality_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """The two terms ``v^H T x_k`` and ``v^H T B T x_k`` whose difference is ``u_n^H Pi g_k``."""
        tv = self.t_i @ self.v_n
        first = tv.conj() @ self.x
        second = tv.conj() @ self.b @ (self.t_i @ self.x)
        return first, second

    def orthogonality_residual(self) -> np.ndarray:
        """Normalised ``|u_n^H Pi_V^perp g_k|`` for each direction parameter."""
        if self.pi_perp_v is not None:
            val = self.u_n.conj() @ self.pi_perp_v @ self.g
            scale = np.linalg.norm(self.u_n) * np.linalg.norm(self.g, axis=0)
            return np.abs(val) / scale
        first, second = self.orthogonality_terms()
        tv = np.linalg.norm(self.t_i @ self.v_n)
        scale = tv * (np.linalg.norm(self.x, axis=0) + np.linalg.norm(self.b @ (self.t_i @ self.x), axis=0))
        return np.abs(first - second) / scale

    def ti_b_ti_expansion(self) -> np.ndarray:
        """Closed-form expansion of ``T B T`` (circular metric only)."""
        xi2, eta = self.xi2, self.eta
        m = self.sigma_inv.shape[0]
        k = self.u.shape[0]
        e = vec(np.eye(m))[:, None]
        h = vec(self.h1)[:, None]
        c = (xi2 - 1.0) * (1.0 - k * eta * xi2)
        return (
            xi2 * np.kron(self.h1.conj(), self.h1)
            - xi2**2 * eta * (h @ h.conj().T)
            + c * (e @ h.conj().T + h @ e.T)
            + (xi2 - 1.0) ** 2 * k / xi2 * (1.0 - k * eta * xi2) * (e @ e.T)
        )

    def information(self) -> np.ndarray:
        """Per-snapshot information on the directions, after projecting out the nuisance."""
        p = self.metric_projector
        pv = p @ self.v_n
        gpg = self.x.conj().T @ p @ self.x
        corr = np.outer(self.x.conj().T @ pv, pv.conj() @ self.x) / np.real(self.v_n.conj() @ pv)
        info = np.real(gpg - corr)
        return 0.5 * (info + info.T)


def _whitened(sigma, derivs):
    s_half = inv_sqrt_pd(sigma, "covariance")
    return s_half, np.stack([vec(s_half @ d @ s_half) for d in derivs], axis=1)


def _bundle(sigma, a, derivs, c0, c1, b_of, xi2, z=None):
    n = sigma.shape[0]
    s_half, x = _whitened(sigma, derivs)
    s_inv = s_half @ s_half
    u = a.conj().T @ s_inv @ a
    u = 0.5 * (u + u.conj().T)
    u_inv = guarded_inv(u, "U = A^H Sigma^-1 A")
    wa = s_half @ a
    h1 = wa @ u_inv @ wa.conj().T
    w = np.kron(wa.conj(), wa)
    eta, b = b_of(w, u_inv, h1)
    e = vec(np.eye(n))[:, None]
    t_i = c0 * np.eye(n * n) + c1 * (e @ e.T)
    v_n = vec(s_inv)
    root = structured_sqrt(c0, c1, n)
    t_sqrt = pi = u_n = g = None
    if root is not None:
        t_sqrt = root[0] * np.eye(n * n) + root[1] * (e @ e.T)
        pi = np.eye(n * n) - t_sqrt @ b @ t_sqrt
        u_n = t_sqrt @ v_n
        g = t_sqrt @ x
    return ProjectorBundle(
        xi2=xi2, t_i=t_i, t_i_sqrt=t_sqrt, sigma_inv=s_inv, sigma_inv_half=s_half,
        w=w, u=u, h1=h1, eta=eta, b=b, x=x, v_n=v_n, z=z, pi_perp_v=pi, u_n=u_n, g=g,
    )


def build_projector_bundle(model: DoaModel, xi2: float) -> ProjectorBundle:
    """Projector objects for the circular model."""
    xi2 = _check_xi2(xi2)
    k = model.k
    sigma = model.sigma
    eta_den = xi2**2 * (1.0 + k * (xi2 - 1.0) / xi2)
    if abs(eta_den) < 1e-12 * xi2**2:
        raise SingularMatrix("xi2 = K/(K+1) makes the nuisance information singular")
    eta = (xi2 - 1.0) / eta_den

    def b_of(w, u_inv, h1):
        h = vec(h1)[:, None]
        return eta, np.kron(h1.conj(), h1) / xi2 - eta * (h @ h.conj().T)

    s_half = inv_sqrt_pd(sigma, "Sigma")
    ar = model.a @ model.r_s
    z = np.array([s_half @ ar @ ap.conj().T @ s_half for ap in model.a_prime])
    return _bundle(sigma, model.a, model.dsigma_dtheta(), xi2, xi2 - 1.0, b_of, xi2, z)


def build_nc_projector_bundle(model: NcDoaModel, xi2: float) -> ProjectorBundle:
    """Projector objects for the noncircular model (metric ``xi2/2 I + (xi2-1)/4 e e^T``)."""
    xi2 = _check_xi2(xi2)
    k = model.k
    eta_den = xi2**2 * (1.0 + k * (xi2 - 1.0) / (2.0 * xi2))
    if abs(eta_den) < 1e-12 * xi2**2:
        raise SingularMatrix("xi2 = K/(K+2) makes the nuisance information singular")
    eta = (xi2 - 1.0) / eta_den
    n_k = symmetrizer(k)

    def b_of(w, u_inv, h1):
        u_inv = np.real(u_inv)
        h = vec(h1)[:, None]
        return eta, (2.0 / xi2) * w @ np.kron(u_inv, u_inv) @ n_k @ w.conj().T - eta * (h @ h.conj().T)

    return _bundle(model.gamma, model.a_omega, model.dgamma_domega(), xi2 / 2.0, (xi2 - 1.0) / 4.0, b_of, xi2)


# -- circular bounds --------------------------------------------------------

def scrb_circular_information(model: DoaModel, xi2: float) -> np.ndarray:
    """``T (2 xi2 / sigma2) Re tr[Pi_A^perp A'_l H A'_k^H]`` with ``H = R A^H Sigma^-1 A R``."""
    xi2 = _check_xi2(xi2)
    a = model.a
    gram_inv = guarded_inv(a.conj().T @ a, "A^H A")
    pi_perp = np.eye(model.m) - a @ gram_inv @ a.conj().T
    s_inv = guarded_inv(model.sigma, "Sigma")
    h = model.r_s @ a.conj().T @ s_inv @ a @ model.r_s
    ap = model.a_prime
    # entry (k, l) = tr(A'_k^H Pi A'_l H)
    inner = np.einsum("kma,mn,lnb,ba->kl", ap.conj(), pi_perp, ap, h)
    info = model.snapshots * (2.0 * xi2 / model.sigma2) * np.real(inner)
    return 0.5 * (info + info.T)


def scrb_circular(model: DoaModel, xi2: float) -> np.ndarray:
    """Stochastic CRB on the directions of a circular CES array model."""
    info = scrb_circular_information(model, xi2)
    _guard_info(info, "direction")
    return np.linalg.inv(info)


def scrb_circular_projector(model: DoaModel, xi2: float) -> np.ndarray:
    """The same bound assembled from the projector bundle (pre-simplification form)."""
    info = model.snapshots * build_projector_bundle(model, xi2).information()
    _guard_info(info, "direction")
    return np.linalg.inv(info)


def general_fim_circular(model: DoaModel, xi2: float) -> np.ndarray:
    """Full FIM over ``(theta, rho, sigma2)`` from the vec form of the Slepian-Bangs matrix."""
    xi2 = _check_xi2(xi2)
    sigma = model.sigma
    s_inv = guarded_inv(sigma, "Sigma")
    derivs = list(model.dsigma_dtheta())
    derivs += [model.a @ e @ model.a.conj().T for e in hermitian_basis(model.k)]
    derivs.append(np.eye(model.m))
    d = np.stack([vec(x) for x in derivs], axis=1)
    v = vec(s_inv)[:, None]
    kernel = xi2 * np.kron(s_inv.T, s_inv) + (xi2 - 1.0) * (v @ v.conj().T)
    fim = model.snapshots * np.real(d.conj().T @ kernel @ d)
    return 0.5 * (fim + fim.T)


def scrb_from_general(model: DoaModel, xi2: float) -> np.ndarray:
    """Direction block of the inverse of :func:`general_fim_circular`."""
    fim = general_fim_circular(model, xi2)
    _guard_info(fim, "full-parameter")
    p = model.a_prime.shape[0]
    return np.linalg.inv(fim)[:p, :p]


# -- noncircular bounds -----------------------------------------------------

def scrb_noncircular(model: NcDoaModel, xi2: float) -> np.ndarray:
    """Stochastic CRB on ``omega = (theta, phi)`` (2K x 2K) through the projector route."""
    info = model.snapshots * build_nc_projector_bundle(model, xi2).information()
    _guard_info(info, "(theta, phi)")
    return np.linalg.inv(info)


def general_fim_noncircular(model: NcDoaModel, xi2: float) -> np.ndarray:
    """Full FIM over ``(theta, phi, rho, sigma2)`` from the augmented trace-form FIM."""
    xi2 = _check_xi2(xi2)
    aw = model.a_omega
    derivs = list(model.dgamma_domega())
    derivs += [aw @ e @ aw.conj().T for e in symmetric_basis(model.k)]
    derivs.append(np.eye(2 * model.m))
    gammas = np.array(derivs)
    mus = np.zeros((len(derivs), 2 * model.m))
    xi = XiCoefficients(xi1=1.0, xi2=xi2, m=model.m)
    return model.snapshots * fim_from_derivatives(model.gamma, mus, gammas, xi)


def scrb_noncircular_from_general(model: NcDoaModel, xi2: float) -> np.ndarray:
    fim = general_fim_noncircular(model, xi2)
    _guard_info(fim, "full-parameter")
    p = 2 * model.k
    return np.linalg.inv(fim)[:p, :p]
