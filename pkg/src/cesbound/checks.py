"""The invariant suite behind ``cesbound validate``.

Each check returns :class:`Record` rows; algebraic rows use the tolerance of
the module under test and statistical rows the 3-SE rule. Every check draws
from its own substream ``stream(seed, check_id, ...)`` so that adding or
reordering checks never perturbs the others.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .ces import NcCesModel, augmented_scatter, mahalanobis_q, noncircularity_factors, sample_nc_ces
from .doa import (
    DoaModel, NcDoaModel, build_nc_projector_bundle, build_projector_bundle, scrb_circular,
    scrb_circular_projector, scrb_from_general, scrb_noncircular, scrb_noncircular_from_general,
)
from .fisher import (
    ParamSpec, ScoreMoments, _score_batch, entry_param_model, fim_ncces, fim_terms, gap_kernel, gaussian_fim_gap,
)
from .generators import XiCoefficients, make_generator, xi_coefficients
from .harness import Moments, Record, mc_reduce
from .linalg import (
    AugmentedMatrix, commutation_matrix, fourth_moment_contraction, gaussian_fourth_moment,
    kron, quadratic_form_expectation, vec, woodbury_inverse,
)
from .rng import stream

IDENTITY_RTOL = 1e-10
QUAD_TOL = 1e-8
KS_LEVEL = 0.01

GENERATOR_GRID = (
    ("gaussian", {}),
    ("student-t", {"nu": 3.0}), ("student-t", {"nu": 5.0}), ("student-t", {"nu": 10.0}),
    ("generalized-gaussian", {"s": 0.5}), ("generalized-gaussian", {"s": 1.0}),
    ("generalized-gaussian", {"s": 2.0}),
)


def _label(kind, params):
    return kind + "".join(f"({v:g})" for v in params.values())


# -- random instances ---------------------------------------------------------

def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_augmented(rng, m: int) -> AugmentedMatrix:
    a1 = random_complex(rng, m, m)
    a2 = random_complex(rng, m, m)
    return AugmentedMatrix(a1 + a1.conj().T, a2 + a2.T)


def random_factor(rng, m: int) -> np.ndarray:
    """Well-conditioned square factor ``I + 0.3 X``."""
    return np.eye(m) + 0.3 * random_complex(rng, m, m) / np.sqrt(m)


def separated_angles(rng, k: int, spread: float = 1.0, gap: float = 0.25) -> np.ndarray:
    while True:
        theta = np.sort(rng.uniform(-spread, spread, k))
        if k == 1 or np.min(np.diff(theta)) > gap:
            return theta


def random_hermitian_pd(rng, k: int) -> np.ndarray:
    x = random_complex(rng, k, k)
    return x @ x.conj().T / k + 0.5 * np.eye(k)


def random_symmetric_pd(rng, k: int) -> np.ndarray:
    x = rng.standard_normal((k, k))
    return x @ x.T / k + 0.5 * np.eye(k)


def random_doa_model(rng, k: int, m: int) -> DoaModel:
    return DoaModel.ula(
        separated_angles(rng, k), m, random_hermitian_pd(rng, k),
        float(np.exp(rng.uniform(np.log(0.1), np.log(2.0)))), int(rng.integers(1, 100)),
    )


def random_nc_doa_model(rng, k: int, m: int) -> NcDoaModel:
    return NcDoaModel.ula(
        separated_angles(rng, k), m, random_symmetric_pd(rng, k), rng.uniform(0, 2 * np.pi, k),
        float(np.exp(rng.uniform(np.log(0.1), np.log(2.0)))), int(rng.integers(1, 100)),
    )


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# -- mat-core -----------------------------------------------------------------

def matrix_identity_errors(rng, m: int) -> dict[str, float]:
    """Relative error of each vec/Kronecker/trace/Woodbury relation on one random instance."""
    a, b, c, d = (random_complex(rng, m, m) for _ in range(4))
    k = commutation_matrix(m, m)
    out = {
        "vec(ABC)": _rel(vec(a @ b @ c), kron(c.T, a) @ vec(b)),
        "mixed product": _rel(kron(a, b) @ kron(c, d), kron(a @ c, b @ d)),
        "tr(AB)": _rel(np.trace(a @ b), vec(a.conj().T).conj() @ vec(b)),
        "tr(ABCD)": _rel(np.trace(a @ b @ c @ d), vec(a.conj().T).conj() @ kron(d.T, b) @ vec(c)),
        "tr(A kron B)": _rel(np.trace(kron(a, b)), np.trace(a) * np.trace(b)),
        "tr[K(A kron B)]": _rel(np.trace(k @ kron(a, b)), np.trace(a @ b)),
    }
    aw = random_complex(rng, m, m) + 3 * m * np.eye(m)
    cw = random_complex(rng, m, m) + 3 * m * np.eye(m)
    out["woodbury"] = _rel(woodbury_inverse(aw, b, cw, d), np.linalg.inv(aw + b @ cw @ d))
    return out


def check_matrix_identities(seed: int, instances: int = 100) -> list[Record]:
    worst: dict[str, float] = {}
    for i in range(instances):
        rng = stream(seed, 1, i)
        for name, err in matrix_identity_errors(rng, int(rng.integers(2, 6))).items():
            worst[name] = max(worst.get(name, 0.0), err)
    records = [Record.algebraic(f"identity {n}", 0.0, e, IDENTITY_RTOL) for n, e in worst.items()]
    orth = max(
        float(np.max(np.abs(commutation_matrix(m, n).T @ commutation_matrix(m, n) - np.eye(m * n))))
        for m in range(1, 5) for n in range(1, 5)
    )
    records.append(Record.algebraic("commutation orthogonality", 0.0, orth, 1e-15))
    return records


def check_fourth_moment(seed: int, n: int, batch: int, workers: int) -> list[Record]:
    records = []
    for m in (1, 2, 3):
        e4 = gaussian_fourth_moment(m)
        herm = float(np.max(np.abs(e4 - e4.conj().T)))
        records.append(Record.algebraic(f"fourth moment Hermitian M={m}", 0.0, herm, 1e-14))
        lam = np.linalg.eigvalsh(0.5 * (e4 + e4.conj().T))
        records.append(Record.algebraic(f"fourth moment PSD deficit M={m}", 0.0,
                                        max(0.0, -lam.min()), 1e-10 * lam.max()))
        eye = AugmentedMatrix.identity(m)
        records.append(Record.algebraic(f"E|y|^4 M={m}", 4 * m * (m + 1),
                                        quadratic_form_expectation(eye, eye).real, 0.0))
        rng = stream(seed, 2, m)
        at, bt = random_augmented(rng, m), random_augmented(rng, m)
        closed = quadratic_form_expectation(at, bt)
        contracted = fourth_moment_contraction(at, bt)
        records.append(Record.algebraic(f"lemma contraction M={m}", closed.real, contracted.real,
                                        1e-10 * max(1.0, abs(closed))))
        af, bf = at.full, bt.full

        def work(rng, size, af=af, bf=bf, m=m):
            y = (rng.standard_normal((size, m)) + 1j * rng.standard_normal((size, m))) / np.sqrt(2)
            yt = np.concatenate([y, y.conj()], axis=1)
            qa = np.einsum("ni,ij,nj->n", yt.conj(), af, yt).real
            qb = np.einsum("ni,ij,nj->n", yt.conj(), bf, yt).real
            return Moments.of((qa * qb)[:, None])

        mom = mc_reduce(n, seed, batch, work, Moments.merge, workers, key=(3, m))
        records.append(Record.statistical(f"lemma monte carlo M={m}", closed.real, mom.mean[0], mom.stderr[0]))
    return records


# -- ces-dist -----------------------------------------------------------------

def check_generator_moments() -> list[Record]:
    records = []
    for kind, params in GENERATOR_GRID:
        gen = make_generator(kind, **params)
        label = _label(kind, params)
        for m in (1, 2, 4):
            e_qphi = gen.expect(lambda q: q * float(gen.phi(q, m)), m)
            records.append(Record.algebraic(f"{label} M={m} E[Q phi(Q)]", -m, e_qphi, QUAD_TOL))
            if gen.finite_mean:
                records.append(Record.algebraic(f"{label} M={m} E[Q]", m, gen.expect(lambda q: q, m), QUAD_TOL))
            records.append(Record.algebraic(f"{label} M={m} normalization", 1.0,
                                            gen.delta(m) * np.exp(-gen.log_delta(m)), QUAD_TOL))
            xi = xi_coefficients(gen, m)
            records.append(Record.algebraic(f"{label} M={m} xi1 shortfall below 1", 0.0,
                                            max(0.0, 1.0 - xi.xi1), 1e-9))
            closed = gen.xi_closed_form(m)
            records.append(Record.relative(f"{label} M={m} xi1 closed form", closed.xi1, xi.xi1, QUAD_TOL))
            records.append(Record.relative(f"{label} M={m} xi2 closed form", closed.xi2, xi.xi2, QUAD_TOL))
    return records


def check_q_sampling(seed: int, n: int, batch: int, workers: int) -> list[Record]:
    records = []
    m = 2
    for j, (kind, params) in enumerate(GENERATOR_GRID):
        gen = make_generator(kind, **params)
        label = _label(kind, params)
        # E(Q) is only checked when Var(Q) is finite
        with_mean = getattr(gen, "nu", np.inf) > 4

        def work(rng, size, gen=gen, with_mean=with_mean):
            q = gen.sample_q(m, size, rng)
            cols = [q * gen.phi(q, m)] + ([q] if with_mean else [])
            return Moments.of(np.stack(cols, axis=1))

        mom = mc_reduce(n, seed, batch, work, Moments.merge, workers, key=(4, j))
        records.append(Record.statistical(f"{label} sampled E[Q phi(Q)]", -m, mom.mean[0], mom.stderr[0]))
        if with_mean:
            records.append(Record.statistical(f"{label} sampled E[Q]", m, mom.mean[1], mom.stderr[1]))
    return records


def ks_record(name, sample, cdf, level=KS_LEVEL) -> Record:
    """KS statistic against its critical value, so the record reads |D - 0| <= D_crit."""
    d = stats.kstest(sample, cdf).statistic
    crit = stats.kstwo.ppf(1.0 - level, len(sample))
    return Record.algebraic(name, 0.0, d, crit)


def check_ces_sampling(seed: int, n: int, batch: int, workers: int) -> list[Record]:
    records = []
    kappa = np.array([0.3, 0.6, 0.9])
    d1, d2 = noncircularity_factors(kappa)
    records.append(Record.algebraic("D1^2 + D2^2 = 1", 0.0, float(np.max(np.abs(d1**2 + d2**2 - 1))), 1e-14))
    records.append(Record.algebraic("2 D1 D2 = kappa", 0.0, float(np.max(np.abs(2 * d1 * d2 - kappa))), 1e-14))
    worst = 0.0
    for i in range(100):
        rng = stream(seed, 5, i)
        m = int(rng.integers(1, 5))
        model = NcCesModel(random_complex(rng, m), random_factor(rng, m), rng.uniform(0, 1, m),
                           make_generator("gaussian"))
        sc = augmented_scatter(model)
        worst = max(worst, _rel(sc.sqrt_gamma @ sc.sqrt_gamma.conj().T, sc.gamma))
    records.append(Record.algebraic("sqrt_gamma sqrt_gamma^H = gamma", 0.0, worst, 1e-10))

    rng = stream(seed, 6)
    model = NcCesModel(random_complex(rng, 3), random_factor(rng, 3), kappa, make_generator("student-t", nu=6.0))
    m = model.m
    iu = np.triu_indices(m)

    def work(rng, size):
        z = sample_nc_ces(model, size, rng)
        r = z - model.mu
        outer = r[:, :, None] * r.conj()[:, None, :]
        pseudo = r[:, :, None] * r[:, None, :]
        cols = [outer.real[:, iu[0], iu[1]], outer.imag[:, iu[0], iu[1]],
                pseudo.real[:, iu[0], iu[1]], pseudo.imag[:, iu[0], iu[1]]]
        return Moments.of(np.concatenate(cols, axis=1))

    mom = mc_reduce(n, seed, batch, work, Moments.merge, workers, key=(7,))
    targets = np.concatenate([model.sigma.real[iu], model.sigma.imag[iu], model.omega.real[iu], model.omega.imag[iu]])
    labels = [f"{blk}.{part}[{i},{j}]" for blk in ("Sigma", "Omega") for part in ("re", "im") for i, j in zip(*iu)]
    # the imaginary diagonal of Sigma is identically zero; its "stderr" is rounding noise
    structural_zero = [blk == "Sigma" and part == "im" and i == j
                       for blk in ("Sigma", "Omega") for part in ("re", "im") for i, j in zip(*iu)]
    for name, t, e, s, skip in zip(labels, targets, mom.mean, mom.stderr, structural_zero):
        if not skip:
            records.append(Record.statistical(f"sample scatter {name}", t, e, s))
    draws = sample_nc_ces(model, min(n, 200_000), stream(seed, 8))
    q = mahalanobis_q(draws, model)
    records.append(ks_record("KS mahalanobis_q vs Q law", q, lambda x: model.generator.q_cdf(x, m)))
    records.append(Record.statistical("mean mahalanobis_q", m, q.mean(), q.std(ddof=1) / np.sqrt(q.size)))
    return records


# -- fim ----------------------------------------------------------------------

def mixed_param_model(rng, generator, m: int = 3):
    """Location and scatter parameters on a random noncircular model (L = 4)."""
    base = NcCesModel(0.5 * random_complex(rng, m), random_factor(rng, m), rng.uniform(0.1, 0.7, m), generator)
    specs = [ParamSpec("mu", (0,), "re"), ParamSpec("mu", (1,), "im"),
             ParamSpec("a", (0, 0), "re"), ParamSpec("kappa", (1,))]
    return entry_param_model(base, specs)


def check_fim(seed: int, n: int, batch: int, workers: int) -> list[Record]:
    records = []
    gen = make_generator("student-t", nu=5.0)
    pm = mixed_param_model(stream(seed, 9), gen)
    model = pm.model()
    xi = xi_coefficients(gen, model.m)
    fim = fim_ncces(pm, xi).entries
    mus, gammas = pm.derivatives()

    def work(rng, size):
        return ScoreMoments(pm.size).add(_score_batch(sample_nc_ces(model, size, rng), model, mus, gammas))

    emp = mc_reduce(n, seed, batch, work, ScoreMoments.merge, workers, key=(10,)).result()
    for k in range(pm.size):
        records.append(Record.statistical(f"score mean {pm.names[k]}", 0.0, emp.score_mean[k], emp.score_stderr[k]))
        for l in range(k, pm.size):
            records.append(Record.statistical(f"fim[{pm.names[k]},{pm.names[l]}]", fim[k, l],
                                              emp.entries[k, l], emp.stderr[k, l]))
    lam = np.linalg.eigvalsh(fim)
    records.append(Record.algebraic("fim PSD deficit", 0.0, max(0.0, -lam.min()), 1e-10 * lam.max()))

    # derivation chain: the three expectation terms add up to the assembled form
    gamma = augmented_scatter(model).gamma
    terms = fim_terms(gamma, mus, gammas, xi)
    ginv = np.linalg.inv(gamma)
    tk = np.array([np.trace(ginv @ g).real for g in gammas])
    direct = (xi.xi1 * np.real(mus.conj() @ ginv @ mus.T)
              + xi.xi2 / 2 * np.real(np.einsum("kab,lba->kl", ginv @ gammas, ginv @ gammas))
              + (xi.xi2 - 1) / 4 * np.outer(tk, tk))
    records.append(Record.algebraic("fim term sum", 0.0, _rel(sum(terms.values()), direct), 1e-10))

    # gap and its kernel
    worst_gap, bad_kernel = 0.0, 0
    for i in range(20):
        rng = stream(seed, 11, i)
        m = 2 + i % 2
        base = NcCesModel(np.zeros(m), random_factor(rng, m), rng.uniform(0, 0.8, m), gen)
        specs = [ParamSpec("a", (0, 1), "re"), ParamSpec("a", (1, 0), "im"), ParamSpec("kappa", (0,))]
        spm = entry_param_model(base, specs)
        xi_r = XiCoefficients(xi1=1.0, xi2=float(rng.uniform(0.5, 2.0)), m=m)
        xi_g = XiCoefficients(xi1=1.0, xi2=1.0, m=m)
        diff = fim_ncces(spm, xi_r).entries - fim_ncces(spm, xi_g).entries
        worst_gap = max(worst_gap, _rel(gaussian_fim_gap(spm, xi_r), diff))
        lam_k = np.linalg.eigvalsh(gap_kernel(augmented_scatter(spm.model()).gamma))
        bad_kernel += int(lam_k.min() <= 0)
    records.append(Record.algebraic("gap equals xi2 difference", 0.0, worst_gap, 1e-10))
    records.append(Record.algebraic("gap kernel not positive definite (count)", 0, bad_kernel, 0))
    return records


# -- scrb-doa -----------------------------------------------------------------

def circular_instance_errors(model: DoaModel, xi2: float) -> dict[str, float]:
    crb = scrb_circular(model, xi2)
    bundle = build_projector_bundle(model, xi2)
    h1 = bundle.h1
    k = model.k
    out = {
        "closed form vs general": _rel(crb, scrb_from_general(model, xi2)),
        "closed form vs projector": _rel(crb, scrb_circular_projector(model, xi2)),
        "H1 idempotent": _rel(h1 @ h1, h1),
        "tr(H1) = K": abs(np.trace(h1).real - k) / k,
        "TBT expansion": _rel(bundle.t_i @ bundle.b @ bundle.t_i, bundle.ti_b_ti_expansion()),
        "orthogonality": float(np.max(bundle.orthogonality_residual())),
    }
    if bundle.pi_perp_v is not None:
        p = bundle.pi_perp_v
        out["Pi_V idempotent"] = _rel(p @ p, p)
        out["Pi_V Hermitian"] = _rel(p, p.conj().T)
    return out


def noncircular_instance_errors(model: NcDoaModel, xi2: float) -> dict[str, float]:
    bundle = build_nc_projector_bundle(model, xi2)
    return {
        "noncircular projector vs general": _rel(scrb_noncircular(model, xi2), scrb_noncircular_from_general(model, xi2)),
        "noncircular orthogonality": float(np.max(bundle.orthogonality_residual())),
    }


SCRB_TOLERANCES = {
    "closed form vs general": 1e-8, "closed form vs projector": 1e-8, "H1 idempotent": 1e-10,
    "tr(H1) = K": 1e-10, "TBT expansion": 1e-10, "orthogonality": 1e-10,
    "Pi_V idempotent": 1e-10, "Pi_V Hermitian": 1e-10,
    "noncircular projector vs general": 1e-6, "noncircular orthogonality": 1e-10,
}


def check_scrb(seed: int, instances: int = 20) -> list[Record]:
    worst: dict[str, float] = {}

    def fold(errs):
        for name, e in errs.items():
            worst[name] = max(worst.get(name, 0.0), e)

    for i in range(instances):
        rng = stream(seed, 12, i)
        fold(circular_instance_errors(random_doa_model(rng, 2, 6), float(rng.uniform(0.5, 2.0))))
        rng = stream(seed, 13, i)
        k, m = int(rng.integers(1, 3)), int(rng.choice([4, 6]))
        fold(noncircular_instance_errors(random_nc_doa_model(rng, k, m), float(rng.uniform(0.5, 2.0))))
    return [Record.algebraic(f"scrb {n}", 0.0, e, SCRB_TOLERANCES[n]) for n, e in worst.items()]


def run_all(seed: int, samples: int, batch: int, workers: int = 1) -> list[Record]:
    """Every module's invariants, in a fixed order."""
    return [
        *check_matrix_identities(seed),
        *check_fourth_moment(seed, samples, batch, workers),
        *check_generator_moments(),
        *check_q_sampling(seed, samples, batch, workers),
        *check_ces_sampling(seed, samples, batch, workers),
        *check_fim(seed, samples, batch, workers),
        *check_scrb(seed),
    ]
