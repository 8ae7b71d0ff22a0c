import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cesbound import kernels
from cesbound.ces import NcCesModel, augment, augmented_scatter, sample_nc_ces
from cesbound.errors import DimensionMismatch, InvalidParameter
from cesbound.fisher import (
    ParamModel, ParamSpec, ScoreMoments, empirical_fim, entry_param_model, fim_from_derivatives, fim_ncces,
    fim_terms, finite_difference_derivatives, gap_kernel, gaussian_fim_gap, log_density_kernel, score,
    score_moments,
)
from cesbound.generators import XiCoefficients, make_generator, xi_coefficients
from cesbound.rng import stream

from conftest import crandn, rel_err, within_3se

GAUSS = make_generator("gaussian")
T5 = make_generator("student-t", nu=5.0)
ONE = XiCoefficients(1.0, 1.0, 0)

MIXED = [ParamSpec("mu", (0,), "re"), ParamSpec("mu", (1,), "im"),
         ParamSpec("a", (0, 1), "re"), ParamSpec("a", (2, 0), "im"), ParamSpec("kappa", (1,))]
SCATTER = [ParamSpec("a", (0, 0), "re"), ParamSpec("a", (0, 1), "im"), ParamSpec("kappa", (0,))]


def random_base(rng, m, gen, kappa=None):
    a = np.eye(m) + 0.3 * crandn(rng, m, m) / np.sqrt(m)
    kappa = rng.uniform(0.1, 0.7, m) if kappa is None else kappa
    return NcCesModel(0.5 * crandn(rng, m), a, kappa, gen)


def gradient_fd(fun, alpha, h=1e-6):
    out = np.zeros_like(alpha)
    for k in range(alpha.size):
        e = np.zeros_like(alpha)
        e[k] = h
        out[k] = (fun(alpha + e) - fun(alpha - e)) / (2 * h)
    return out


class TestScore:
    def test_circular_gaussian_residual_form(self, rng):
        model = NcCesModel.circular(crandn(rng, 2), np.eye(2), GAUSS)
        pm = entry_param_model(model, [ParamSpec("mu", (0,), "re"), ParamSpec("mu", (0,), "im")])
        z = crandn(rng, 2)
        r = z[0] - model.mu[0]
        np.testing.assert_allclose(score(z, pm), [2 * r.real, 2 * r.imag], rtol=1e-12)

    @pytest.mark.parametrize("gen", [GAUSS, T5, make_generator("generalized-gaussian", s=0.7)],
                             ids=["gaussian", "student-t", "generalized-gaussian"])
    def test_matches_log_density_gradient(self, gen, rng):
        pm = entry_param_model(random_base(rng, 3, gen), MIXED)
        for z in crandn(rng, 5, 3):
            fd = gradient_fd(lambda a: log_density_kernel(z, pm.model(a)), pm.alpha)
            np.testing.assert_allclose(score(z, pm), fd, rtol=1e-6, atol=1e-7)

    def test_batch_and_single_agree(self, rng):
        pm = entry_param_model(random_base(rng, 3, T5), MIXED)
        z = crandn(rng, 4, 3)
        batch = score(z, pm)
        assert batch.shape == (4, pm.size)
        for i in range(4):
            np.testing.assert_allclose(score(z[i], pm), batch[i], rtol=1e-12)

    @pytest.mark.parametrize("kind,params", [("gaussian", {}), ("student-t", {"nu": 3.0}),
                                             ("student-t", {"nu": 10.0}), ("generalized-gaussian", {"s": 0.5}),
                                             ("generalized-gaussian", {"s": 2.0})])
    @pytest.mark.parametrize("m", [2, 3])
    def test_regularity(self, kind, params, m, rng):
        gen = make_generator(kind, **params)
        specs = [ParamSpec("mu", (0,), "re"), ParamSpec("a", (1, 0), "re"), ParamSpec("kappa", (m - 1,))]
        pm = entry_param_model(random_base(rng, m, gen), specs)
        est = empirical_fim(sample_nc_ces(pm.model(), 300_000, rng), pm)
        assert within_3se(est.score_mean, 0.0, est.score_stderr)

    def test_phi_times_eta_derivative(self, rng):
        # E[phi(eta) d eta / d alpha_k] = tr(G^-1 G_k) / 2
        pm = entry_param_model(random_base(rng, 3, T5), MIXED)
        model = pm.model()
        mus, gammas = pm.derivatives()
        ginv = augmented_scatter(model).inv()
        n = 500_000
        r = augment(sample_nc_ces(model, n, rng) - model.mu)
        eta, lin, quad = kernels.score_pieces(r, ginv, gammas, mus)
        x = model.generator.phi(eta, 3)[:, None] * (-lin - 0.5 * quad)
        target = 0.5 * np.real(np.trace(ginv @ gammas, axis1=1, axis2=2))
        assert within_3se(x.mean(axis=0), target, x.std(axis=0) / np.sqrt(n))


class TestDerivatives:
    def test_analytic_matches_finite_difference(self, rng):
        pm = entry_param_model(random_base(rng, 4, T5), MIXED)
        mus, gammas = pm.derivatives()
        fmus, fgammas = finite_difference_derivatives(pm.build, pm.alpha)
        assert rel_err(mus, fmus) < 1e-6
        assert rel_err(gammas, fgammas) < 1e-6

    def test_finite_difference_fallback(self, rng):
        base = entry_param_model(random_base(rng, 3, T5), MIXED)
        fd = ParamModel(base.alpha, base.build)
        xi = xi_coefficients(T5, 3)
        assert rel_err(fim_ncces(fd, xi).entries, fim_ncces(base, xi).entries) < 1e-6

    def test_structure_is_enforced(self, rng):
        model = random_base(rng, 2, GAUSS)
        bad = lambda a: (np.zeros((1, 4)), crandn(rng, 1, 4, 4))
        pm = ParamModel(np.zeros(1), lambda a: model, derivative=bad)
        with pytest.raises(DimensionMismatch):
            fim_ncces(pm, ONE)

    def test_param_spec_validation(self):
        with pytest.raises(InvalidParameter):
            ParamSpec("sigma", (0,))
        with pytest.raises(InvalidParameter):
            ParamSpec("a", (0,))
        with pytest.raises(InvalidParameter):
            ParamSpec("kappa", (0,), "im")


class TestFim:
    def test_scalar_gaussian_mean(self, rng):
        sigma = 0.7
        model = NcCesModel.circular([0.3 + 0.1j], [[sigma]], GAUSS)
        pm = entry_param_model(model, [ParamSpec("mu", (0,), "re")])
        fim = fim_ncces(pm, ONE).entries
        assert fim[0, 0] == pytest.approx(2 / sigma**2, rel=1e-12)
        est = empirical_fim(sample_nc_ces(model, 1_000_000, rng), pm)
        assert within_3se(est.entries[0, 0], 2 / sigma**2, est.stderr[0, 0])

    def test_pure_location(self, rng):
        pm = entry_param_model(random_base(rng, 3, T5), [ParamSpec("mu", (i,), p) for i in range(3) for p in ("re", "im")])
        xi = xi_coefficients(T5, 3)
        mus, _ = pm.derivatives()
        ginv = np.linalg.inv(augmented_scatter(pm.model()).gamma)
        np.testing.assert_allclose(fim_ncces(pm, xi).entries, xi.xi1 * np.real(mus.conj() @ ginv @ mus.T), rtol=1e-12)

    def test_gaussian_reduction_to_circular_slepian_bangs(self, rng):
        m = 3
        a0, mu0 = np.eye(m) + 0.3 * crandn(rng, m, m), crandn(rng, m)
        specs = [ParamSpec("mu", (0,), "re"), ParamSpec("mu", (2,), "im"),
                 ParamSpec("a", (0, 1), "re"), ParamSpec("a", (1, 1), "im"), ParamSpec("a", (2, 0), "re")]
        pm = entry_param_model(NcCesModel.circular(mu0, a0, GAUSS), specs)
        # classical circular form, built from scratch: 2 Re(dmu^H S^-1 dmu) + tr(S^-1 dS S^-1 dS)
        dmu, ds = [], []
        for s in specs:
            e = np.zeros((m, m), dtype=complex) if s.target == "a" else np.zeros(m, dtype=complex)
            e[s.index] = 1.0 if s.part == "re" else 1j
            dmu.append(e if s.target == "mu" else np.zeros(m))
            ds.append(e @ a0.conj().T + a0 @ e.conj().T if s.target == "a" else np.zeros((m, m)))
        sinv = np.linalg.inv(a0 @ a0.conj().T)
        classical = np.array([[2 * np.real(dmu[k].conj() @ sinv @ dmu[l]) + np.real(np.trace(sinv @ ds[k] @ sinv @ ds[l]))
                               for l in range(len(specs))] for k in range(len(specs))])
        assert np.max(np.abs(fim_ncces(pm, ONE).entries - classical)) <= 1e-10 * np.max(np.abs(classical))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.3, 3.0), st.floats(1.0, 3.0))
    def test_symmetric_psd(self, seed, xi1, xi2):
        pm = entry_param_model(random_base(stream(seed), 3, GAUSS), MIXED)
        fim = fim_ncces(pm, XiCoefficients(xi1, xi2, 3)).entries
        np.testing.assert_allclose(fim, fim.T, atol=1e-12 * np.abs(fim).max())
        lam = np.linalg.eigvalsh(fim)
        assert lam.min() >= -1e-10 * lam.max()

    def test_derivation_chain_terms(self, rng):
        # the location and scatter terms are E[phi^2 lin_k lin_l] and E[phi^2 quad_k quad_l] / 4
        pm = entry_param_model(random_base(rng, 3, T5), MIXED)
        model = pm.model()
        xi = xi_coefficients(T5, 3)
        mus, gammas = pm.derivatives()
        gamma = augmented_scatter(model).gamma
        terms = fim_terms(gamma, mus, gammas, xi)
        np.testing.assert_allclose(sum(terms.values()), fim_from_derivatives(gamma, mus, gammas, xi), atol=1e-12)
        t = np.real(np.trace(np.linalg.inv(gamma) @ gammas, axis1=1, axis2=2))
        np.testing.assert_allclose(terms["score_mean"], -0.25 * np.outer(t, t))
        n = 1_000_000
        r = augment(sample_nc_ces(model, n, rng) - model.mu)
        eta, lin, quad = kernels.score_pieces(r, np.linalg.inv(gamma), gammas, mus)
        phi2 = T5.phi(eta, 3) ** 2
        for name, x in (("location", lin), ("scatter", 0.5 * quad)):
            prod = phi2[:, None, None] * x[:, :, None] * x[:, None, :]
            se = prod.std(axis=0) / np.sqrt(n)
            assert within_3se(prod.mean(axis=0), terms[name], se), name

    def test_matches_empirical(self, rng):
        pm = entry_param_model(random_base(rng, 3, T5), MIXED[:4])
        xi = xi_coefficients(T5, 3)
        est = empirical_fim(sample_nc_ces(pm.model(), 500_000, rng), pm)
        assert within_3se(est.entries, fim_ncces(pm, xi).entries, est.stderr)

    def test_standard_error_scaling(self, rng):
        pm = entry_param_model(random_base(rng, 3, T5), MIXED[:3])
        z = sample_nc_ces(pm.model(), 400_000, rng)
        half = empirical_fim(z[:200_000], pm)
        full = empirical_fim(z, pm)
        ratio = full.stderr / half.stderr
        np.testing.assert_allclose(ratio, 1 / np.sqrt(2), rtol=0.05)

    def test_batched_moments_are_mergeable(self, rng):
        pm = entry_param_model(random_base(rng, 3, T5), MIXED)
        z = sample_nc_ces(pm.model(), 30_000, rng)
        whole = score_moments(z, pm, batch=30_000)
        parts = score_moments(z[:7_000], pm, batch=1_000).merge(score_moments(z[7_000:], pm, batch=4_096))
        np.testing.assert_allclose(parts.result().entries, whole.result().entries, rtol=1e-12)
        assert parts.n == whole.n == 30_000

    def test_needs_enough_samples(self, rng):
        pm = entry_param_model(random_base(rng, 2, GAUSS), [ParamSpec("mu", (0,))])
        with pytest.raises(InvalidParameter):
            empirical_fim(np.zeros((999, 2)), pm)


class TestGap:
    @pytest.mark.parametrize("m", [2, 3])
    def test_equals_fim_difference(self, m, rng):
        for _ in range(10):
            pm = entry_param_model(random_base(rng, m, T5), SCATTER)
            xi2 = rng.uniform(0.3, 3.0)
            xi = XiCoefficients(1.3, xi2, m)
            diff = fim_ncces(pm, xi).entries - fim_ncces(pm, XiCoefficients(1.3, 1.0, m)).entries
            gap = gaussian_fim_gap(pm, xi)
            assert np.max(np.abs(gap - diff)) <= 1e-10 * max(1.0, np.abs(diff).max())
            lam = np.linalg.eigvalsh(np.sign(xi2 - 1) * gap)
            assert lam.min() >= -1e-10 * max(1.0, np.abs(lam).max())

    def test_zero_for_gaussian(self, rng):
        pm = entry_param_model(random_base(rng, 2, T5), SCATTER)
        np.testing.assert_array_equal(gaussian_fim_gap(pm, XiCoefficients(1.0, 1.0, 2)), 0.0)

    @pytest.mark.parametrize("m", [2, 3])
    def test_kernel_positive_definite(self, m, rng):
        for _ in range(20):
            gamma = augmented_scatter(random_base(rng, m, GAUSS, kappa=rng.uniform(0, 0.95, m))).gamma
            kern = gap_kernel(gamma)
            np.testing.assert_allclose(kern, kern.conj().T, atol=1e-12 * np.abs(kern).max())
            assert np.linalg.eigvalsh(kern).min() > 0
