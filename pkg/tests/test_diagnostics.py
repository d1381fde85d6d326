"""Tests for the diagnostic functionals: smoothed objective, auxiliary
functional and matched auxiliary matrix, quadratic-form identities,
stationarity residuals, null-space witnesses, the contraction constant, and
convergence-order fitting."""

import math

import numpy as np
import pytest

from hmirls.errors import InsufficientDataError, ParameterError, SingularityError
from hmirls.diagnostics import (
    condition_number,
    contraction_constant,
    contraction_predicate,
    fit_convergence_order,
    g_eps_p,
    j_p,
    nsp_witness_check,
    stationarity_residual,
    weighted_quadratic_form,
    z_opt,
)
from hmirls.measurements import (
    MeasurementOperator,
    null_space_basis,
    sample_gaussian_operator,
)
from hmirls.solver import (
    SolverConfig,
    Variant,
    build_weight_state,
    identity_weight_state,
    weighted_ls_step,
)

from conftest import make_golden_instance


class TestGEpsP:
    def test_zero_matrix(self):
        assert g_eps_p(np.zeros((3, 4)), 0.5, 0.7) == pytest.approx(
            3 * 0.5**0.7, rel=1e-14
        )

    def test_unsmoothed_is_schatten_power(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((4, 4))
        s = np.linalg.svd(X, compute_uv=False)
        assert g_eps_p(X, 0.0, 0.6) == pytest.approx(
            float(np.sum(s**0.6)), rel=1e-13
        )

    def test_matches_spectral_sum(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((5, 3))
        s = np.linalg.svd(X, compute_uv=False)
        expected = float(np.sum((s**2 + 0.2**2) ** (0.7 / 2)))
        assert g_eps_p(X, 0.2, 0.7) == pytest.approx(expected, rel=1e-13)

    def test_parameter_checks(self):
        with pytest.raises(ParameterError):
            g_eps_p(np.eye(2), -0.1, 0.5)
        with pytest.raises(ParameterError):
            g_eps_p(np.eye(2), 0.1, 1.5)


class TestZOpt:
    def test_zero_matrix_pure_smoothing(self):
        Z = z_opt(np.zeros((3, 5)), 0.5, 0.4)
        s = np.linalg.svd(Z, compute_uv=False)
        assert np.allclose(s, 0.5 ** (0.4 - 2.0), rtol=1e-13)

    def test_scalar_case(self):
        Z = z_opt(np.array([[1.0]]), 1.0, 1.0)
        assert Z[0, 0] == pytest.approx(2.0 ** (-0.5), rel=1e-14)

    def test_full_rank_by_construction(self):
        rng = np.random.default_rng(3)
        Z = z_opt(rng.standard_normal((4, 6)), 0.3, 0.5)
        s = np.linalg.svd(Z, compute_uv=False)
        assert s[-1] > 1e-12 * s[0]

    def test_zero_smoothing_rank_deficient_rejected(self):
        with pytest.raises(SingularityError):
            z_opt(np.diag([1.0, 0.0]), 0.0, 0.5)

    def test_zero_smoothing_full_rank_allowed(self):
        Z = z_opt(np.diag([2.0, 1.0]), 0.0, 0.5)
        assert np.allclose(
            np.diag(Z), [2.0 ** (-1.5), 1.0], rtol=1e-13
        )


class TestJP:
    def test_rank_deficient_is_infinite(self):
        assert j_p(np.eye(2), 0.5, np.diag([1.0, 0.0]), 0.5) == math.inf

    def test_matched_auxiliary_matrix_recovers_smoothed_objective(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(100):
            d1, d2 = int(rng.integers(1, 7)), int(rng.integers(1, 7))
            X = rng.standard_normal((d1, d2))
            eps = float(rng.uniform(0.01, 2.0))
            p = float(rng.uniform(0.05, 1.0))
            a = j_p(X, eps, z_opt(X, eps, p), p)
            b = g_eps_p(X, eps, p)
            worst = max(worst, abs(a - b) / abs(b))
        assert worst <= 1e-10

    def test_local_minimality_of_auxiliary_matrix(self):
        # small full-rank perturbations around the matched point never
        # decrease the functional (50 random relative 1e-3 perturbations)
        rng = np.random.default_rng(99)
        for _ in range(50):
            d1, d2 = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            X = rng.standard_normal((d1, d2))
            eps = float(rng.uniform(0.05, 1.0))
            p = float(rng.uniform(0.1, 1.0))
            Z = z_opt(X, eps, p)
            base = j_p(X, eps, Z, p)
            E = rng.standard_normal(Z.shape)
            Zp = Z + 1e-3 * np.linalg.norm(Z) * E / np.linalg.norm(E)
            assert j_p(X, eps, Zp, p) >= base - 1e-12 * abs(base)

    def test_matches_loop_oracle(self):
        # re-derive the three terms with explicit loops over Z's spectrum
        rng = np.random.default_rng(5)
        X = rng.standard_normal((3, 4))
        Z = rng.standard_normal((3, 4)) + 0.5 * np.eye(3, 4)
        eps, p = 0.3, 0.6
        Uz, s, Vzt = np.linalg.svd(Z, full_matrices=True)
        C = Uz.T @ X @ Vzt.T
        quad = 0.0
        for i in range(3):
            for j in range(4):
                si = s[i] if i < len(s) else 0.0
                sj = s[j] if j < len(s) else 0.0
                inv = (1.0 / si if si else 0.0) + (1.0 / sj if sj else 0.0)
                quad += 2.0 / inv * C[i, j] ** 2
        expected = (
            0.5 * p * quad
            + 0.5 * eps**2 * p * np.sum(s)
            + 0.5 * (2 - p) * np.sum(s ** (p / (p - 2)))
        )
        assert j_p(X, eps, Z, p) == pytest.approx(float(expected), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            j_p(np.eye(2), 0.5, np.eye(3), 0.5)


class TestWeightedQuadraticForm:
    def test_identity_weights_give_frobenius(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((3, 5))
        w = identity_weight_state(3, 5, 0.5, Variant.HM)
        assert weighted_quadratic_form(w, X) == pytest.approx(
            float(np.sum(X**2)), rel=1e-13
        )

    @pytest.mark.parametrize("variant", list(Variant))
    def test_self_weighted_form_is_schatten_power(self, variant):
        # every mean of the one-sided profiles collapses to sigma^p on the
        # diagonal of the matrix's own basis
        rng = np.random.default_rng(7)
        X = rng.standard_normal((4, 4))
        p = 0.55
        w = build_weight_state(X, 0.0, p, variant)
        s = np.linalg.svd(X, compute_uv=False)
        assert weighted_quadratic_form(w, X) == pytest.approx(
            float(np.sum(s**p)), rel=1e-10
        )

    def test_strictly_positive(self):
        rng = np.random.default_rng(8)
        w = build_weight_state(rng.standard_normal((3, 3)), 0.2, 0.5, Variant.HM)
        assert weighted_quadratic_form(w, rng.standard_normal((3, 3))) > 0


class TestMeanOrdering:
    def test_harmonic_below_arithmetic(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((5, 5))
        eps = 0.3
        hm = build_weight_state(X, eps, 0.5, Variant.HM).H
        am = build_weight_state(X, eps, 0.5, Variant.AM).H
        assert np.all(hm <= am + 1e-15)
        sbar = np.sqrt(np.linalg.svd(X, compute_uv=False) ** 2 + eps**2)
        for i in range(5):
            for j in range(5):
                if abs(sbar[i] - sbar[j]) > 1e-12:
                    assert hm[i, j] < am[i, j]
                else:
                    assert hm[i, j] == pytest.approx(am[i, j], rel=1e-13)


class TestStationarityResidual:
    def test_full_mask_empty_null_space(self):
        rows, cols = np.divmod(np.arange(9), 3)
        op = MeasurementOperator("completion", 3, 3, rows=rows, cols=cols)
        w = identity_weight_state(3, 3, 0.5, Variant.HM)
        assert stationarity_residual(op, w, np.ones((3, 3))) == 0.0

    @pytest.mark.parametrize("variant", list(Variant))
    def test_accepted_step_is_stationary(self, golden, variant):
        rng = np.random.default_rng(10)
        w = build_weight_state(rng.standard_normal((4, 4)), 0.2, 0.5, variant)
        cfg = SolverConfig(p=0.5, rank_estimate=1, variant=variant)
        X = weighted_ls_step(golden.operator, golden.y, w, cfg)
        assert stationarity_residual(golden.operator, w, X) <= 1e-8

    def test_perturbed_step_is_not_stationary(self, golden):
        rng = np.random.default_rng(11)
        w = build_weight_state(rng.standard_normal((4, 4)), 0.2, 0.5, Variant.HM)
        cfg = SolverConfig(p=0.5, rank_estimate=1)
        X = weighted_ls_step(golden.operator, golden.y, w, cfg)
        bump = null_space_basis(golden.operator)[0]
        X_off = X + 0.5 * np.linalg.norm(X) * bump
        assert stationarity_residual(golden.operator, w, X_off) > 0.01

    def test_dense_operator_path(self):
        rng = np.random.default_rng(12)
        op = sample_gaussian_operator(3, 3, 6, rng)
        w = build_weight_state(rng.standard_normal((3, 3)), 0.3, 0.5, Variant.HM)
        cfg = SolverConfig(p=0.5, rank_estimate=1)
        y = rng.standard_normal(6)
        X = weighted_ls_step(op, y, w, cfg)
        assert stationarity_residual(op, w, X) <= 1e-8


class TestNspWitnessCheck:
    def test_low_rank_witness_violates_strong(self):
        rep = nsp_witness_check(np.diag([3.0, 2.0, 0.0, 0.0, 0.0]), 2, 0.5, 0.9)
        assert rep.strong_rhs == 0.0
        assert rep.strong_lhs > 0
        assert not rep.satisfied_strong
        assert not rep.satisfied_weak
        # same conclusion for a product that is only numerically rank-2
        rng = np.random.default_rng(13)
        W = rng.standard_normal((5, 2)) @ rng.standard_normal((2, 5))
        rep = nsp_witness_check(W, 2, 0.5, 0.9)
        assert rep.strong_rhs <= 1e-6
        assert not rep.satisfied_strong

    def test_flat_spectrum_weak_depends_on_split(self):
        Q = np.eye(6)
        for r, expect in [(1, True), (2, True), (3, False)]:
            rep = nsp_witness_check(Q, r, 1.0, 0.5)
            assert rep.satisfied_weak is expect

    def test_strong_implies_weak_when_gamma_at_most_one(self):
        rng = np.random.default_rng(14)
        for _ in range(200):
            W = rng.standard_normal((6, 6))
            r = int(rng.integers(1, 5))
            p = float(rng.uniform(0.1, 1.0))
            gamma = float(rng.uniform(0.05, 1.0))
            rep = nsp_witness_check(W, r, p, gamma)
            if rep.satisfied_strong:
                assert rep.satisfied_weak

    def test_gaussian_kernel_witnesses_mostly_weak(self):
        # heavily oversampled operator: random kernel elements should be
        # spread-out matrices, far from low-rank
        rng = np.random.default_rng(7)
        op = sample_gaussian_operator(10, 10, 80, rng)
        basis = null_space_basis(op)
        hits = 0
        for _ in range(100):
            c = rng.standard_normal(len(basis))
            W = sum(ci * B for ci, B in zip(c, basis))
            hits += nsp_witness_check(W, 1, 0.5, 0.4).satisfied_weak
        assert hits >= 95

    def test_one_sidedness_is_documented(self):
        rep = nsp_witness_check(np.eye(4), 1, 0.5, 0.5)
        assert "never" in rep.note

    def test_parameter_checks(self):
        with pytest.raises(ParameterError):
            nsp_witness_check(np.eye(3), 3, 0.5, 0.5)
        with pytest.raises(ParameterError):
            nsp_witness_check(np.eye(3), 1, 0.5, 0.0)
        with pytest.raises(ParameterError):
            nsp_witness_check(np.zeros((3, 3)), 1, 0.5, 0.5)


class TestContractionConstant:
    def test_double_entry_value(self):
        # independent re-typing of the closed form, plus its frozen value
        g, d, r, p, sig, zeta, kappa = 0.5, 10, 2, 0.5, 1.0, 0.5, 1.0
        retyped = (
            2.0 ** (5 * p)
            * (1 + g) ** p
            * ((g * (3 + g) * (1 + g)) / (1 - g)) ** (2 - p)
            * ((d - r) / r) ** (2 - p / 2)
            * r**p
            * (sig ** (p * (p - 1)) / (1 - zeta) ** (2 * p))
            * kappa**p
        )
        got = contraction_constant(g, d, r, p, sig, zeta, kappa)
        assert got == pytest.approx(retyped, rel=1e-14)
        assert got == pytest.approx(2666.9173215531073, rel=1e-13)

    def test_monotone_in_kappa_and_gamma(self):
        base = dict(d=12, r=3, p=0.5, sigma_r_X0=1.0, zeta=0.5)
        for g in (0.1, 0.3, 0.5, 0.7):
            vals = [
                contraction_constant(gamma_2r=g, kappa=k, **base)
                for k in (1.0, 2.0, 5.0, 10.0)
            ]
            assert all(a < b for a, b in zip(vals, vals[1:]))
        for k in (1.0, 3.0):
            vals = [
                contraction_constant(gamma_2r=g, kappa=k, **base)
                for g in (0.1, 0.3, 0.5, 0.7, 0.9)
            ]
            assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_parameter_ranges(self):
        good = dict(gamma_2r=0.5, d=10, r=2, p=0.5, sigma_r_X0=1.0,
                    zeta=0.5, kappa=1.0)
        for key, bad in [
            ("gamma_2r", 1.0), ("gamma_2r", 0.0), ("zeta", 1.0),
            ("kappa", 0.5), ("p", 0.0), ("r", 6), ("sigma_r_X0", 0.0),
        ]:
            with pytest.raises(ParameterError):
                contraction_constant(**{**good, key: bad})


class TestContractionPredicate:
    def test_degenerates_at_p_one(self):
        # the error exponent p(1-p) vanishes, so only mu < 1 matters
        assert contraction_predicate(0.99, 1e6, 1.0)
        assert not contraction_predicate(1.01, 1e-6, 1.0)

    def test_small_error_helps_for_p_below_one(self):
        assert not contraction_predicate(10.0, 1.0, 0.5)
        assert contraction_predicate(10.0, 1e-6, 0.5)

    def test_parameter_checks(self):
        with pytest.raises(ParameterError):
            contraction_predicate(0.0, 1.0, 0.5)


class TestFitConvergenceOrder:
    def test_planted_power_laws(self):
        for q in (1.0, 1.5, 1.9):
            errors = [1e-3]
            if q == 1.0:
                for _ in range(25):
                    errors.append(0.5 * errors[-1])
            else:
                for _ in range(6):
                    errors.append(errors[-1] ** q)
            fit = fit_convergence_order(errors)
            assert fit.order == pytest.approx(q, abs=1e-6)
            assert fit.points_used >= 3

    def test_exactly_three_in_window(self):
        # q = 1.9 from 1e-3 leaves exactly three values inside the default
        # window, the minimum the fit accepts
        errors = [1e-3]
        for _ in range(6):
            errors.append(errors[-1] ** 1.9)
        fit = fit_convergence_order(errors)
        assert fit.points_used == 3

    def test_too_few_values(self):
        with pytest.raises(InsufficientDataError):
            fit_convergence_order([1e-3, 1e-5])

    def test_window_excludes_everything(self):
        with pytest.raises(InsufficientDataError):
            fit_convergence_order([1.0, 2.0, 3.0, 4.0])

    def test_stagnant_errors_rejected(self):
        with pytest.raises(InsufficientDataError):
            fit_convergence_order([1e-5, 1e-5, 1e-5, 1e-5])

    def test_non_consecutive_pairs_excluded(self):
        # a spike leaving the window breaks the chain; only consecutive
        # in-window pairs contribute
        errors = [1e-3, 1e-4, 1.0, 1e-5, 1e-6, 1e-7]
        fit = fit_convergence_order(errors)
        # the spike at index 2 contributes to no pair: 5 values used, not 6
        assert fit.points_used == 5

    def test_bad_window(self):
        with pytest.raises(ParameterError):
            fit_convergence_order([1e-3, 1e-4, 1e-5], window=(1e-2, 1e-2))


class TestConditionNumber:
    def test_identity(self):
        assert condition_number(np.eye(4), 3) == pytest.approx(1.0, rel=1e-14)

    def test_diagonal(self):
        assert condition_number(np.diag([4.0, 2.0]), 2) == pytest.approx(2.0)

    def test_matches_spectral_ratio(self):
        rng = np.random.default_rng(15)
        X = rng.standard_normal((6, 4))
        s = np.linalg.svd(X, compute_uv=False)
        assert condition_number(X, 3) == pytest.approx(s[0] / s[2], rel=1e-13)

    def test_zero_sigma_r(self):
        with pytest.raises(SingularityError):
            condition_number(np.diag([1.0, 0.0]), 2)

    def test_r_out_of_range(self):
        with pytest.raises(ParameterError):
            condition_number(np.eye(3), 4)
