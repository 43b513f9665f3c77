"""Checks for the gradient-conflict identities and progress bounds."""

import numpy as np
import pytest

from facetalign import theory


class TestConflictPair:
    def test_reference_construction(self):
        pair = theory.make_conflict_pair(1.0, 0.5, n=2)
        np.testing.assert_allclose(pair.g1, [1.0, 0.0])
        np.testing.assert_allclose(pair.g2, [-0.5, np.sqrt(0.75)], atol=1e-15)

    def test_invariants_on_grid(self):
        for g in theory.GRID_G:
            for rho in theory.GRID_RHO:
                pair = theory.make_conflict_pair(g, rho, n=5)
                assert abs(np.linalg.norm(pair.g1) - g) < 1e-12
                assert abs(np.linalg.norm(pair.g2) - g) < 1e-12
                assert abs(pair.g1 @ pair.g2 + rho * g * g) < 1e-12

    def test_round_trip(self):
        for g in theory.GRID_G:
            for rho in theory.GRID_RHO:
                pair = theory.make_conflict_pair(g, rho)
                measured = theory.conflict_coefficient(pair.g1, pair.g2)
                assert abs(measured - rho) < 1e-12

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            theory.make_conflict_pair(1.0, 1.0)
        with pytest.raises(ValueError):
            theory.make_conflict_pair(0.0, 0.5)
        with pytest.raises(ValueError):
            theory.make_conflict_pair(1.0, 0.5, n=1)


class TestConflictCoefficient:
    def test_antiparallel_is_one(self):
        g = np.array([2.0, -1.0, 0.5])
        assert abs(theory.conflict_coefficient(g, -g) - 1.0) < 1e-12

    def test_orthogonal_is_zero(self):
        assert theory.conflict_coefficient([1.0, 0.0], [0.0, 3.0]) == 0.0

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            theory.conflict_coefficient([0.0, 0.0], [1.0, 0.0])


class TestUniformNorm:
    def test_closed_form_matches_exact_for_equal_norms(self):
        for g in theory.GRID_G:
            for rho in theory.GRID_RHO:
                pair = theory.make_conflict_pair(g, rho)
                exact, closed = theory.uniform_grad_norm_sq(pair.g1, pair.g2)
                assert abs(exact - closed) <= 1e-12 * max(1.0, g * g)
                assert abs(exact - 0.5 * g * g * (1 - rho)) <= 1e-12 * max(1.0, g * g)

    def test_highlighted_point(self):
        pair = theory.make_conflict_pair(1.0, 0.5)
        exact, closed = theory.uniform_grad_norm_sq(pair.g1, pair.g2)
        assert abs(exact - 0.25) < 1e-12
        # cross-check against the explicit average vector
        avg = (pair.g1 + pair.g2) / 2
        np.testing.assert_allclose(avg, [0.25, np.sqrt(0.75) / 2], atol=1e-15)

    def test_near_total_conflict_vanishes(self):
        pair = theory.make_conflict_pair(1.0, 0.999)
        exact, _ = theory.uniform_grad_norm_sq(pair.g1, pair.g2)
        assert abs(exact - 5e-4) < 1e-12

    def test_unequal_norms_quarter_expansion(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            g1 = rng.normal(size=4)
            g2 = rng.normal(size=4)
            exact, _ = theory.uniform_grad_norm_sq(g1, g2)
            expected = 0.25 * (g1 @ g1 + g2 @ g2 + 2 * g1 @ g2)
            assert abs(exact - expected) < 1e-12 * max(1.0, abs(expected))


class TestLagNorm:
    def test_spot_value(self):
        pair = theory.make_conflict_pair(1.0, 0.5)
        exact, expansion, bound = theory.lag_grad_norm_sq(pair.g1, pair.g2, 2.0, 0.0)
        assert abs(exact - 7.0) < 1e-12
        assert abs(expansion - 7.0) < 1e-12
        assert abs(bound - 3.0) < 1e-12
        # explicit combined vector (2.5, sqrt(0.75))
        combined = 3.0 * pair.g1 + pair.g2
        np.testing.assert_allclose(combined, [2.5, np.sqrt(0.75)], atol=1e-15)

    def test_zero_multipliers_reduce_to_uniform(self):
        pair = theory.make_conflict_pair(1.5, 0.3)
        exact, _, _ = theory.lag_grad_norm_sq(pair.g1, pair.g2, 0.0, 0.0)
        uniform_exact, _ = theory.uniform_grad_norm_sq(pair.g1, pair.g2)
        assert abs(exact - 4.0 * uniform_exact) < 1e-12

    def test_expansion_and_bound_on_grid(self):
        for g in theory.GRID_G:
            for rho in theory.GRID_RHO_BOUND:
                pair = theory.make_conflict_pair(g, rho)
                for lam in theory.GRID_LAMBDA:
                    exact, expansion, bound = theory.lag_grad_norm_sq(
                        pair.g1, pair.g2, lam, 0.0
                    )
                    scale = max(1.0, g * g) * (1 + lam) ** 2
                    assert abs(exact - expansion) <= 1e-12 * scale
                    if lam >= theory.BOUND_LAMBDA_MIN:
                        assert bound <= exact + 1e-12

    def test_minimum_of_weight_polynomial(self):
        # f(w) = w^2 + 1 - 2 rho w satisfies f(1) = 2(1 - rho)
        for rho in theory.GRID_RHO:
            pair = theory.make_conflict_pair(1.0, rho)
            exact, _, _ = theory.lag_grad_norm_sq(pair.g1, pair.g2, 0.0, 0.0)
            assert abs(exact - 2.0 * (1 - rho)) < 1e-12


class TestSmoothnessProgress:
    def test_equality_at_critical_step(self):
        measured, guaranteed = theory.smoothness_progress_check(1.0, [1.0, 0.0], 1.0)
        assert abs(measured - 0.5) < 1e-12
        assert abs(guaranteed - 0.5) < 1e-12

    def test_strict_slack_inside(self):
        measured, guaranteed = theory.smoothness_progress_check(1.0, [1.0, 0.0], 0.5)
        assert abs(measured - 0.375) < 1e-12
        assert abs(guaranteed - 0.25) < 1e-12
        assert measured >= guaranteed

    def test_zero_point(self):
        measured, guaranteed = theory.smoothness_progress_check(2.0, [0.0, 0.0], 0.25)
        assert measured == 0.0 and guaranteed == 0.0

    def test_inequality_over_random_quadratics(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            l_const = float(rng.uniform(0.1, 5.0))
            eta = float(rng.uniform(0.0, 1.0)) / l_const
            if eta == 0.0:
                continue
            theta = rng.normal(size=rng.integers(1, 6))
            measured, guaranteed = theory.smoothness_progress_check(l_const, theta, eta)
            assert measured >= guaranteed - 1e-12

    def test_oversized_step_rejected(self):
        with pytest.raises(ValueError):
            theory.smoothness_progress_check(2.0, [1.0], 0.6)


class TestSpeedupIndicator:
    def test_no_reweighting_is_unity(self):
        for rho in theory.GRID_RHO:
            assert abs(theory.speedup_indicator(rho, 0.0) - 1.0) < 1e-12

    def test_spot_value(self):
        assert abs(theory.speedup_indicator(0.5, 2.0) - 7.0) < 1e-12

    def test_diverges_as_conflict_saturates(self):
        lo = theory.speedup_indicator(0.9, 2.0)
        hi = theory.speedup_indicator(0.999, 2.0)
        assert hi > lo > theory.speedup_indicator(0.5, 2.0)

    def test_rho_one_rejected(self):
        with pytest.raises(ValueError):
            theory.speedup_indicator(1.0, 2.0)


class TestGridReport:
    def test_default_grid_passes(self):
        rows = theory.verify_grid()
        assert rows
        assert all(r.passed for r in rows)
        report_only = [r for r in rows if not r.asserted]
        assert report_only and all(r.lambda1 < 1.0 for r in report_only)


class TestLiveGradientHook:
    """The identities applied to real training gradients, whose norms are
    never exactly equal: the quarter-expansion is the exact quantity."""

    def test_quarter_expansion_on_training_gradients(self):
        import facetalign as fa
        from facetalign import align

        items = fa.gen_synthetic_preferences(("A", "T"), 0.5, 48, seed=9)
        trace = align.train(
            items,
            fa.TrainConfig(algo="lag_dpo", steps=50, primal_lr=6.0, record_logits=True),
        )
        policy = align.TabularPolicy.uniform_from_items(items)
        ref = policy.freeze()
        for step in (0, 25, 49):
            live = policy.copy()
            live.logits = trace.records[step].logits.copy()
            grads = align.per_dim_gradients(live, ref, items, ("A", "T"), 0.1)
            g1, g2 = grads["A"], grads["T"]
            rho = theory.conflict_coefficient(g1, g2)
            assert -1.0 <= rho <= 1.0
            exact, _ = theory.uniform_grad_norm_sq(g1, g2)
            quarter = 0.25 * float(g1 @ g1 + g2 @ g2 + 2 * (g1 @ g2))
            assert abs(exact - quarter) < 1e-15
