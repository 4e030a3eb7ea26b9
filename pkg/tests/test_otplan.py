import numpy as np
import pytest

from otdet.featstore import FeatureMatrix
from otdet.otplan import (
    COSINE,
    L2,
    CostMatrix,
    DiscreteMeasure,
    SinkhornConvergenceError,
    TransportPlan,
    cosine_cost,
    l2_cost,
    plan_row_costs,
    plan_row_max,
    sinkhorn,
)

from oracles import naive_sinkhorn


def unit_rows(rows):
    arr = np.asarray(rows, dtype=np.float64)
    arr = arr / np.linalg.norm(arr, axis=1, keepdims=True)
    return FeatureMatrix(arr.astype(np.float32), normalized=True)


def solve(inst, **kw):
    return sinkhorn(
        CostMatrix(inst["cost"]),
        DiscreteMeasure(inst["mu"]),
        DiscreteMeasure(inst["nu"]),
        inst["epsilon"],
        **kw,
    )


class TestCosts:
    def test_identical_orthogonal_antipodal(self):
        test = unit_rows([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        text = unit_rows([[1.0, 0.0]])
        cost = cosine_cost(test, text)
        np.testing.assert_allclose(cost.values, [[0.0], [1.0], [2.0]], atol=1e-6)

    def test_dimension_mismatch(self):
        a = unit_rows([[1.0, 0.0]])
        b = unit_rows([[1.0, 0.0, 0.0]])
        with pytest.raises(ValueError, match="dimension"):
            cosine_cost(a, b)

    def test_requires_normalized(self):
        raw = FeatureMatrix(np.array([[3.0, 4.0]], dtype=np.float32))
        with pytest.raises(ValueError, match="normalized"):
            cosine_cost(raw, raw)

    def test_l2_is_chord_distance(self):
        test = unit_rows([[1.0, 0.0], [0.0, 1.0]])
        text = unit_rows([[1.0, 0.0]])
        cost = l2_cost(test, text)
        np.testing.assert_allclose(cost.values, [[0.0], [np.sqrt(2.0)]], atol=1e-6)
        assert cost.metric_tag == L2

    def test_cost_entries_stay_in_range(self):
        rng = np.random.default_rng(0)
        test = unit_rows(rng.normal(size=(40, 8)))
        text = unit_rows(rng.normal(size=(5, 8)))
        cost = cosine_cost(test, text)
        assert cost.metric_tag == COSINE
        assert cost.values.min() >= 0.0 and cost.values.max() <= 2.0


class TestMeasures:
    def test_uniform(self):
        m = DiscreteMeasure.uniform(4)
        np.testing.assert_allclose(m.weights, 0.25)

    def test_rejects_bad_mass(self):
        with pytest.raises(ValueError, match="sum"):
            DiscreteMeasure(np.array([0.5, 0.6]))
        with pytest.raises(ValueError, match="positive"):
            DiscreteMeasure(np.array([1.0, 0.0]))


class TestSinkhorn:
    def test_one_by_one(self):
        plan = sinkhorn(
            CostMatrix(np.array([[0.7]])),
            DiscreteMeasure.uniform(1),
            DiscreteMeasure.uniform(1),
            epsilon=90.0,
        )
        np.testing.assert_allclose(plan.coupling, [[1.0]], atol=1e-9)

    def test_constant_cost_gives_product_measure(self):
        plan = sinkhorn(
            CostMatrix(np.full((2, 2), 0.3)),
            DiscreteMeasure.uniform(2),
            DiscreteMeasure.uniform(2),
            epsilon=90.0,
        )
        np.testing.assert_allclose(plan.coupling, 0.25, atol=1e-7)

    def test_matches_frozen_oracle_plan(self, small_instance):
        plan = solve(small_instance, tol=1e-12, max_iter=20000)
        np.testing.assert_allclose(plan.coupling, small_instance["plan"], atol=1e-8)

    def test_rejects_bad_epsilon(self, small_instance):
        with pytest.raises(ValueError, match="epsilon"):
            solve({**small_instance, "epsilon": 0.0})
        with pytest.raises(ValueError, match="epsilon"):
            solve({**small_instance, "epsilon": -3.0})

    def test_nonconvergence_raises_with_state(self, small_instance):
        with pytest.raises(SinkhornConvergenceError) as info:
            solve(small_instance, tol=1e-14, max_iter=2)
        assert info.value.iterations == 2
        assert info.value.marginal_error > 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="sizes"):
            sinkhorn(
                CostMatrix(np.zeros((2, 3))),
                DiscreteMeasure.uniform(3),
                DiscreteMeasure.uniform(3),
                epsilon=1.0,
            )

    def test_feasibility_on_random_instances(self):
        rng = np.random.default_rng(123)
        for n, m, eps in [(64, 10, 5.0), (128, 33, 90.0), (512, 100, 90.0), (17, 3, 500.0)]:
            cost = CostMatrix(rng.uniform(0.0, 2.0, size=(n, m)))
            plan = sinkhorn(
                cost, DiscreteMeasure.uniform(n), DiscreteMeasure.uniform(m),
                epsilon=eps, max_iter=5000,
            )
            P = plan.coupling
            assert (P >= 0.0).all()
            assert np.abs(P.sum(axis=1) - 1.0 / n).sum() < 1e-6
            assert np.abs(P.sum(axis=0) - 1.0 / m).sum() < 1e-6
            assert abs(P.sum() - 1.0) < 1e-6

    def test_non_uniform_marginals(self):
        rng = np.random.default_rng(5)
        w = rng.uniform(0.2, 1.0, size=6)
        mu = DiscreteMeasure(w / w.sum())
        nu = DiscreteMeasure.uniform(4)
        plan = sinkhorn(CostMatrix(rng.uniform(0, 2, (6, 4))), mu, nu, epsilon=30.0,
                        max_iter=5000)
        np.testing.assert_allclose(plan.coupling.sum(axis=1), mu.weights, atol=1e-6)

    def test_objective_non_increasing_in_epsilon(self):
        rng = np.random.default_rng(21)
        cost = CostMatrix(rng.uniform(0.0, 2.0, size=(5, 4)))
        mu, nu = DiscreteMeasure.uniform(5), DiscreteMeasure.uniform(4)
        values = []
        for eps in (2.0, 5.0, 20.0, 100.0, 500.0):
            plan = sinkhorn(cost, mu, nu, eps, tol=1e-9, max_iter=50000)
            values.append(float((plan.coupling * cost.values).sum()))
        diffs = np.diff(values)
        assert (diffs <= 1e-8).all(), values

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        cost = rng.uniform(0.0, 2.0, size=(20, 7))
        mu, nu = DiscreteMeasure.uniform(20), DiscreteMeasure.uniform(7)
        base = sinkhorn(CostMatrix(cost), mu, nu, 30.0, tol=1e-10, max_iter=20000)
        rows = rng.permutation(20)
        permuted = sinkhorn(CostMatrix(cost[rows]), mu, nu, 30.0, tol=1e-10, max_iter=20000)
        np.testing.assert_allclose(permuted.coupling, base.coupling[rows], atol=1e-12)
        cols = rng.permutation(7)
        permuted = sinkhorn(CostMatrix(cost[:, cols]), mu, nu, 30.0, tol=1e-10, max_iter=20000)
        np.testing.assert_allclose(permuted.coupling, base.coupling[:, cols], atol=1e-12)

    def test_log_domain_equals_naive_solver(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            n, m = int(rng.integers(2, 7)), int(rng.integers(2, 6))
            cost = rng.uniform(0.0, 2.0, size=(n, m))
            mu = DiscreteMeasure.uniform(n)
            nu = DiscreteMeasure.uniform(m)
            eps = float(rng.choice([2.0, 5.0, 10.0]))
            plan = sinkhorn(CostMatrix(cost), mu, nu, eps, tol=1e-12, max_iter=20000)
            ref, ref_err = naive_sinkhorn(cost, mu.weights, nu.weights, eps)
            assert ref_err < 1e-10, "oracle itself must be converged"
            np.testing.assert_allclose(plan.coupling, ref, atol=1e-8)

    def test_determinism_bitwise(self, small_instance):
        a = solve(small_instance)
        b = solve(small_instance)
        assert np.array_equal(a.coupling, b.coupling)
        assert a.iterations == b.iterations
        assert a.marginal_error == b.marginal_error

    def test_newton_tail_handles_stiff_instance(self):
        # plain scaling needs ~5e4+ iterations here; the solver must still
        # come back feasible within the default budget
        rng = np.random.default_rng(7)
        for _ in range(21):
            n, m = int(rng.integers(2, 10)), int(rng.integers(2, 10))
            cost = rng.uniform(0, 2, size=(n, m))
        plan = sinkhorn(
            CostMatrix(cost), DiscreteMeasure.uniform(n), DiscreteMeasure.uniform(m),
            epsilon=500.0, max_iter=1000,
        )
        assert plan.marginal_error < 1e-6
        assert plan.iterations <= 1000

    def test_scalings_reconstruct_plan(self, small_instance):
        plan = solve(small_instance)
        u, v = plan.log_scalings
        rebuilt = np.exp(
            -small_instance["epsilon"] * small_instance["cost"] + u[:, None] + v[None, :]
        )
        np.testing.assert_allclose(rebuilt, plan.coupling, rtol=1e-12)


class TestPlanReductions:
    def test_row_costs_trivial(self, small_instance):
        plan = solve(small_instance, tol=1e-12, max_iter=20000)
        zero_cost = CostMatrix(np.zeros((3, 2)))
        np.testing.assert_allclose(plan_row_costs(plan, zero_cost), 0.0)

    def test_row_costs_one_by_one(self):
        plan = sinkhorn(
            CostMatrix(np.array([[0.5]])),
            DiscreteMeasure.uniform(1),
            DiscreteMeasure.uniform(1),
            epsilon=5.0,
        )
        np.testing.assert_allclose(plan_row_costs(plan, CostMatrix(np.array([[0.5]]))), [0.5])

    def test_row_costs_match_oracle(self, small_instance):
        plan = solve(small_instance, tol=1e-12, max_iter=20000)
        got = plan_row_costs(plan, CostMatrix(small_instance["cost"]))
        np.testing.assert_allclose(got, small_instance["row_costs"], atol=1e-8)
        total = (plan.coupling * small_instance["cost"]).sum()
        assert abs(got.sum() - total) < 1e-9

    def test_row_costs_shape_mismatch(self, small_instance):
        plan = solve(small_instance)
        with pytest.raises(ValueError, match="shape"):
            plan_row_costs(plan, CostMatrix(np.zeros((2, 2))))

    def test_row_max(self, small_instance):
        plan = solve(small_instance, tol=1e-12, max_iter=20000)
        np.testing.assert_allclose(plan_row_max(plan), small_instance["row_max"], atol=1e-8)
        one = sinkhorn(
            CostMatrix(np.array([[0.1]])), DiscreteMeasure.uniform(1),
            DiscreteMeasure.uniform(1), epsilon=1.0,
        )
        np.testing.assert_allclose(plan_row_max(one), [1.0], atol=1e-9)

    def test_row_max_picks_largest_entry(self):
        hand_made = TransportPlan(
            coupling=np.array([[0.0, 0.25, 0.0], [0.1, 0.0, 0.65]]),
            epsilon=1.0,
            iterations=0,
            marginal_error=0.0,
            log_scalings=(np.zeros(2), np.zeros(3)),
        )
        np.testing.assert_array_equal(plan_row_max(hand_made), [0.25, 0.65])
