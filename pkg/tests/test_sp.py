import numpy as np
import pytest

from oracles import enumerate_qp, sequential_rollout, unconstrained_fhoc_inputs
from scenario_mpc.errors import DimensionError
from scenario_mpc.lti import DisturbanceSequence, LtiModel
from scenario_mpc.policy import AffinePolicy, Structure, build_prediction_matrices, count_decision_variables, predict
from scenario_mpc.qp import QpProblem, solve
from scenario_mpc.scenarios import Scenario, ScenarioSet
from scenario_mpc.sp import LinearConstraintSpec, QuadCost, SpInstance, assemble, evaluate_violation, solve_sp

PLANT = LtiModel([[0.9, 0.15], [0.05, 0.9]], [[0.0], [1.0]])
X0 = np.array([0.6, 0.0])


def benchmark_instance(scenarios, horizon=5, lower=(0.5, 0.0), **kwargs):
    return SpInstance(
        scenarios,
        kwargs.pop("x0", X0),
        QuadCost.stagewise(np.eye(2), [[0.1]], horizon),
        LinearConstraintSpec.state_lower_bounds(np.array(lower), 2, 1, horizon),
        **kwargs,
    )


def perturbed_scenarios(rng, count, horizon=5, model_noise=0.02, eta_bound=0.02):
    a = PLANT.a + model_noise * rng.standard_normal((count, 2, 2))
    b = PLANT.b + model_noise * rng.standard_normal((count, 2, 1))
    eta = rng.uniform(-eta_bound, eta_bound, (count, horizon, 2))
    return ScenarioSet(a, b, eta)


def test_nominal_program_matches_least_squares():
    scenarios = ScenarioSet.known(PLANT, np.zeros((1, 5, 2)))
    sol = solve_sp(benchmark_instance(scenarios, lower=(-10.0, -10.0)))
    expected = unconstrained_fhoc_inputs(PLANT, X0, np.eye(2), np.array([[0.1]]), 5)
    np.testing.assert_allclose(sol.policy.gamma, expected, atol=1e-6)
    assert sol.sigma == 0.0
    x, _ = predict(build_prediction_matrices(PLANT, 5), X0, sol.policy, np.zeros(10))
    assert np.linalg.norm(x[-2:]) < np.linalg.norm(X0)


def test_repeated_scenario_gives_the_same_optimizer():
    rng = np.random.default_rng(0)
    single = perturbed_scenarios(rng, 1)
    repeated = ScenarioSet(*(np.repeat(arr, 6, axis=0) for arr in (single.a, single.b, single.eta)))
    # one scenario leaves most feedback entries free; the tie-break makes the optimizer unique
    one = solve_sp(benchmark_instance(single, regularization=1e-3))
    many = solve_sp(benchmark_instance(repeated, regularization=1e-3))
    np.testing.assert_allclose(many.qp.z, one.qp.z, atol=1e-7)
    assert many.objective == pytest.approx(one.objective, rel=1e-10, abs=1e-10)


def test_hessian_is_psd():
    rng = np.random.default_rng(1)
    for count in (1, 3, 30):
        for structure in Structure:
            p = assemble(benchmark_instance(perturbed_scenarios(rng, count), structure=structure)).problem.p
            evals = np.linalg.eigvalsh(p)
            assert evals[0] >= -1e-10 * max(1.0, evals[-1])


def test_feasible_nominal_has_zero_slack():
    scenarios = ScenarioSet.known(PLANT, np.zeros((4, 5, 2)))
    instance = benchmark_instance(scenarios)
    sol = solve_sp(instance)
    assert abs(sol.sigma) <= 1e-8
    x, u = predict(build_prediction_matrices(PLANT, 5), X0, sol.policy, np.zeros(10))
    assert np.all(instance.constraint.values(x, u) <= 1e-8)


def test_unreachable_bound_is_absorbed_by_slack():
    # x_1[0] = 0.54 + eta_0[0] regardless of the input (B has a zero first row),
    # so x_1[0] >= 0.6 needs sigma = max_i (0.06 - eta_i0[0])
    rng = np.random.default_rng(2)
    etas = rng.uniform(-0.02, 0.02, (12, 1, 2))
    instance = benchmark_instance(ScenarioSet.known(PLANT, etas), horizon=1, lower=(0.6, 0.0))
    sol = solve_sp(instance)
    expected = np.max(0.06 - etas[:, 0, 0])
    assert sol.sigma == pytest.approx(expected, abs=1e-8)
    pm = build_prediction_matrices(PLANT, 1)
    for eta in etas:
        x, u = predict(pm, X0, sol.policy, eta.ravel())
        assert np.all(instance.constraint.values(x, u) <= sol.sigma + 1e-8)


def test_redundant_scenarios_leave_optimizer_unchanged():
    # duplicating every scenario keeps the average cost and adds only dominated rows
    rng = np.random.default_rng(3)
    base = perturbed_scenarios(rng, 40)
    doubled = base.concat(base)
    a = solve_sp(benchmark_instance(base))
    b = solve_sp(benchmark_instance(doubled))
    np.testing.assert_allclose(b.qp.z, a.qp.z, atol=1e-7)


def test_more_constraints_never_lower_the_objective():
    # the constraint set of a superset of scenarios is smaller, so with the cost held fixed
    # (taken from the smallest set) the optimum can only rise
    rng = np.random.default_rng(4)
    for _ in range(5):
        pool = ScenarioSet.known(PLANT, rng.uniform(-0.02, 0.02, (60, 5, 2)))
        sizes = (5, 15, 30, 60)
        cost_qp = assemble(benchmark_instance(pool[: sizes[0]], slack_weight=None)).problem
        values = []
        for size in sizes:  # all of these stay feasible without slack
            cons = assemble(benchmark_instance(pool[:size], slack_weight=None)).problem
            sol = solve(QpProblem(cost_qp.p, cost_qp.q, cons.c, cons.l, cons.u))
            assert sol.optimal
            values.append(sol.objective)
        assert np.all(np.diff(values) >= -1e-8 * max(1.0, abs(values[-1])))


@pytest.mark.parametrize("seed", range(6))
def test_slack_program_is_always_solved(seed):
    rng = np.random.default_rng(10 + seed)
    scenarios = perturbed_scenarios(rng, int(rng.integers(1, 80)), model_noise=0.1, eta_bound=0.2)
    x0 = rng.uniform(-1.0, 1.0, 2)
    instance = benchmark_instance(scenarios, x0=x0, structure=list(Structure)[seed % 2])
    sol = solve_sp(instance)
    assert sol.qp.optimal and sol.sigma >= -1e-8
    # objective is the scenario-average cost plus the slack penalty
    costs = []
    for s in scenarios:
        x, u = predict(build_prediction_matrices(s.model, 5), x0, sol.policy, s.eta.values.ravel())
        costs.append(instance.cost.evaluate(x, u))
    assert sol.objective == pytest.approx(np.mean(costs) + 1e5 * sol.sigma, rel=1e-9, abs=1e-9)


def test_known_and_sampled_assembly_paths_agree_bitwise():
    rng = np.random.default_rng(5)
    etas = rng.uniform(-0.02, 0.02, (25, 5, 2))
    known = ScenarioSet.known(PLANT, etas)
    listed = [Scenario(LtiModel(PLANT.a.copy(), PLANT.b.copy()), DisturbanceSequence(e)) for e in etas]
    qa = assemble(benchmark_instance(known)).problem
    qb = assemble(benchmark_instance(listed)).problem
    for name in ("p", "q", "c", "l", "u"):
        np.testing.assert_array_equal(getattr(qa, name), getattr(qb, name))


@pytest.mark.parametrize(
    "lower, weight, expected_method", [((0.5, 0.0), 1e5, "hard"), ((0.6, 0.0), 1e5, "hard"), ((0.6, 0.0), 1.0, "active_set")]
)
def test_slack_solve_matches_enumeration(lower, weight, expected_method):
    rng = np.random.default_rng(6)
    instance = benchmark_instance(perturbed_scenarios(rng, 2, horizon=2), horizon=2, lower=lower, slack_weight=weight)
    asm = assemble(instance)
    assert asm.problem.n_cons <= 9  # keeps the enumeration small
    ref, _ = enumerate_qp(asm.problem)
    sol = solve_sp(instance)
    assert sol.qp.info["method"] == expected_method
    # the oracle's least-squares solves carry round-off of order weight * eps on
    # the slack, which moves its objective by up to about weight * 1e-11
    assert sol.qp.objective == pytest.approx(ref, rel=1e-9, abs=1e-9 * max(1.0, weight))


def test_subdiagonal_structure():
    rng = np.random.default_rng(7)
    instance = benchmark_instance(perturbed_scenarios(rng, 30), structure="subdiagonal")
    asm = assemble(instance)
    assert asm.variables.size == count_decision_variables(2, 1, 5, "subdiagonal", slack=True)
    policy = solve_sp(instance).policy
    policy.free_values(Structure.SUBDIAGONAL)  # raises if any other entry is nonzero


def test_regularization_only_touches_policy_block():
    scenarios = perturbed_scenarios(np.random.default_rng(8), 5)
    plain = assemble(benchmark_instance(scenarios)).problem.p
    reg = assemble(benchmark_instance(scenarios, regularization=0.5)).problem.p
    expected = np.zeros_like(plain)
    expected[:-1, :-1] = 0.5 * np.eye(plain.shape[0] - 1)
    np.testing.assert_allclose(reg - plain, expected, atol=1e-15)


def test_hard_program_has_no_slack_variable():
    scenarios = ScenarioSet.known(PLANT, np.zeros((3, 5, 2)))
    asm = assemble(benchmark_instance(scenarios, slack_weight=None))
    assert asm.variables.size == 25 and asm.problem.n_cons == 3 * 10
    assert solve_sp(benchmark_instance(scenarios, slack_weight=None)).sigma == 0.0


def test_instance_validation():
    scenarios = ScenarioSet.known(PLANT, np.zeros((2, 5, 2)))
    with pytest.raises(DimensionError):
        benchmark_instance(scenarios, x0=[0.0, 0.0, 0.0])
    with pytest.raises(DimensionError):
        benchmark_instance(scenarios, horizon=4)
    with pytest.raises(ValueError):
        benchmark_instance(scenarios, slack_weight=-1.0)
    with pytest.raises(ValueError):
        benchmark_instance(scenarios, regularization=-1.0)
    with pytest.raises(ValueError):
        QuadCost([[1.0, 2.0], [2.0, 1.0]], [[1.0]])
    with pytest.raises(DimensionError):
        LinearConstraintSpec([[1.0]], [[0.0], [0.0]], [1.0])


def test_stagewise_constraint_matches_lower_bounds():
    a = LinearConstraintSpec.stagewise(-np.eye(2), np.zeros((2, 1)), [-0.5, 0.0], 3)
    b = LinearConstraintSpec.state_lower_bounds([0.5, 0.0], 2, 1, 3)
    np.testing.assert_array_equal(a.state_sel, b.state_sel)
    np.testing.assert_array_equal(a.bound, b.bound)
    stage = b.stage(2, 1)
    np.testing.assert_array_equal(stage.state_sel, -np.eye(2))


class TestEvaluateViolation:
    pm = build_prediction_matrices(PLANT, 5)

    def test_loose_bound_never_violated(self):
        rng = np.random.default_rng(9)
        loose = LinearConstraintSpec.state_lower_bounds([-1e6, -1e6], 2, 1, 5)
        policy = AffinePolicy.from_free(rng.standard_normal(25), 2, 1, 5)
        etas = rng.uniform(-0.02, 0.02, (50, 5, 2))
        assert evaluate_violation(policy, PLANT, X0, loose, etas) == 0.0

    def test_forced_violation(self):
        # u_0 = -1 puts x_1[1] = 0.03 - 1 below zero on every realization
        gamma = np.zeros(5)
        gamma[0] = -1.0
        policy = AffinePolicy(gamma, np.zeros((5, 10)), 2, 1, 5)
        con = LinearConstraintSpec.state_lower_bounds([0.5, 0.0], 2, 1, 5)
        etas = [DisturbanceSequence(np.zeros((5, 2)))] * 3
        assert evaluate_violation(policy, PLANT, X0, con, etas) == 1.0

    def test_matches_sequential_simulation(self):
        rng = np.random.default_rng(10)
        con = LinearConstraintSpec.state_lower_bounds([0.5, 0.0], 2, 1, 5)
        for _ in range(100):
            policy = AffinePolicy.from_free(0.05 * rng.standard_normal(25), 2, 1, 5)
            etas = rng.uniform(-0.05, 0.05, (20, 5, 2))
            hits = 0
            for eta in etas:
                x, u = sequential_rollout(PLANT, X0, policy, eta)
                hits += bool(np.any(con.values(x, u) > 1e-9))
            assert evaluate_violation(policy, PLANT, X0, con, etas) == hits / 20

    def test_errors(self):
        con = LinearConstraintSpec.state_lower_bounds([0.5, 0.0], 2, 1, 5)
        policy = AffinePolicy.zero(2, 1, 5)
        with pytest.raises(ValueError):
            evaluate_violation(policy, PLANT, X0, con, [])
        with pytest.raises(DimensionError):
            evaluate_violation(policy, PLANT, X0, con, np.zeros((3, 4, 2)))
