import unittest

import numpy as np
import pytest

from flowtopo import autodiff as ad
from flowtopo.autodiff import Tape
from flowtopo.errors import NonFiniteLossError
from flowtopo.field_model import MlpConfig, ParameterSet
from flowtopo.optimizer import (
    AdamState,
    DynamicWeights,
    GradientStats,
    LossTerms,
    PenaltySchedule,
    TrainConfig,
    adam_step,
    assemble,
    build_flow_objective,
    decay_epochs,
    gradient_stats,
    initial_parameters,
    optimize,
    total_loss,
    update_penalty,
    update_weights,
)
from flowtopo.problems import build_problem

# ── Penalty schedule ─────────────────────────────────────────


def test_penalty_examples():
    schedule = PenaltySchedule()
    assert update_penalty(schedule, 0) == 1.0
    assert update_penalty(schedule, 49) == 1.0
    assert update_penalty(schedule, 50) == 1.05
    assert update_penalty(schedule, 100) == pytest.approx(1.1025)
    assert update_penalty(schedule, 6400) == 500.0


def test_penalty_matches_closed_form():
    schedule = PenaltySchedule()
    for epoch in range(10_001):
        assert update_penalty(schedule, epoch) == min(500.0, 1.05 ** (epoch // 50))


def test_penalty_is_monotone_and_capped():
    schedule = PenaltySchedule()
    values = [update_penalty(schedule, e) for e in range(0, 20_000, 7)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert max(values) == 500.0


def test_penalty_rejects_negative_epoch():
    with pytest.raises(ValueError):
        update_penalty(PenaltySchedule(), -1)


# ── Adam ─────────────────────────────────────────────────────


def test_learning_rate_decays_four_times():
    assert decay_epochs(50_000) == (10_000, 20_000, 30_000, 40_000)
    state = AdamState.create(np.zeros(3), epochs=50_000)
    rates = {state.lr_at(e) for e in range(0, 50_000, 100)}
    assert len(rates) == 5
    assert state.lr_at(49_999) == pytest.approx(1e-3 * 0.75**4)


def test_zero_gradient_leaves_parameters():
    theta = np.array([1.0, -2.0, 3.0])
    state = AdamState.create(theta)
    np.testing.assert_array_equal(adam_step(theta, np.zeros(3), state), theta)


def test_first_step_moves_by_learning_rate():
    theta = np.zeros(2)
    state = AdamState.create(theta)
    updated = adam_step(theta, np.array([0.5, -4.0]), state)
    np.testing.assert_allclose(updated, [-1e-3, 1e-3], rtol=1e-6)


def test_constant_gradient_step_size_tends_to_learning_rate():
    theta = np.zeros(1)
    state = AdamState.create(theta)
    for _ in range(1000):
        previous = theta
        theta = adam_step(theta, np.array([0.5]), state)
    assert previous[0] - theta[0] == pytest.approx(1e-3, rel=1e-6)


def test_decay_shrinks_step():
    state = AdamState.create(np.zeros(1))
    state.decay_at = (3,)
    theta = np.zeros(1)
    steps = []
    for _ in range(4):
        updated = adam_step(theta, np.array([1.0]), state)
        steps.append(theta[0] - updated[0])
        theta = updated
    assert steps[3] / steps[2] == pytest.approx(0.75, rel=1e-6)


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(np.zeros(2), np.zeros(3), AdamState.create(np.zeros(2)))


# ── Dynamic weights ──────────────────────────────────────────


class TestDynamicWeights(unittest.TestCase):
    def setUp(self):
        self.weights = DynamicWeights.initial()

    def test_update_example(self):
        stats = GradientStats(10.0, "R1", {"R1": 10.0, "R2": 3.0, "R3": 2.0, "C1": 10.0}, {})
        updated = update_weights(self.weights, stats)
        self.assertAlmostEqual(updated["R3"], 4.6, places=12)
        self.assertAlmostEqual(updated["C1"], 1.0, places=12)

    def test_reference_terms_stay_at_one(self):
        stats = GradientStats(10.0, "R1", {"R1": 0.1, "R2": 0.1, "R3": 0.1, "C1": 0.1}, {})
        updated = update_weights(self.weights, stats)
        self.assertEqual(updated["R1"], 1.0)
        self.assertEqual(updated["R2"], 1.0)

    def test_zero_gradient_mean_hits_cap(self):
        weights = DynamicWeights({"R1": 1.0, "R2": 1.0, "R3": 3.0, "C1": 1.0})
        stats = GradientStats(1e5, "R1", {"R3": 0.0, "C1": 1e5}, {})
        updated = update_weights(weights, stats)
        self.assertEqual(updated["R3"], 1e12)
        self.assertTrue(np.isfinite(updated["R3"]))

    def test_all_zero_gradients_hold_weights(self):
        weights = DynamicWeights({"R1": 1.0, "R2": 1.0, "R3": 3.0, "C1": 2.0})
        stats = GradientStats(0.0, "R1", {"R3": 0.0, "C1": 0.0}, {})
        updated = update_weights(weights, stats)
        self.assertEqual(updated["R3"], 3.0)
        self.assertEqual(updated["C1"], 2.0)

    def test_weights_stay_positive(self):
        rng = np.random.default_rng(0)
        weights = self.weights
        for _ in range(100):
            means = {name: float(rng.uniform(0.0, 5.0)) for name in ("R1", "R2", "R3", "C1")}
            weights = update_weights(weights, GradientStats(float(rng.uniform(0.0, 5.0)), "R1", means, {}))
            for value in weights.alpha.values():
                self.assertGreater(value, 0.0)

    def test_update_does_not_mutate_input(self):
        stats = GradientStats(10.0, "R1", {"R3": 2.0, "C1": 2.0}, {})
        update_weights(self.weights, stats)
        self.assertEqual(self.weights["R3"], 1.0)


def test_gradient_stats_pick_largest_reference():
    weights = DynamicWeights.initial()
    grads = {"R1": np.array([1.0, -3.0]), "R2": np.array([-5.0, 0.5]), "R3": np.array([2.0, 0.0])}
    stats = gradient_stats(grads, weights)
    assert stats.reference_max == 5.0
    assert stats.reference_term == "R2"
    assert stats.term_means["R3"] == 1.0


# ── Loss assembly ────────────────────────────────────────────


def _terms(tape: Tape, objective: float, values: dict[str, float]) -> LossTerms:
    return LossTerms(tape.constant(objective), {name: tape.constant(v) for name, v in values.items()})


def test_assemble_unit_example():
    tape = Tape()
    terms = _terms(tape, 2.5, {"R1": 1.0, "R2": 1.0, "R3": 1.0, "C1": 1.0})
    total, breakdown = assemble(terms, 1.0, DynamicWeights.initial())
    assert total.item() == 6.5
    assert breakdown.total == 6.5
    assert breakdown.reconstruct() == breakdown.total


def test_doubling_penalty_doubles_penalty_part():
    tape = Tape()
    terms = _terms(tape, 0.75, {"R1": 0.2, "R2": 1.3, "R3": 0.01, "C1": 4.0})
    weights = DynamicWeights({"R1": 1.0, "R2": 1.0, "R3": 7.0, "C1": 0.5})
    total1, _ = assemble(terms, 3.0, weights)
    total2, _ = assemble(terms, 6.0, weights)
    assert total2.item() - 0.75 == pytest.approx(2.0 * (total1.item() - 0.75), rel=1e-14)


def test_breakdown_row_columns():
    tape = Tape()
    terms = _terms(tape, 1.0, {"R1": 2.0, "R2": 3.0, "R3": 4.0, "C1": 5.0})
    weights = DynamicWeights({"R1": 1.0, "R2": 1.0, "R3": 2.0, "C1": 3.0})
    _, breakdown = assemble(terms, 10.0, weights, epoch=7, lr=1e-3)
    row = breakdown.as_row()
    assert list(row)[:2] == ["epoch", "J"]
    assert row["epoch"] == 7
    assert row["scaled_R3"] == 80.0
    assert row["alpha_C1"] == 3.0
    assert "alpha_R1" not in row
    assert row["mu_p"] == 10.0
    assert row["total"] == breakdown.reconstruct()


def test_non_finite_term_raises_with_breakdown():
    tape = Tape()
    terms = _terms(tape, 1.0, {"R1": 1.0, "R2": 1.0, "R3": float("nan"), "C1": 1.0})
    with pytest.raises(NonFiniteLossError) as info:
        assemble(terms, 1.0, DynamicWeights.initial(), epoch=12)
    assert info.value.term == "R3"
    assert info.value.epoch == 12
    assert info.value.breakdown is not None
    assert "R3" in str(info.value)


def test_assemble_needs_terms():
    with pytest.raises(ValueError):
        assemble(LossTerms(None, {}), 1.0, DynamicWeights.initial())


# ── Training engine ──────────────────────────────────────────


class Quadratic:
    """Convex surrogate: J = |theta - c|^2 with scaled quadratic penalties."""

    reference_terms = ("R1",)
    dynamic_terms = ("R3",)

    def __init__(self, size: int = 6, scales=(1.0, 1.0)):
        self.target = np.linspace(-1.0, 1.0, size)
        self.scales = scales

    def __call__(self, theta):
        return LossTerms(
            ad.square(theta - self.target).sum(),
            {
                "R1": ad.square(theta).sum() * self.scales[0],
                "R3": ad.square(theta - 1.0).sum() * self.scales[1],
            },
        )

    def snapshot(self, theta):
        return np.array(theta, copy=True)


def _quiet(**overrides) -> TrainConfig:
    settings = {"epochs": 200, "log_every": 0, "snapshot_epochs": ()}
    settings.update(overrides)
    return TrainConfig(**settings)


def test_zero_epochs_returns_initial_parameters():
    theta0 = np.arange(6.0)
    result = optimize(Quadratic(), theta0, _quiet(epochs=0))
    np.testing.assert_array_equal(result.theta, theta0)
    assert result.history == []
    assert result.completed


def test_loss_decreases_on_convex_surrogate():
    objective = Quadratic()
    config = _quiet(epochs=300, penalty=PenaltySchedule(cap=1.0), update_weights=False)
    result = optimize(objective, np.full(6, 5.0), config)
    totals = [entry.total for entry in result.history]
    assert all(b < a for a, b in zip(totals, totals[1:]))


def test_history_reconstructs_total():
    result = optimize(Quadratic(), np.full(6, 2.0), _quiet(epochs=60))
    assert len(result.history) == 60
    for entry in result.history:
        assert entry.reconstruct() == entry.total


def test_training_is_deterministic():
    rows = [
        [entry.as_row() for entry in optimize(Quadratic(), np.full(6, 2.0), _quiet(epochs=80)).history]
        for _ in range(2)
    ]
    assert rows[0] == rows[1]


def test_snapshots_and_callback():
    seen = []
    result = optimize(
        Quadratic(),
        np.full(6, 2.0),
        _quiet(epochs=10, snapshot_epochs=(1, 5, 10, 11)),
        callback=lambda completed, theta: seen.append(completed),
    )
    assert seen == list(range(1, 11))
    assert sorted(result.snapshots) == [1, 5, 10]
    np.testing.assert_array_equal(result.snapshots[10], result.theta)


def test_dynamic_weights_balance_gradients():
    objective = Quadratic(scales=(1e3, 1e-2))
    result = optimize(objective, np.full(6, 2.0), _quiet(epochs=50))
    stats = result.gradient_stats
    ratio = result.weights["R3"] * stats.term_means["R3"] / stats.reference_max
    assert 0.1 <= ratio <= 10.0


def test_non_finite_loss_aborts_run():
    class Exploding(Quadratic):
        def __call__(self, theta):
            terms = super().__call__(theta)
            if theta.data[0] < 1.999:
                terms.penalized["R3"] = terms.penalized["R3"] * float("inf")
            return terms

    result = optimize(Exploding(), np.full(6, 2.0), _quiet(epochs=20))
    assert not result.completed
    assert "R3" in result.error
    assert len(result.history) >= 1
    assert result.density is not None


GRAD_FLOOR = 1e-8


class TestFlowObjective(unittest.TestCase):
    def setUp(self):
        self.config = TrainConfig(nx=8, ny=8, hidden=(8, 8), bc_samples=9, epochs=3, log_every=0)
        self.objective = build_flow_objective(build_problem("diffuser"), self.config)
        self.theta = ParameterSet.initialize(MlpConfig(hidden=(8, 8)), seed=0).theta

    def test_total_loss_gradient(self):
        weights = DynamicWeights.initial()

        def f(leaf):
            total, _ = total_loss(leaf, self.objective, 1.0, weights)
            return total

        self.assertLessEqual(ad.grad_check(f, self.theta, h=1e-5, floor=GRAD_FLOOR), 1e-4)

    def test_terms_are_named(self):
        terms = self.objective(Tape().parameter(self.theta))
        self.assertEqual(set(terms.penalized), {"R1", "R2", "R3", "C1"})
        self.assertIsNotNone(terms.objective)

    def test_inequality_constraints_add_hinge_terms(self):
        self.objective.inequalities = (lambda fields, grid: fields.rho.mean() - 2.0,)
        terms = self.objective(Tape().parameter(self.theta))
        self.assertEqual(terms.penalized["G1"].item(), 0.0)

    def test_short_training_run(self):
        result = optimize(self.objective, self.theta, self.config)
        self.assertEqual(len(result.history), 3)
        self.assertEqual(result.density.shape, (8, 8))
        self.assertTrue(np.all((result.density > 0.0) & (result.density < 1.0)))

    def test_solution_matches_training_terms(self):
        tape = Tape()
        leaf = tape.parameter(self.theta)
        terms = self.objective(leaf)
        solution = self.objective.solution(self.theta)
        self.assertAlmostEqual(solution.objective / terms.objective.item(), 1.0, places=10)
        self.assertAlmostEqual(solution.residual_norms[0] / terms.penalized["R1"].item(), 1.0, places=10)


def test_flow_weights_track_gradients_below_cap():
    config = TrainConfig(nx=16, ny=16, hidden=(8, 8), bc_samples=9, epochs=5, log_every=0, snapshot_epochs=())
    objective = build_flow_objective(build_problem("diffuser"), config)
    result = optimize(objective, initial_parameters(objective, config), config)
    assert result.completed

    for entry in result.history[1:]:
        for name in ("R3", "C1"):
            assert np.isfinite(entry.alpha[name])
            assert 0.0 < entry.alpha[name] < config.weight_cap, (entry.epoch, name)
    stats = result.gradient_stats
    for name in ("R3", "C1"):
        assert result.weights[name] < config.weight_cap
        ratio = result.weights[name] * stats.term_means[name] / stats.reference_max
        assert 0.1 <= ratio <= 10.0, name
