"""Run coordination tests: board, config, early stop, full runs, schedulers."""

import json
import pickle

import numpy as np
import pytest

from islekit.benchmarks import make_problem
from islekit.core import Bounds, ConfigError, ContractViolationError, InitializationError, RngStream
from islekit.ensemble import weighted_prediction_batch
from islekit.orchestrator import (
    RunConfig,
    SharedBoard,
    early_stop,
    global_elite,
    global_weights,
    run,
)
from islekit.surrogate import train_rbfn, validation_rmse


def small_model(seed=0, n=24, d=3):
    rng = RngStream(seed, "fit")
    X = rng.generator.uniform(-2.0, 2.0, size=(n, d))
    y = np.sum(X**2, axis=1)
    model = train_rbfn(X, y, 5, RngStream(seed, "centers"))
    rmse = validation_rmse(model, X, y)
    return model, rmse


class TestSharedBoard:
    def test_publish_then_get(self):
        board = SharedBoard(3)
        model, rmse = small_model()
        board.publish(1, model, rmse)
        got_model, got_rmse = board.get(1)
        assert got_model is model
        assert got_rmse == rmse

    def test_unpublished_slot_raises(self):
        board = SharedBoard(2)
        with pytest.raises(InitializationError):
            board.get(0)

    def test_snapshot_is_isolated_from_later_publishes(self):
        board = SharedBoard(2)
        m0, r0 = small_model(0)
        m1, r1 = small_model(1)
        board.publish(0, m0, r0)
        snap = board.snapshot()
        board.publish(0, m1, r1)
        assert snap.get(0)[0] is m0
        assert board.get(0)[0] is m1

    def test_all_rmses_and_models_ordering(self):
        board = SharedBoard(3)
        models = []
        for i in range(3):
            m, _ = small_model(i)
            models.append(m)
            board.publish(i, m, float(i) + 0.5)
        assert np.array_equal(board.all_rmses(), [0.5, 1.5, 2.5])
        assert all(a is b for a, b in zip(board.all_models(), models))

    def test_pickle_roundtrip(self):
        board = SharedBoard(2)
        m, r = small_model()
        board.publish(0, m, r)
        clone = pickle.loads(pickle.dumps(board))
        assert clone.get(0)[1] == r
        with pytest.raises(InitializationError):
            clone.get(1)


class TestRunConfig:
    def test_defaults_validate(self):
        RunConfig().validate()

    def test_max_iter_must_divide(self):
        with pytest.raises(ConfigError, match="multiple of t_iter"):
            RunConfig(t_iter=7, max_iter=20).validate()

    def test_von_neumann_needs_square_count(self):
        with pytest.raises(ConfigError, match="square"):
            RunConfig(topology="von_neumann", T=10).validate()

    def test_ring_accepts_any_count(self):
        RunConfig(topology="ring", T=10).validate()

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="num_islands"):
            RunConfig.from_dict({"num_islands": 4})

    def test_from_dict_applies_values(self):
        cfg = RunConfig.from_dict({"T": 9, "seed": 42, "es": None})
        assert cfg.T == 9 and cfg.seed == 42 and cfg.es is None

    @pytest.mark.parametrize(
        "overrides",
        [
            {"T": 0},
            {"n": 1},
            {"rho": 0.0},
            {"rho": 1.0},
            {"l": 101},
            {"migrants_fraction": 0.0},
            {"topology": "star"},
            {"p_cross": 1.5},
            {"budget": 2},
            {"scheduler": "async"},
            {"threads": 0},
            {"es": 0},
        ],
    )
    def test_invalid_values_raise(self, overrides):
        with pytest.raises(ConfigError):
            RunConfig(**overrides).validate()

    def test_mutation_rate_defaults_to_one_over_d(self):
        assert RunConfig().evolution_params().mutation_rate(40) == pytest.approx(1 / 40)
        assert RunConfig(p_mut=0.3).evolution_params().mutation_rate(40) == 0.3


class TestEarlyStop:
    def test_stall_of_exactly_window_fires(self):
        assert early_stop([5, 4, 4, 4, 4], 3) is True

    def test_still_improving_does_not_fire(self):
        assert early_stop([5, 4, 3], 3) is False

    def test_window_longer_than_history_never_fires(self):
        assert early_stop([5, 4], 3) is False

    def test_later_equal_minimum_counts_as_stall(self):
        # min first occurs at index 1; the repeat at the end does not reset it
        assert early_stop([5, 3, 4, 3, 3], 3) is True

    def test_empty_history_rejected(self):
        with pytest.raises(ContractViolationError):
            early_stop([], 3)


class TestGlobalEnsemble:
    def test_weights_match_hand_computation(self):
        board = SharedBoard(3)
        for i, rmse in enumerate([1.0, 2.0, 3.0]):
            m, _ = small_model(i)
            board.publish(i, m, rmse)
        w = global_weights(board)
        # (S - r_k) / ((m-1) S) with S = 6
        assert np.allclose(w, [5 / 12, 4 / 12, 3 / 12])
        assert w.sum() == pytest.approx(1.0)

    def test_elite_is_argmin_under_weighted_surrogate(self):
        board = SharedBoard(2)
        models = []
        for i in range(2):
            m, r = small_model(i)
            models.append(m)
            board.publish(i, m, r)
        elites = [np.array([1.5, 0.0, 0.0]), np.array([0.1, 0.1, 0.0])]
        cand, score = global_elite(elites, board)
        w = global_weights(board)
        scores = weighted_prediction_batch(models, w, np.array(elites))
        assert np.array_equal(cand, elites[int(np.argmin(scores))])
        assert score == pytest.approx(float(scores.min()))


def tiny_config(**overrides):
    base = dict(
        T=4,
        n=16,
        t_iter=6,
        max_iter=30,
        es=None,
        budget=48,
        topology="ring",
        seed=17,
    )
    base.update(overrides)
    return RunConfig(**base)


class TestRun:
    def test_epoch_count_without_early_stop(self):
        res = run(tiny_config(), make_problem("sphere", 6, seed=17))
        assert res.epochs == 30 // 6
        assert res.stopped_early is False
        assert len(res.per_epoch) == res.epochs
        assert len(res.elite_history) == res.epochs

    def test_real_evaluation_accounting(self):
        problem = make_problem("sphere", 6, seed=17)
        run(tiny_config(), problem)
        # offline dataset plus exactly one closing assessment
        assert problem.fe_counter == 48 + 1

    def test_used_problem_rejected(self):
        problem = make_problem("sphere", 6, seed=17)
        problem.evaluate(np.zeros(6))
        with pytest.raises(ConfigError, match="fresh"):
            run(tiny_config(), problem)

    def test_best_estimate_is_history_minimum(self):
        res = run(tiny_config(), make_problem("rastrigin", 6, seed=17))
        assert res.best_estimated_fitness == pytest.approx(min(res.elite_history))

    def test_early_stop_truncates_run(self):
        res = run(
            tiny_config(es=2, max_iter=120, t_iter=6, seed=5),
            make_problem("sphere", 6, seed=5),
        )
        assert res.stopped_early is True
        assert res.epochs < 120 // 6
        # the stall is visible in the history the run reports
        assert early_stop(res.elite_history, 2)

    def test_single_island_runs(self):
        res = run(tiny_config(T=1), make_problem("ackley", 6, seed=17))
        assert res.epochs == 5
        assert np.isfinite(res.final_real_fitness)

    def test_serial_determinism_byte_identical(self):
        a = run(tiny_config(), make_problem("rastrigin", 6, seed=17))
        b = run(tiny_config(), make_problem("rastrigin", 6, seed=17))
        assert json.dumps(a.to_json(include_timing=False)) == json.dumps(
            b.to_json(include_timing=False)
        )

    def test_snapshot_mode_differs_only_in_visibility(self):
        live = run(tiny_config(), make_problem("rastrigin", 6, seed=17))
        snap = run(tiny_config(snapshot=True), make_problem("rastrigin", 6, seed=17))
        # both are valid runs over the same dataset; headline fields are finite
        assert np.isfinite(live.best_estimated_fitness)
        assert np.isfinite(snap.best_estimated_fitness)

    def test_parallel_matches_serial_snapshot(self):
        serial = run(
            tiny_config(snapshot=True), make_problem("rastrigin", 6, seed=17)
        )
        parallel = run(
            tiny_config(scheduler="parallel", threads=2),
            make_problem("rastrigin", 6, seed=17),
        )
        assert parallel.elite_history == serial.elite_history
        assert parallel.best_estimated_fitness == serial.best_estimated_fitness
        assert parallel.final_real_fitness == serial.final_real_fitness

    def test_json_shape(self):
        res = run(tiny_config(), make_problem("sphere", 6, seed=17))
        payload = res.to_json(include_timing=False)
        assert sorted(payload.keys()) == [
            "best_estimated_fitness",
            "config_echo",
            "epochs",
            "final_real_fitness",
            "per_epoch",
            "stopped_early",
        ]
        row = payload["per_epoch"][0]
        assert sorted(row.keys()) == [
            "global_fitness",
            "per_island_elite_fitness",
            "wall_ms",
        ]
        assert len(row["per_island_elite_fitness"]) == 4
        assert row["wall_ms"] == 0.0
        assert payload["config_echo"]["seed"] == 17

    def test_trace_rows_cover_every_island_iteration(self):
        res = run(tiny_config(trace=True), make_problem("sphere", 6, seed=17))
        assert len(res.trace_rows) == 4 * 30
        islands = {row[0] for row in res.trace_rows}
        iters = {row[1] for row in res.trace_rows}
        assert islands == {0, 1, 2, 3}
        assert iters == set(range(30))

    def test_migration_rows_cover_all_but_last_epoch(self):
        res = run(tiny_config(), make_problem("sphere", 6, seed=17))
        epochs_logged = {row["epoch"] for row in res.migration_rows}
        assert epochs_logged == set(range(res.epochs - 1))

    def test_disabling_migration_empties_ledger(self):
        res = run(tiny_config(migration=False), make_problem("sphere", 6, seed=17))
        assert res.migration_rows == []


class TestRunInvariants:
    def test_observer_sees_consistent_state_every_epoch(self):
        seen = []

        def observer(state):
            islands = state["islands"]
            ledger = state["ledger"]
            # population size is conserved
            assert all(len(isl.population.members) == 16 for isl in islands)
            # island training data keeps its identity across epochs
            assert all(
                isl.train_X.shape[0] == len(isl.train_y) for isl in islands
            )
            # outgoing routing probabilities stay on the simplex
            for i in range(len(islands)):
                probs = ledger.probabilities(i)
                assert probs.sum() == pytest.approx(1.0, abs=1e-9)
                assert np.all(probs >= 0)
            seen.append(state["epoch"])

        res = run(tiny_config(), make_problem("rastrigin", 6, seed=17), observer=observer)
        assert seen == list(range(res.epochs))

    def test_island_training_rows_unchanged_by_run(self):
        captured = {}

        def observer(state):
            if state["epoch"] == 0:
                captured["train"] = [isl.train_X.copy() for isl in state["islands"]]
                captured["val"] = [isl.val_X.copy() for isl in state["islands"]]
            captured["last"] = state["islands"]

        run(tiny_config(), make_problem("sphere", 6, seed=17), observer=observer)
        for isl, t0, v0 in zip(captured["last"], captured["train"], captured["val"]):
            assert np.array_equal(isl.train_X, t0)
            assert np.array_equal(isl.val_X, v0)

    def test_homogeneous_data_mode_shares_training_rows(self):
        def observer(state):
            islands = state["islands"]
            first = islands[0]
            for isl in islands[1:]:
                assert np.array_equal(isl.train_X, first.train_X)
                assert np.array_equal(isl.val_X, first.val_X)

        run(
            tiny_config(diverse_data=False),
            make_problem("sphere", 6, seed=17),
            observer=observer,
        )

    def test_diverse_data_mode_gives_islands_distinct_rows(self):
        def observer(state):
            if state["epoch"] > 0:
                return
            islands = state["islands"]
            assert not np.array_equal(islands[0].train_X, islands[1].train_X)

        run(tiny_config(), make_problem("sphere", 6, seed=17), observer=observer)

    def test_flat_attractiveness_keeps_tau_at_one(self):
        def observer(state):
            for edge in state["ledger"].edges.values():
                assert edge.tau == 1.0

        run(
            tiny_config(attractiveness=False),
            make_problem("sphere", 6, seed=17),
            observer=observer,
        )

    def test_flat_differential_keeps_v_at_one(self):
        def observer(state):
            for edge in state["ledger"].edges.values():
                assert edge.v == 1.0

        run(
            tiny_config(differential=False),
            make_problem("sphere", 6, seed=17),
            observer=observer,
        )
