import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.stats import chi2

from islekit.core import ContractViolationError, RngStream
from islekit.evolution import Population
from islekit.migration import (
    EdgeState,
    MigrationLedger,
    MigrationRecord,
    Topology,
    differential_factor,
    migration_probabilities,
    neighbors,
    perform_migration,
    population_improvement,
    rank_effectiveness,
    rank_share,
    roulette_select,
    update_attractiveness,
    _minmax_normalize,
)
from islekit.surrogate import RbfnModel


def flat_model(value, d=1):
    return RbfnModel(np.zeros((1, d)), 1.0, np.zeros(1), float(value))


def pinpoint_model(points, values, sigma=0.01):
    return RbfnModel(np.atleast_2d(points).astype(float), sigma, np.asarray(values, float), 0.0)


def island_stub(members, model, index=0, nbrs=()):
    return SimpleNamespace(
        index=index,
        neighbors=list(nbrs),
        population=Population(members=np.atleast_2d(members).astype(float)),
        model=model,
        rmse=1.0,
    )


# --- topology ---------------------------------------------------------------


def test_ring_neighbors():
    t = Topology.make("ring", 4)
    assert neighbors(t, 0) == [1, 3]
    assert neighbors(t, 2) == [1, 3]


def test_ring_two_islands_dedup():
    t = Topology.make("ring", 2)
    assert neighbors(t, 0) == [1]


def test_von_neumann_6x6_corner():
    t = Topology.make("von_neumann", 36)
    # island (0,0): up (5,0)=30, down (1,0)=6, left (0,5)=5, right (0,1)=1
    assert neighbors(t, 0) == [1, 5, 6, 30]


def test_von_neumann_3x3_center():
    t = Topology.make("von_neumann", 9)
    assert neighbors(t, 4) == [1, 3, 5, 7]


def test_von_neumann_every_island_has_four_neighbors():
    t = Topology.make("von_neumann", 36)
    for i in range(36):
        assert len(neighbors(t, i)) == 4


def test_von_neumann_requires_square():
    with pytest.raises(ContractViolationError):
        Topology.make("von_neumann", 10)


def test_fully_connected():
    t = Topology.make("fully_connected", 3)
    assert neighbors(t, 1) == [0, 2]


def test_neighbor_relation_symmetric_no_self():
    for kind, T in (("ring", 7), ("von_neumann", 16), ("fully_connected", 5)):
        t = Topology.make(kind, T)
        for i in range(T):
            ns = neighbors(t, i)
            assert i not in ns
            for j in ns:
                assert i in neighbors(t, j)


def test_invalid_island_id():
    t = Topology.make("ring", 4)
    with pytest.raises(ContractViolationError):
        neighbors(t, 4)


# --- effect measurement -----------------------------------------------------


def graded_population(n):
    """Population plus a model scoring member k as k+1 (1-based)."""
    members = np.arange(n, dtype=float).reshape(-1, 1) * 10.0
    model = pinpoint_model(members, np.arange(1, n + 1, dtype=float))
    return Population(members=members), model


def test_rank_effectiveness_three_of_a_hundred():
    pop, _ = graded_population(100)
    # model scores member k as k+1 and the immigrant's spot as 2.5:
    # the immigrant ranks 3rd among 101, so r = 100 - 3 = 97
    immigrant = np.array([15.0])
    centers = np.vstack([pop.members, immigrant])
    values = np.append(np.arange(1, 101, dtype=float), 2.5)
    model = pinpoint_model(centers, values)
    assert rank_effectiveness(pop, immigrant, model) == 97


def test_rank_effectiveness_best():
    pop, model = graded_population(100)
    immigrant = np.array([-50.0])  # predicts ~0, below every resident
    assert rank_effectiveness(pop, immigrant, model) == 99


def test_rank_effectiveness_worst_clamped():
    pop, model = graded_population(100)
    immigrant = pop.members[-1].copy()  # ties the worst resident, ranked after it
    assert rank_effectiveness(pop, immigrant, model) == 0


def test_rank_share_hand_values():
    recs = [
        MigrationRecord(0, 2, np.zeros((2, 1)), [1, 1], [50, 40], 0.0),
        MigrationRecord(1, 2, np.zeros((1, 1)), [1], [10], 0.0),
    ]
    share = rank_share(recs)
    assert share[0] == pytest.approx(0.9)
    assert share[1] == pytest.approx(0.1)


def test_rank_share_single_source():
    recs = [MigrationRecord(3, 0, np.zeros((1, 1)), [5], [7], 0.0)]
    assert rank_share(recs) == {3: 1.0}


def test_rank_share_all_zero_uniform():
    recs = [
        MigrationRecord(0, 2, np.zeros((1, 1)), [9], [0], 0.0),
        MigrationRecord(1, 2, np.zeros((1, 1)), [9], [0], 0.0),
    ]
    share = rank_share(recs)
    assert share == {0: 0.5, 1: 0.5}


def test_rank_share_empty():
    assert rank_share([]) == {}


def test_population_improvement():
    pop = Population(members=np.array([[0.0], [1.0]]))
    model = flat_model(8.0)
    assert population_improvement(10.0, pop, model) == pytest.approx(2.0)
    assert population_improvement(8.0, pop, model) == pytest.approx(0.0)


def test_minmax_normalize():
    raw = {"a": 2.0, "b": 0.0, "c": 4.0}
    norm = _minmax_normalize(raw, ["a", "b", "c"])
    assert norm == {"a": 0.5, "b": 0.0, "c": 1.0}
    assert _minmax_normalize({"a": 3.0, "b": 3.0}, ["a", "b"]) == {"a": 1.0, "b": 1.0}


def test_differential_factor():
    pop = Population(members=np.array([[0.0], [1.0], [2.0]]))
    m = flat_model(2.0)
    assert differential_factor(pop, m, m) == 0.0
    assert differential_factor(pop, flat_model(2.0), flat_model(5.0)) == pytest.approx(3.0)


def test_update_attractiveness_hand_value():
    edge = EdgeState(tau=1.0)
    updated = update_attractiveness(edge, theta_norm=1.0, phi=0.5, rho=0.1)
    assert updated.tau == pytest.approx(1.4)


def test_attractiveness_decays_to_zero():
    edge = EdgeState(tau=1.0)
    for _ in range(400):
        edge = update_attractiveness(edge, 0.0, 0.0, 0.1)
    assert edge.tau < 1e-15


def test_attractiveness_geometric_limit():
    edge = EdgeState(tau=1.0)
    for _ in range(2000):
        edge = update_attractiveness(edge, 1.0, 0.3, 0.1)
    assert edge.tau == pytest.approx(3.0, rel=1e-9)  # c / rho = 0.3 / 0.1


def test_migration_probabilities():
    edges = [EdgeState() for _ in range(4)]
    probs = [e.mp for e in migration_probabilities(edges)]
    assert probs == pytest.approx([0.25] * 4)

    two = [EdgeState(tau=2.0, v=1.0), EdgeState(tau=1.0, v=1.0)]
    probs = [e.mp for e in migration_probabilities(two)]
    assert probs == pytest.approx([2 / 3, 1 / 3])

    zero = [EdgeState(tau=0.0), EdgeState(tau=0.0), EdgeState(tau=0.0)]
    probs = [e.mp for e in migration_probabilities(zero)]
    assert probs == pytest.approx([1 / 3] * 3)


# --- roulette ---------------------------------------------------------------


def test_roulette_degenerate():
    rng = RngStream(0, "r")
    assert all(roulette_select([1.0, 0.0, 0.0], rng) == 0 for _ in range(50))


def test_roulette_rejects_bad_simplex():
    with pytest.raises(ContractViolationError):
        roulette_select([0.5, 0.4], RngStream(0, "r"))
    with pytest.raises(ContractViolationError):
        roulette_select([1.5, -0.5], RngStream(0, "r"))


def chi_square_ok(probs, draws, rng, alpha=0.01):
    counts = np.zeros(len(probs))
    for _ in range(draws):
        counts[roulette_select(probs, rng)] += 1
    expected = np.asarray(probs) * draws
    mask = expected > 0
    stat = np.sum((counts[mask] - expected[mask]) ** 2 / expected[mask])
    return stat <= chi2.ppf(1 - alpha, df=int(mask.sum()) - 1)


def test_roulette_half_half_frequency():
    rng = RngStream(1, "roulette")
    counts = sum(roulette_select([0.5, 0.5], rng) for _ in range(10_000))
    assert abs(counts / 10_000 - 0.5) < 0.02


def test_roulette_chi_square_uniform():
    assert chi_square_ok([0.25] * 4, 10_000, RngStream(2, "roulette"))


def test_roulette_chi_square_random_simplex():
    gen = np.random.default_rng(5)
    probs = gen.dirichlet(np.ones(5))
    assert chi_square_ok(probs, 10_000, RngStream(3, "roulette"))


# --- transfer and ledger ----------------------------------------------------


def two_island_setup(n=10, frac=0.1):
    topo = Topology.make("fully_connected", 2)
    ledger = MigrationLedger(topo, rho=0.1, migrants_fraction=frac)
    rng = np.random.default_rng(0)
    islands = [
        island_stub(rng.uniform(-5, 5, (n, 1)), flat_model(1.0), index=0, nbrs=[1]),
        island_stub(rng.uniform(-5, 5, (n, 1)), flat_model(2.0), index=1, nbrs=[0]),
    ]
    return topo, ledger, islands


def test_perform_migration_two_islands():
    _, ledger, islands = two_island_setup(n=10)
    records = perform_migration(islands, ledger, RngStream(4, "mig"))
    assert {(r.source, r.target) for r in records} == {(0, 1), (1, 0)}
    for r in records:
        assert len(r.migrants) == 1  # ceil(0.1 * 10)
    # copy semantics: sources keep their members, targets grew
    assert islands[0].population.members.shape[0] == 11
    assert islands[1].population.members.shape[0] == 11
    assert ledger.pending is not None


def test_perform_migration_migrant_is_copy_of_source_member():
    _, ledger, islands = two_island_setup(n=6)
    source_before = islands[0].population.members.copy()
    records = perform_migration(islands, ledger, RngStream(5, "mig"))
    rec01 = next(r for r in records if r.source == 0)
    assert any(np.array_equal(rec01.migrants[0], row) for row in source_before)
    assert np.array_equal(islands[0].population.members[:6], source_before)


def test_perform_migration_counts_scale():
    _, ledger, islands = two_island_setup(n=10, frac=0.25)
    records = perform_migration(islands, ledger, RngStream(6, "mig"))
    for r in records:
        assert len(r.migrants) == math.ceil(0.25 * 10)


def test_perform_migration_pre_means_snapshot():
    _, ledger, islands = two_island_setup()
    perform_migration(islands, ledger, RngStream(7, "mig"))
    pre_means, _ = ledger.pending
    # flat models: mean prediction equals the constant
    assert pre_means[0] == pytest.approx(1.0)
    assert pre_means[1] == pytest.approx(2.0)


def test_ledger_round_trip_updates_tau():
    _, ledger, islands = two_island_setup()
    perform_migration(islands, ledger, RngStream(8, "mig"))
    # flat models: thetas are 0 and 0 -> degenerate -> both normalize to 1;
    # effectiveness is 0 (ties rank immigrants last) -> uniform phi = 1 per edge
    ledger.update_routing(islands)
    assert ledger.edges[(0, 1)].tau == pytest.approx(0.9 + 1.0)
    assert ledger.edges[(1, 0)].tau == pytest.approx(0.9 + 1.0)
    assert ledger.pending is None


def test_ledger_mp_simplex_every_round():
    topo = Topology.make("von_neumann", 9)
    ledger = MigrationLedger(topo, rho=0.1)
    rng = np.random.default_rng(1)
    islands = [
        island_stub(rng.uniform(-5, 5, (8, 2)),
                    RbfnModel(rng.uniform(-5, 5, (3, 2)), 1.0, rng.normal(size=3), 0.0),
                    index=i, nbrs=list(range(9)))
        for i in range(9)
    ]
    for i, isl in enumerate(islands):
        isl.neighbors = ledger.out_neighbors[i]
    for epoch in range(4):
        ledger.update_routing(islands)
        for i in range(9):
            assert ledger.probabilities(i).sum() == pytest.approx(1.0, abs=1e-9)
        perform_migration(islands, ledger, RngStream(epoch, "mig"))
        # shrink populations back to 8 as environmental selection would
        for isl in islands:
            isl.population = Population(members=isl.population.members[:8])


def test_ledger_no_attractiveness_keeps_tau_one():
    topo = Topology.make("fully_connected", 2)
    ledger = MigrationLedger(topo, rho=0.1, use_attractiveness=False)
    rng = np.random.default_rng(2)
    islands = [
        island_stub(rng.uniform(-5, 5, (6, 1)), flat_model(i + 1.0), index=i, nbrs=[1 - i])
        for i in range(2)
    ]
    for _ in range(3):
        perform_migration(islands, ledger, RngStream(0, "m"))
        for isl in islands:
            isl.population = Population(members=isl.population.members[:6])
        ledger.update_routing(islands)
    assert all(e.tau == 1.0 for e in ledger.edges.values())


def test_ledger_no_differential_keeps_v_one():
    topo = Topology.make("fully_connected", 2)
    ledger = MigrationLedger(topo, rho=0.1, use_differential=False)
    rng = np.random.default_rng(3)
    islands = [
        island_stub(rng.uniform(-5, 5, (6, 1)), flat_model(i * 3.0), index=i, nbrs=[1 - i])
        for i in range(2)
    ]
    ledger.update_routing(islands)
    assert all(e.v == 1.0 for e in ledger.edges.values())


def test_ledger_both_disabled_uniform_mps():
    topo = Topology.make("von_neumann", 9)
    ledger = MigrationLedger(topo, rho=0.1, use_attractiveness=False, use_differential=False)
    rng = np.random.default_rng(4)
    islands = [
        island_stub(rng.uniform(-5, 5, (8, 1)), flat_model(float(i)), index=i)
        for i in range(9)
    ]
    for i, isl in enumerate(islands):
        isl.neighbors = ledger.out_neighbors[i]
    for epoch in range(3):
        ledger.update_routing(islands)
        for i in range(9):
            assert np.allclose(ledger.probabilities(i), 0.25)
        perform_migration(islands, ledger, RngStream(epoch, "m"))
        for isl in islands:
            isl.population = Population(members=isl.population.members[:8])


def test_initial_mps_uniform():
    ledger = MigrationLedger(Topology.make("von_neumann", 16), rho=0.1)
    for i in range(16):
        assert np.allclose(ledger.probabilities(i), 0.25)
        assert all(e.tau == 1.0 for e in ledger.out_edges(i))


def test_migration_log_rows_filled_after_measurement():
    _, ledger, islands = two_island_setup()
    perform_migration(islands, ledger, RngStream(9, "mig"), epoch=0)
    assert ledger.log_rows == []  # not yet measured
    ledger.update_routing(islands)
    assert len(ledger.log_rows) == 2
    for row in ledger.log_rows:
        assert set(row) == {
            "epoch", "source", "target", "mp", "tau", "v",
            "num_migrants", "rank_sum", "theta_raw",
        }
        assert row["theta_raw"] is not None
