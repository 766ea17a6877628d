import numpy as np
import pytest

from cdamarket.errors import NoEquilibriumError
from cdamarket.market import MarketConfig, generate_market, make_rng
from cdamarket.engine import run
from cdamarket.netgraph import (EXTRAMARGINAL, INTRAMARGINAL, build_network,
                                classify_marginal, degree_histogram,
                                degree_histogram_by_class, degrees_by_class)
from conftest import make_log, make_market


def log_with_pairs(pairs, n_traders=10):
    rows = [(i, 0, b, s, 60.0, 40.0, 50.0) for i, (b, s) in enumerate(pairs)]
    return make_log(rows, n_traders=n_traders)


class TestBuildNetwork:
    def test_empty_trades_empty_network(self):
        net = build_network(make_log([]))
        assert net.n_nodes == 0 and net.n_edges == 0
        assert len(degree_histogram(net)) == 0

    def test_parallel_trades_deduplicate(self):
        net = build_network(log_with_pairs([(0, 5), (0, 5), (0, 6)]))
        assert net.n_nodes == 3
        assert net.n_edges == 2
        assert sorted(net.multiplicity) == [1, 2]

    def test_star_graph_degrees(self):
        net = build_network(log_with_pairs([(0, 5), (1, 5), (2, 5), (3, 5)]))
        h = degree_histogram(net)
        assert h.value_counts() == {4: 1, 1: 4}
        assert h.total == net.n_nodes

    def test_degree_sum_is_twice_edges(self):
        cfg = MarketConfig(n_traders=60, rounds_per_day=200, n_days=4, seed=3)
        net = build_network(run(cfg))
        assert net.degrees.sum() == 2 * net.n_edges
        assert net.n_nodes <= 60
        assert degree_histogram(net).total == net.n_nodes

    def test_bipartite_by_construction(self):
        cfg = MarketConfig(n_traders=60, rounds_per_day=200, n_days=4, seed=4)
        log = run(cfg)
        net = build_network(log)
        nb = log.market.n_buyers
        for u, v in net.edges:
            assert (u < nb) != (v < nb)

    def test_node_count_bounds(self):
        cfg = MarketConfig(n_traders=60, rounds_per_day=50, n_days=2, seed=5)
        log = run(cfg)
        net = build_network(log)
        assert net.n_nodes <= 2 * len(log.trades)
        assert net.n_nodes <= 60

    def test_degree_of_lookup(self):
        net = build_network(log_with_pairs([(0, 5), (1, 5)]))
        assert net.degree_of(5) == 2
        assert net.degree_of(0) == 1
        assert net.degree_of(9) == 0


class TestClassifyMarginal:
    def test_rule_examples(self):
        market = make_market(4, buyer_limits=[80.0, 20.0], seller_limits=[80.0, 20.0])
        classes = classify_marginal(market)
        assert classes.label(0) == INTRAMARGINAL       # buyer 80 vs p_eq 50
        assert classes.label(1) == EXTRAMARGINAL       # buyer 20
        assert classes.label(2) == EXTRAMARGINAL       # seller 80
        assert classes.label(3) == INTRAMARGINAL       # seller 20

    def test_boundary_is_intramarginal(self):
        market = make_market(4, buyer_limits=[50.0, 50.0], seller_limits=[50.0, 50.0])
        classes = classify_marginal(market)
        assert all(classes.label(i) == INTRAMARGINAL for i in range(4))

    def test_no_equilibrium_rejected(self):
        market = make_market(4)
        market.equilibrium_price = None
        with pytest.raises(NoEquilibriumError):
            classify_marginal(market)

    def test_symmetric_curves_half_intramarginal(self):
        # binomial oracle: intramarginal buyers ~ Binomial(n/2, 1/2)
        for seed in range(5):
            cfg = MarketConfig(n_traders=2000, rounds_per_day=1, n_days=1, seed=seed)
            market = generate_market(cfg, make_rng(cfg.seed))
            classes = classify_marginal(market)
            n_half = 1000
            three_sigma = 3 * np.sqrt(n_half * 0.25)
            intra_buyers = classes.is_intramarginal[:n_half].sum()
            intra_sellers = classes.is_intramarginal[n_half:].sum()
            assert abs(intra_buyers - n_half / 2) <= three_sigma
            assert abs(intra_sellers - n_half / 2) <= three_sigma


class TestDegreesByClass:
    def test_degrees_counted_in_full_graph(self):
        # buyer 0 (intra) trades with both sellers; seller 5 is extra but
        # its degree still counts the edge to the intra buyer
        market = make_market(10, buyer_limits=[90, 80, 70, 60, 55],
                             seller_limits=[80, 10, 20, 30, 40])
        rows = [(0, 0, 0, 5, 90.0, 80.0, 85.0), (1, 0, 0, 6, 60.0, 10.0, 35.0)]
        log = make_log(rows, n_traders=10, market=market)
        net = build_network(log)
        classes = classify_marginal(log.market)
        by = degrees_by_class(net, classes)
        assert list(by[EXTRAMARGINAL]) == [1]       # seller 5 (cost 80)
        assert sorted(by[INTRAMARGINAL]) == [1, 2]  # buyer 0 and seller 6

    def test_empty_class_empty_histogram(self):
        market = make_market(4, buyer_limits=[90.0, 80.0], seller_limits=[10.0, 20.0])
        rows = [(0, 0, 0, 2, 90.0, 10.0, 50.0)]
        log = make_log(rows, n_traders=4, market=market)
        net = build_network(log)
        classes = classify_marginal(log.market)
        h = degree_histogram_by_class(net, classes, EXTRAMARGINAL)
        assert len(h) == 0 and h.total == 0

    def test_class_histograms_partition_nodes(self):
        cfg = MarketConfig(n_traders=100, rounds_per_day=300, n_days=3, seed=6)
        log = run(cfg)
        net = build_network(log)
        classes = classify_marginal(log.market)
        hi = degree_histogram_by_class(net, classes, INTRAMARGINAL)
        he = degree_histogram_by_class(net, classes, EXTRAMARGINAL)
        assert hi.total + he.total == net.n_nodes

    def test_unknown_class_rejected(self):
        net = build_network(log_with_pairs([(0, 5)]))
        classes = classify_marginal(make_market(10))
        with pytest.raises(ValueError):
            degree_histogram_by_class(net, classes, "nonmarginal")
