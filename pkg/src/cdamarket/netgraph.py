"""Transaction network: trader nodes, traded-with edges, degree statistics.

The network is a simple undirected graph; an edge exists wherever at
least one trade happened between a pair, so it is bipartite between
buyers and sellers by construction.  Edge multiplicities are recorded but
ignored by the distribution analyses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoEquilibriumError
from .market import MarketInstance, TradeLog
from .stats import Histogram, integer_histogram

INTRAMARGINAL = "intramarginal"
EXTRAMARGINAL = "extramarginal"


@dataclass
class TransactionNetwork:
    """Nodes are trader ids with >= 1 trade; edges unordered trading pairs."""

    nodes: np.ndarray          # sorted trader ids
    edges: np.ndarray          # (E, 2) canonical pairs, lexicographically sorted
    multiplicity: np.ndarray   # trades per edge
    degrees: np.ndarray        # aligned with nodes

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree_of(self, trader_id: int) -> int:
        i = int(np.searchsorted(self.nodes, trader_id))
        if i >= len(self.nodes) or self.nodes[i] != trader_id:
            return 0
        return int(self.degrees[i])

    @property
    def mean_degree(self) -> float:
        if self.n_nodes == 0:
            return 0.0
        return float(self.degrees.mean())


def build_network(log: TradeLog) -> TransactionNetwork:
    """Collapse the trade list into the simple trader graph."""
    b = log.trades.buyer_id.astype(np.int64)
    s = log.trades.seller_id.astype(np.int64)
    return network_from_pairs(b, s)


def network_from_pairs(u, v) -> TransactionNetwork:
    """Network from raw (buyer, seller) id arrays; pooling-friendly."""
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    if u.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return TransactionNetwork(nodes=empty, edges=np.empty((0, 2), dtype=np.int64),
                                  multiplicity=empty, degrees=empty)
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    span = int(hi.max()) + 1
    key = lo * span + hi
    uniq_key, mult = np.unique(key, return_counts=True)
    edges = np.column_stack([uniq_key // span, uniq_key % span])
    nodes, degrees = np.unique(edges.ravel(), return_counts=True)
    return TransactionNetwork(nodes=nodes, edges=edges,
                              multiplicity=mult.astype(np.int64),
                              degrees=degrees.astype(np.int64))


def degree_histogram(net: TransactionNetwork) -> Histogram:
    """Empirical node-degree distribution; counts sum to the node count."""
    return integer_histogram(net.degrees)


@dataclass
class MarginalClass:
    """Per-trader labels: profitable side of the curve intersection or not.

    Buyers are intramarginal when their redemption value is at or above
    the equilibrium price; sellers when their cost is at or below it
    (boundary traders count as intramarginal).
    """

    is_intramarginal: np.ndarray  # indexed by trader id

    def label(self, trader_id: int) -> str:
        return INTRAMARGINAL if self.is_intramarginal[trader_id] else EXTRAMARGINAL

    def ids(self, which: str) -> np.ndarray:
        mask = self.is_intramarginal if which == INTRAMARGINAL else ~self.is_intramarginal
        return np.flatnonzero(mask)


def classify_marginal(market: MarketInstance) -> MarginalClass:
    if market.equilibrium_price is None:
        raise NoEquilibriumError("market carries no equilibrium price")
    p_eq = market.equilibrium_price
    flags = np.concatenate([market.buyer_limits >= p_eq,
                            market.seller_limits <= p_eq])
    return MarginalClass(is_intramarginal=flags)


def degrees_by_class(net: TransactionNetwork, classes: MarginalClass) -> dict[str, np.ndarray]:
    """Node degrees (full-graph degrees) split by marginal class."""
    intra_mask = classes.is_intramarginal[net.nodes]
    return {
        INTRAMARGINAL: net.degrees[intra_mask],
        EXTRAMARGINAL: net.degrees[~intra_mask],
    }


def degree_histogram_by_class(net: TransactionNetwork, classes: MarginalClass,
                              which: str) -> Histogram:
    """Degree histogram restricted to nodes of one class.

    Degrees still count every edge in the full graph, including edges to
    the other class.
    """
    if which not in (INTRAMARGINAL, EXTRAMARGINAL):
        raise ValueError(f"unknown class {which!r}")
    return integer_histogram(degrees_by_class(net, classes)[which])
