"""Shared helpers for building small synthetic logs and markets."""

import numpy as np
import pytest

from cdamarket.market import (MarketConfig, MarketInstance, ShoutTable,
                              TradeLog, TradeTable, equilibrium)


def make_market(n_traders=10, demand=(100.0, 0.0), supply=(0.0, 100.0),
                buyer_limits=None, seller_limits=None):
    nb = n_traders // 2
    if buyer_limits is None:
        buyer_limits = np.linspace(90.0, 10.0, nb)
    if seller_limits is None:
        seller_limits = np.linspace(10.0, 90.0, n_traders - nb)
    price, qty = equilibrium(demand, supply)
    return MarketInstance(
        n_traders=n_traders,
        demand_curve=demand,
        supply_curve=supply,
        buyer_limits=np.asarray(buyer_limits, dtype=float),
        seller_limits=np.asarray(seller_limits, dtype=float),
        equilibrium_price=price,
        equilibrium_quantity=qty,
    )


def make_log(trade_rows, n_traders=10, rounds_per_day=1000, n_days=1,
             market=None, shout_rows=None, model="ZI"):
    """trade_rows: (step, day, buyer_id, seller_id, bid, ask, price) tuples."""
    config = MarketConfig(n_traders=n_traders, rounds_per_day=rounds_per_day,
                          n_days=n_days, seed=0, model=model)
    if market is None:
        market = make_market(n_traders)
    cols = list(zip(*trade_rows)) if trade_rows else [[]] * 7
    trades = TradeTable(*cols)
    if shout_rows:
        scols = list(zip(*shout_rows))
        shouts = ShoutTable(*scols)
    else:
        shouts = ShoutTable.empty()
    return TradeLog(config=config, market=market, shouts=shouts, trades=trades)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
