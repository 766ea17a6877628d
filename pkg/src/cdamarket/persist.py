"""On-disk formats: run directories, CSV tables, fits JSON.

Every CSV has a header row, '.' decimal separators and LF line endings.
Floats are written with repr (shortest round-trip form), so identical
runs serialize byte-identically.

A run directory holds:
    config.json   full resolved config, seed, generator kind, code version
    trades.csv    step,day,buyer_id,seller_id,bid,ask,price
    shouts.csv    step,day,trader_id,kind,price,accepted
    market.csv    trader_id,side,limit
"""

from __future__ import annotations

import json
import os
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .errors import ConfigurationError
from .market import (MarketConfig, MarketInstance, ShoutTable, TradeLog,
                     TradeTable, equilibrium)
from .stats import Histogram, PowerLawFit

TRADES_HEADER = ("step", "day", "buyer_id", "seller_id", "bid", "ask", "price")
SHOUTS_HEADER = ("step", "day", "trader_id", "kind", "price", "accepted")
MARKET_HEADER = ("trader_id", "side", "limit")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_table(path: str, header: Sequence[str], columns: Sequence) -> None:
    """Column-oriented CSV writer (LF endings, repr-formatted floats)."""
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0]) if cols else 0
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join(_fmt(col[i]) for col in cols))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_table(path: str) -> dict[str, list[str]]:
    with open(path, newline="\n") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    out: dict[str, list[str]] = {h: [] for h in header}
    for line in lines[1:]:
        if not line:
            continue
        for h, v in zip(header, line.split(",")):
            out[h].append(v)
    return out


def write_json(path: str, payload: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_config(config: MarketConfig, path: str) -> None:
    payload = config.to_dict()
    payload["version"] = __version__
    write_json(path, payload)


def load_config(path: str) -> MarketConfig:
    return MarketConfig.from_dict(read_json(path))


def save_log(log: TradeLog, dir_path: str, *, write_shouts: bool = True) -> None:
    """Write the run directory (config, trades, market, optionally shouts)."""
    os.makedirs(dir_path, exist_ok=True)
    save_config(log.config, os.path.join(dir_path, "config.json"))
    t = log.trades
    write_table(os.path.join(dir_path, "trades.csv"), TRADES_HEADER,
                (t.step, t.day, t.buyer_id, t.seller_id, t.bid, t.ask, t.price))
    market = log.market
    sides = ["buyer"] * market.n_buyers + ["seller"] * market.n_sellers
    limits = np.concatenate([market.buyer_limits, market.seller_limits])
    write_table(os.path.join(dir_path, "market.csv"), MARKET_HEADER,
                (np.arange(market.n_traders), np.array(sides), limits))
    if write_shouts:
        s = log.shouts
        kinds = np.where(s.is_bid, "bid", "offer")
        write_table(os.path.join(dir_path, "shouts.csv"), SHOUTS_HEADER,
                    (s.step, s.day, s.trader_id, kinds, s.price, s.accepted))


def load_log(dir_path: str) -> TradeLog:
    """Rebuild a TradeLog from a run directory written by save_log."""
    config = load_config(os.path.join(dir_path, "config.json"))
    mkt = read_table(os.path.join(dir_path, "market.csv"))
    sides = mkt["side"]
    limits = np.array([float(x) for x in mkt["limit"]])
    n_buyers = sides.count("buyer")
    if n_buyers * 2 != len(sides):
        raise ConfigurationError("market.csv is not half buyers, half sellers")
    eq_price, eq_qty = equilibrium(config.demand_curve, config.supply_curve)
    market = MarketInstance(
        n_traders=len(sides),
        demand_curve=config.demand_curve,
        supply_curve=config.supply_curve,
        buyer_limits=limits[:n_buyers],
        seller_limits=limits[n_buyers:],
        equilibrium_price=eq_price,
        equilibrium_quantity=eq_qty,
    )
    tr = read_table(os.path.join(dir_path, "trades.csv"))
    trades = TradeTable(
        [int(x) for x in tr["step"]],
        [int(x) for x in tr["day"]],
        [int(x) for x in tr["buyer_id"]],
        [int(x) for x in tr["seller_id"]],
        [float(x) for x in tr["bid"]],
        [float(x) for x in tr["ask"]],
        [float(x) for x in tr["price"]],
    )
    shouts_path = os.path.join(dir_path, "shouts.csv")
    if os.path.exists(shouts_path):
        sh = read_table(shouts_path)
        shouts = ShoutTable(
            [int(x) for x in sh["step"]],
            [int(x) for x in sh["day"]],
            [int(x) for x in sh["trader_id"]],
            [k == "bid" for k in sh["kind"]],
            [float(x) for x in sh["price"]],
            [v == "true" for v in sh["accepted"]],
        )
    else:
        shouts = ShoutTable.empty()
    return TradeLog(config=config, market=market, shouts=shouts, trades=trades)


def write_histogram(path: str, hist: Histogram) -> None:
    write_table(path, ("bin_lo", "bin_hi", "count", "density"),
                (hist.edges[:-1], hist.edges[1:], hist.counts, hist.densities))


def write_fits(path: str, fits: dict[str, PowerLawFit | dict]) -> None:
    payload = {}
    for name, fit in fits.items():
        payload[name] = fit.to_dict() if isinstance(fit, PowerLawFit) else fit
    write_json(path, payload)


def write_network(path: str, edges: np.ndarray, multiplicity: np.ndarray) -> None:
    write_table(path, ("u", "v", "multiplicity"),
                (edges[:, 0] if len(edges) else np.empty(0, dtype=int),
                 edges[:, 1] if len(edges) else np.empty(0, dtype=int),
                 multiplicity))


def write_degrees(path: str, trader_ids, degrees, labels: Iterable[str]) -> None:
    write_table(path, ("trader_id", "degree", "class"),
                (trader_ids, degrees, np.array(list(labels))))
