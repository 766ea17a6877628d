"""Market structure: configuration, trader population, matching rule.

A market instance assigns private limit prices to a fixed population of
buyers and sellers by sampling points on experimenter-chosen linear supply
and demand curves.  Curves are parameterized over a unit quantity domain
[0, 1] as a pair ``(price_at_q0, price_at_q1)``; a trader's limit is the
curve value at a quantity drawn uniformly on [0, 1].
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigurationError, NoEquilibriumError

MODELS = ("ZI", "ZIP", "GD")
PRICE_RULES = ("midpoint", "buyer_price", "seller_price", "uniform_random")
RNG_KIND = "pcg64"

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One output of the SplitMix64 mixing function."""
    x &= _MASK64
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def replica_seed(base_seed: int, index: int) -> int:
    """Derived seed for replica ``index``: splitmix64(base + (index+1)*golden).

    This is the documented mixing function used by ``run_replicas`` and the
    experiment runner; replicas are statistically independent streams even
    for adjacent indices.
    """
    return splitmix64((base_seed + (index + 1) * _GOLDEN) & _MASK64)


def make_rng(seed: int) -> np.random.Generator:
    """The package-wide generator (PCG64).  All run randomness flows from it."""
    return np.random.Generator(np.random.PCG64(seed))


def curve_value(curve: tuple[float, float], q) :
    """Price on a line segment at quantity ``q`` in [0, 1]."""
    p0, p1 = curve
    return p0 + (p1 - p0) * q


@dataclass(frozen=True)
class ZipParams:
    """Adaptive-margin strategy parameters.

    Per-agent learning rates (beta) and momentum coefficients (gamma) are
    drawn once, uniformly from their ranges, when the population is built.
    Target prices are perturbed multiplicatively by R and additively by A;
    ``abs_perturb`` defaults to 5% of the price span and is resolved to an
    absolute interval at configuration time.  Initial profit margins are
    drawn from ``initial_margin_range`` (negated for buyers).
    """

    beta_range: tuple[float, float] = (0.1, 0.5)
    gamma_range: tuple[float, float] = (0.0, 0.1)
    rel_perturb_up: tuple[float, float] = (1.0, 1.05)
    rel_perturb_down: tuple[float, float] = (0.95, 1.0)
    abs_perturb: Optional[tuple[float, float]] = None
    initial_margin_range: tuple[float, float] = (0.05, 0.35)

    def validate(self) -> None:
        lo, hi = self.beta_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigurationError(f"beta_range must lie in (0, 1]: {self.beta_range}")
        lo, hi = self.gamma_range
        if not (0.0 <= lo <= hi < 1.0):
            raise ConfigurationError(f"gamma_range must lie in [0, 1): {self.gamma_range}")
        for name in ("rel_perturb_up", "rel_perturb_down", "initial_margin_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ConfigurationError(f"{name} interval is inverted: {(lo, hi)}")
        if self.abs_perturb is not None:
            lo, hi = self.abs_perturb
            if not (0.0 <= lo <= hi):
                raise ConfigurationError(f"abs_perturb interval is invalid: {self.abs_perturb}")

    def to_dict(self) -> dict:
        return {
            "beta_range": list(self.beta_range),
            "gamma_range": list(self.gamma_range),
            "rel_perturb_up": list(self.rel_perturb_up),
            "rel_perturb_down": list(self.rel_perturb_down),
            "abs_perturb": None if self.abs_perturb is None else list(self.abs_perturb),
            "initial_margin_range": list(self.initial_margin_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ZipParams":
        kwargs = {k: tuple(v) if v is not None else None for k, v in d.items()}
        return cls(**kwargs)


@dataclass(frozen=True)
class GdParams:
    """Belief-based strategy parameters: size of the shared shout memory."""

    memory_len: int = 2000

    def validate(self) -> None:
        if self.memory_len < 1:
            raise ConfigurationError(f"memory_len must be >= 1: {self.memory_len}")

    def to_dict(self) -> dict:
        return {"memory_len": self.memory_len}

    @classmethod
    def from_dict(cls, d: dict) -> "GdParams":
        return cls(memory_len=int(d["memory_len"]))


@dataclass(frozen=True)
class MarketConfig:
    """Full description of one simulated market run.

    A config plus its seed determines the run bit-for-bit: the generator
    kind is fixed (PCG64) and every random draw, including strategy
    perturbations, comes from the single seeded stream.
    """

    n_traders: int
    rounds_per_day: int
    n_days: int
    seed: int
    price_min: float = 0.0
    price_max: float = 100.0
    model: str = "ZI"
    model_params: object = None
    trade_price_rule: str = "midpoint"
    gd_forced_trade: bool = False
    demand_curve: Optional[tuple[float, float]] = None
    supply_curve: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.n_traders < 2 or self.n_traders % 2 != 0:
            raise ConfigurationError(f"n_traders must be even and >= 2: {self.n_traders}")
        if self.rounds_per_day < 1:
            raise ConfigurationError(f"rounds_per_day must be >= 1: {self.rounds_per_day}")
        if self.n_days < 1:
            raise ConfigurationError(f"n_days must be >= 1: {self.n_days}")
        if not (self.price_min < self.price_max):
            raise ConfigurationError(
                f"price_min must be below price_max: {self.price_min} >= {self.price_max}")
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.trade_price_rule not in PRICE_RULES:
            raise ConfigurationError(
                f"unknown trade_price_rule {self.trade_price_rule!r}; expected one of {PRICE_RULES}")
        if not (0 <= self.seed <= _MASK64):
            raise ConfigurationError(f"seed must be a 64-bit unsigned integer: {self.seed}")

        # Default curves reproduce the standard setup: demand falling across
        # the full price span, supply rising across it.
        if self.demand_curve is None:
            object.__setattr__(self, "demand_curve", (self.price_max, self.price_min))
        else:
            object.__setattr__(self, "demand_curve", (float(self.demand_curve[0]), float(self.demand_curve[1])))
        if self.supply_curve is None:
            object.__setattr__(self, "supply_curve", (self.price_min, self.price_max))
        else:
            object.__setattr__(self, "supply_curve", (float(self.supply_curve[0]), float(self.supply_curve[1])))

        d0, d1 = self.demand_curve
        s0, s1 = self.supply_curve
        if d0 < d1:
            raise ConfigurationError(f"demand curve must be non-increasing: {self.demand_curve}")
        if s0 > s1:
            raise ConfigurationError(f"supply curve must be non-decreasing: {self.supply_curve}")
        for p in (d0, d1, s0, s1):
            if not (self.price_min <= p <= self.price_max):
                raise ConfigurationError(
                    f"curve price {p} outside [{self.price_min}, {self.price_max}]")

        # Resolve strategy parameters so every default is explicit.
        params = self.model_params
        if self.model == "ZI":
            if params not in (None, {}):
                raise ConfigurationError("ZI takes no model_params")
            object.__setattr__(self, "model_params", None)
        elif self.model == "ZIP":
            if params is None:
                params = ZipParams()
            if not isinstance(params, ZipParams):
                raise ConfigurationError(f"model ZIP needs ZipParams, got {type(params).__name__}")
            params.validate()
            if params.abs_perturb is None:
                span = self.price_max - self.price_min
                params = replace(params, abs_perturb=(0.0, 0.05 * span))
            object.__setattr__(self, "model_params", params)
        elif self.model == "GD":
            if params is None:
                params = GdParams()
            if not isinstance(params, GdParams):
                raise ConfigurationError(f"model GD needs GdParams, got {type(params).__name__}")
            params.validate()
            object.__setattr__(self, "model_params", params)
        if self.gd_forced_trade and self.model != "GD":
            raise ConfigurationError("gd_forced_trade applies only to the GD model")

    @property
    def n_buyers(self) -> int:
        return self.n_traders // 2

    @property
    def n_sellers(self) -> int:
        return self.n_traders // 2

    @property
    def total_steps(self) -> int:
        return self.rounds_per_day * self.n_days

    def to_dict(self) -> dict:
        if self.model == "ZIP":
            params = {"zip": self.model_params.to_dict()}
        elif self.model == "GD":
            params = {"gd": self.model_params.to_dict()}
        else:
            params = {}
        return {
            "n_traders": self.n_traders,
            "rounds_per_day": self.rounds_per_day,
            "n_days": self.n_days,
            "seed": self.seed,
            "price_min": self.price_min,
            "price_max": self.price_max,
            "model": self.model,
            "model_params": params,
            "trade_price_rule": self.trade_price_rule,
            "gd_forced_trade": self.gd_forced_trade,
            "demand_curve": list(self.demand_curve),
            "supply_curve": list(self.supply_curve),
            "rng": RNG_KIND,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarketConfig":
        rng_kind = d.get("rng", RNG_KIND)
        if rng_kind != RNG_KIND:
            raise ConfigurationError(f"unsupported rng kind {rng_kind!r}")
        params_block = d.get("model_params") or {}
        model = d["model"]
        if model == "ZIP" and "zip" in params_block:
            params = ZipParams.from_dict(params_block["zip"])
        elif model == "GD" and "gd" in params_block:
            params = GdParams.from_dict(params_block["gd"])
        else:
            params = None
        return cls(
            n_traders=int(d["n_traders"]),
            rounds_per_day=int(d["rounds_per_day"]),
            n_days=int(d["n_days"]),
            seed=int(d["seed"]),
            price_min=float(d.get("price_min", 0.0)),
            price_max=float(d.get("price_max", 100.0)),
            model=model,
            model_params=params,
            trade_price_rule=d.get("trade_price_rule", "midpoint"),
            gd_forced_trade=bool(d.get("gd_forced_trade", False)),
            demand_curve=tuple(d["demand_curve"]) if d.get("demand_curve") else None,
            supply_curve=tuple(d["supply_curve"]) if d.get("supply_curve") else None,
        )

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form; identifies a run family."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Trader:
    """One market participant with a fixed side and private limit price."""

    id: int
    side: str  # "buyer" or "seller"
    limit: float
    traded_today: bool = False
    strategy_state: object = None


@dataclass(frozen=True)
class ShoutEvent:
    """One quote: a bid or an offer, and whether its step transacted."""

    step: int
    day: int
    trader_id: int
    kind: str  # "bid" or "offer"
    price: float
    accepted: bool


@dataclass(frozen=True)
class Trade:
    """One executed transaction between a buyer and a seller."""

    step: int
    day: int
    buyer_id: int
    seller_id: int
    bid: float
    ask: float
    price: float


class ShoutTable:
    """Columnar, immutable record of shout events (memory-friendly at scale)."""

    def __init__(self, step, day, trader_id, is_bid, price, accepted):
        self.step = np.asarray(step, dtype=np.int64)
        self.day = np.asarray(day, dtype=np.int32)
        self.trader_id = np.asarray(trader_id, dtype=np.int32)
        self.is_bid = np.asarray(is_bid, dtype=bool)
        self.price = np.asarray(price, dtype=np.float64)
        self.accepted = np.asarray(accepted, dtype=bool)

    @classmethod
    def empty(cls) -> "ShoutTable":
        return cls([], [], [], [], [], [])

    def __len__(self) -> int:
        return len(self.step)

    def row(self, i: int) -> ShoutEvent:
        return ShoutEvent(
            step=int(self.step[i]),
            day=int(self.day[i]),
            trader_id=int(self.trader_id[i]),
            kind="bid" if self.is_bid[i] else "offer",
            price=float(self.price[i]),
            accepted=bool(self.accepted[i]),
        )

    def __iter__(self) -> Iterator[ShoutEvent]:
        return (self.row(i) for i in range(len(self)))


class TradeTable:
    """Columnar, immutable record of executed trades."""

    def __init__(self, step, day, buyer_id, seller_id, bid, ask, price):
        self.step = np.asarray(step, dtype=np.int64)
        self.day = np.asarray(day, dtype=np.int32)
        self.buyer_id = np.asarray(buyer_id, dtype=np.int32)
        self.seller_id = np.asarray(seller_id, dtype=np.int32)
        self.bid = np.asarray(bid, dtype=np.float64)
        self.ask = np.asarray(ask, dtype=np.float64)
        self.price = np.asarray(price, dtype=np.float64)

    @classmethod
    def empty(cls) -> "TradeTable":
        return cls([], [], [], [], [], [], [])

    def __len__(self) -> int:
        return len(self.step)

    def row(self, i: int) -> Trade:
        return Trade(
            step=int(self.step[i]),
            day=int(self.day[i]),
            buyer_id=int(self.buyer_id[i]),
            seller_id=int(self.seller_id[i]),
            bid=float(self.bid[i]),
            ask=float(self.ask[i]),
            price=float(self.price[i]),
        )

    def __iter__(self) -> Iterator[Trade]:
        return (self.row(i) for i in range(len(self)))


@dataclass
class MarketInstance:
    """Trader population plus the fixed curves it was sampled from.

    Trader ids 0 .. n/2-1 are buyers, n/2 .. n-1 sellers.
    """

    n_traders: int
    demand_curve: tuple[float, float]
    supply_curve: tuple[float, float]
    buyer_limits: np.ndarray
    seller_limits: np.ndarray
    equilibrium_price: float
    equilibrium_quantity: float

    @property
    def n_buyers(self) -> int:
        return len(self.buyer_limits)

    @property
    def n_sellers(self) -> int:
        return len(self.seller_limits)

    def side_of(self, trader_id: int) -> str:
        return "buyer" if trader_id < self.n_buyers else "seller"

    def limit_of(self, trader_id: int) -> float:
        if trader_id < self.n_buyers:
            return float(self.buyer_limits[trader_id])
        return float(self.seller_limits[trader_id - self.n_buyers])

    def traders(self) -> list[Trader]:
        out = [Trader(id=i, side="buyer", limit=float(v)) for i, v in enumerate(self.buyer_limits)]
        nb = self.n_buyers
        out += [Trader(id=nb + i, side="seller", limit=float(v)) for i, v in enumerate(self.seller_limits)]
        return out


@dataclass
class TradeLog:
    """Ordered record of one full simulation run."""

    config: MarketConfig
    market: MarketInstance
    shouts: ShoutTable
    trades: TradeTable


def equilibrium(demand_curve: tuple[float, float],
                supply_curve: tuple[float, float]) -> tuple[float, float]:
    """Intersection (price, quantity) of the two line segments on [0, 1].

    Raises NoEquilibriumError when the lines are parallel (including
    identical) or cross outside the quantity domain.
    """
    d0, d1 = float(demand_curve[0]), float(demand_curve[1])
    s0, s1 = float(supply_curve[0]), float(supply_curve[1])
    if d0 < d1:
        raise ConfigurationError(f"demand curve must be non-increasing: {demand_curve}")
    if s0 > s1:
        raise ConfigurationError(f"supply curve must be non-decreasing: {supply_curve}")
    denom = (s1 - s0) - (d1 - d0)
    if denom == 0.0:
        raise NoEquilibriumError(
            f"curves are parallel and do not cross uniquely: demand={demand_curve} supply={supply_curve}")
    q = (d0 - s0) / denom
    if not (0.0 <= q <= 1.0):
        raise NoEquilibriumError(
            f"curves cross at quantity {q:.4f}, outside the unit domain")
    price = curve_value((d0, d1), q)
    return float(price), float(q)


def generate_market(config: MarketConfig, rng: np.random.Generator) -> MarketInstance:
    """Sample a trader population from the configured curves.

    Buyers' redemption values are the demand line evaluated at i.i.d.
    uniform quantities (hence uniform on the line's price range); sellers'
    costs come from the supply line the same way.  Buyer quantities are
    drawn before seller quantities.
    """
    eq_price, eq_qty = equilibrium(config.demand_curve, config.supply_curve)
    nb = config.n_buyers
    ns = config.n_sellers
    buyer_limits = curve_value(config.demand_curve, rng.random(nb))
    seller_limits = curve_value(config.supply_curve, rng.random(ns))
    return MarketInstance(
        n_traders=config.n_traders,
        demand_curve=config.demand_curve,
        supply_curve=config.supply_curve,
        buyer_limits=np.asarray(buyer_limits, dtype=np.float64),
        seller_limits=np.asarray(seller_limits, dtype=np.float64),
        equilibrium_price=eq_price,
        equilibrium_quantity=eq_qty,
    )


def match_step(bid: float, ask: float, rule: str = "midpoint",
               rng: Optional[np.random.Generator] = None) -> Optional[float]:
    """Price of the trade if the quotes cross (bid >= ask), else None.

    Equal quotes transact: crossing is read as a weak inequality so the
    boundary case is fixed even though it has measure zero under
    continuous quote draws.
    """
    if bid < ask:
        return None
    if rule == "midpoint":
        return 0.5 * (bid + ask)
    if rule == "buyer_price":
        return float(bid)
    if rule == "seller_price":
        return float(ask)
    if rule == "uniform_random":
        if rng is None:
            raise ConfigurationError("uniform_random price rule needs an rng")
        return float(ask + rng.random() * (bid - ask))
    raise ConfigurationError(f"unknown trade_price_rule {rule!r}")
