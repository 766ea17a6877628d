"""Quoting strategies: constrained-random, adaptive-margin, belief-based.

This module holds the per-trader reference semantics.  The run loop in
``engine`` applies the same rules over whole populations with vectorized
state; tests cross-check the two against each other.

All three strategies respect the budget constraint after clamping: a
buyer never quotes above its redemption value, a seller never below its
cost.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .market import GdParams, ShoutEvent, Trader, ZipParams


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


# ---------------------------------------------------------------------------
# ZI: uniform quotes on the legal interval
# ---------------------------------------------------------------------------

def zi_quote(trader: Trader, rng: np.random.Generator,
             price_min: float = 0.0, price_max: float = 100.0) -> float:
    """Uniform draw on [price_min, limit] for buyers, [limit, price_max] for sellers."""
    if trader.side == "buyer":
        return float(price_min + rng.random() * (trader.limit - price_min))
    return float(trader.limit + rng.random() * (price_max - trader.limit))


# ---------------------------------------------------------------------------
# ZIP: profit margin adapted from the public shout stream
# ---------------------------------------------------------------------------

@dataclass
class ZipState:
    """Mutable per-agent margin state.

    Sellers keep margin >= 0 (shout = limit*(1+margin) >= limit); buyers
    keep margin in [-1, 0].  beta and gamma are drawn once at init.
    """

    margin: float
    beta: float
    gamma: float
    momentum_term: float = 0.0


def init_zip_state(trader: Trader, rng: np.random.Generator,
                   params: ZipParams = ZipParams()) -> ZipState:
    """Fresh state with margin/beta/gamma drawn from the parameter ranges."""
    m_lo, m_hi = params.initial_margin_range
    margin = m_lo + rng.random() * (m_hi - m_lo)
    if trader.side == "buyer":
        margin = -margin
    beta = params.beta_range[0] + rng.random() * (params.beta_range[1] - params.beta_range[0])
    gamma = params.gamma_range[0] + rng.random() * (params.gamma_range[1] - params.gamma_range[0])
    return ZipState(margin=margin, beta=beta, gamma=gamma, momentum_term=0.0)


def zip_quote(trader: Trader, price_min: float = 0.0, price_max: float = 100.0) -> float:
    """Deterministic shout price limit*(1+margin), clamped to the price band."""
    state = trader.strategy_state
    return _clamp(trader.limit * (1.0 + state.margin), price_min, price_max)


def zip_direction(side: str, shout_price: float, last_event: ShoutEvent,
                  active: bool) -> Optional[str]:
    """Raise/lower decision from the four factors.

    The factors are: whether the observing trader is active (still holds
    its untraded unit, so a concession can still win it a deal), the event
    price, whether it was a bid or an offer, and whether it transacted.
    "raise"/"lower" refer to the profit margin; for buyers a raised margin
    means a lower bid.  Margin raises are not gated on activity.
    """
    q = last_event.price
    if side == "seller":
        if last_event.accepted:
            if shout_price <= q:
                return "raise"
            if last_event.kind == "bid" and active and shout_price >= q:
                return "lower"
        elif last_event.kind == "offer" and active and shout_price >= q:
            return "lower"
    else:
        if last_event.accepted:
            if shout_price >= q:
                return "raise"
            if last_event.kind == "offer" and active and shout_price <= q:
                return "lower"
        elif last_event.kind == "bid" and active and shout_price <= q:
            return "lower"
    return None


def zip_target(q: float, towards: str, rng: np.random.Generator,
               params: ZipParams) -> float:
    """Perturbed target price: R*q + A above q ("up") or R*q - A below ("down").

    R is drawn before A; the engine draws the same pair per updating agent.
    """
    if towards == "up":
        r_lo, r_hi = params.rel_perturb_up
        sign = 1.0
    else:
        r_lo, r_hi = params.rel_perturb_down
        sign = -1.0
    a_lo, a_hi = params.abs_perturb if params.abs_perturb is not None else (0.0, 0.0)
    r = r_lo + rng.random() * (r_hi - r_lo)
    a = a_lo + rng.random() * (a_hi - a_lo)
    return r * q + sign * a


def zip_update(state: ZipState, trader: Trader, last_event: ShoutEvent,
               rng: np.random.Generator, params: ZipParams = ZipParams(),
               price_min: float = 0.0, price_max: float = 100.0,
               active: bool = False) -> ZipState:
    """One margin update from the most recent shout event.

    Widrow-Hoff with momentum: delta = beta*(target - shout); the momentum
    term is folded as gamma*momentum + (1-gamma)*delta; the new margin is
    (shout + momentum)/limit - 1, clamped to the side's legal range.
    Agents with a zero limit skip the update (division guard).
    """
    if params.abs_perturb is None:
        params = replace(params, abs_perturb=(0.0, 0.05 * (price_max - price_min)))
    direction = zip_direction(trader.side, zip_quote(trader, price_min, price_max),
                              last_event, active)
    if direction is None or trader.limit == 0.0:
        return state
    if trader.side == "seller":
        towards = "up" if direction == "raise" else "down"
        margin_lo, margin_hi = 0.0, np.inf
    else:
        towards = "down" if direction == "raise" else "up"
        margin_lo, margin_hi = -1.0, 0.0
    shout = zip_quote(trader, price_min, price_max)
    tau = zip_target(last_event.price, towards, rng, params)
    delta = state.beta * (tau - shout)
    momentum = state.gamma * state.momentum_term + (1.0 - state.gamma) * delta
    margin = _clamp((shout + momentum) / trader.limit - 1.0, margin_lo, margin_hi)
    return ZipState(margin=margin, beta=state.beta, gamma=state.gamma,
                    momentum_term=momentum)


# ---------------------------------------------------------------------------
# GD: acceptance beliefs from shout frequencies, expected-surplus quotes
# ---------------------------------------------------------------------------

class GdHistory:
    """Sliding window over the last ``memory_len`` shout events, shared by
    every belief-based agent in a run."""

    def __init__(self, params: GdParams = GdParams()):
        self.memory_len = params.memory_len
        self.events: deque[ShoutEvent] = deque(maxlen=params.memory_len)

    def append(self, event: ShoutEvent) -> None:
        self.events.append(event)

    def extend(self, events: Iterable[ShoutEvent]) -> None:
        for ev in events:
            self.append(ev)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def prices(self) -> list[float]:
        return [ev.price for ev in self.events]


def gd_belief(history: GdHistory, side: str, candidate_price: float) -> float:
    """Estimated probability that a quote at ``candidate_price`` would be accepted.

    For a seller's ask a: (accepted asks >= a + bids >= a) over the same
    plus rejected asks <= a.  For a buyer's bid b: (accepted bids <= b +
    asks <= b) over the same plus rejected bids >= b.  An empty denominator
    yields the optimistic prior 1, which keeps the belief monotone and
    drives early quotes toward the agent's best price.
    """
    p = candidate_price
    if side == "seller":
        tag = bg = ral = 0
        for ev in history:
            if ev.kind == "offer":
                if ev.accepted and ev.price >= p:
                    tag += 1
                elif not ev.accepted and ev.price <= p:
                    ral += 1
            elif ev.price >= p:
                bg += 1
        num, den = tag + bg, tag + bg + ral
    else:
        tbl = al = rbg = 0
        for ev in history:
            if ev.kind == "bid":
                if ev.accepted and ev.price <= p:
                    tbl += 1
                elif not ev.accepted and ev.price >= p:
                    rbg += 1
            elif ev.price <= p:
                al += 1
        num, den = tbl + al, tbl + al + rbg
    if den == 0:
        return 1.0
    return num / den


def gd_candidate_grid(history: GdHistory, limit: float,
                      lo: float, hi: float) -> list[float]:
    """Observed window prices inside [lo, hi], plus the agent's own limit."""
    grid = {p for p in history.prices() if lo <= p <= hi}
    if lo <= limit <= hi:
        grid.add(limit)
    return sorted(grid)


def gd_quote(trader: Trader, history: GdHistory,
             price_min: float = 0.0, price_max: float = 100.0) -> float:
    """Price maximizing belief * surplus over the feasible candidate grid.

    Ties break toward the price nearest the agent's limit (the most
    conservative optimum); an empty feasible grid falls back to the limit.
    """
    limit = trader.limit
    if trader.side == "seller":
        grid = gd_candidate_grid(history, limit, limit, price_max)
        if not grid:
            return float(limit)
        best_price, best_value = None, -np.inf
        for a in grid:  # ascending: first max is nearest the limit
            value = gd_belief(history, "seller", a) * (a - limit)
            if value > best_value:
                best_price, best_value = a, value
        return float(best_price)
    grid = gd_candidate_grid(history, limit, price_min, limit)
    if not grid:
        return float(limit)
    best_price, best_value = None, -np.inf
    for b in reversed(grid):  # descending: first max is nearest the limit
        value = gd_belief(history, "buyer", b) * (limit - b)
        if value > best_value:
            best_price, best_value = b, value
    return float(best_price)
