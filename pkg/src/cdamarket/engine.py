"""Monte Carlo run loop: session schedule, pair picking, matching, recording.

A run is strictly sequential and fully determined by (config, seed).  All
randomness comes from one PCG64 stream; the consumption pattern per model
is fixed and documented here so logs are reproducible bit for bit:

* market generation: one uniform array for buyer quantities, then one for
  seller quantities (see ``market.generate_market``);
* ZI: one uniform matrix of shape (rounds_per_day, 5) drawn at the start
  of each day; step r of the day reads row r as (buyer pick, seller pick,
  bid quantile, ask quantile, price mix).  Rows of skipped steps stay
  unused;
* ZIP: six uniform arrays at init (buyer margins, betas, gammas, then the
  same for sellers); per attempted step two pick uniforms, one price-mix
  uniform on transacting steps, then per shout event the margin-update
  draws: sellers before buyers, each side's raise wave before its
  concession wave, and for every wave that selects at least one agent an
  R array followed by an A array over the selected agents;
* GD: two pick uniforms per attempted step and one price-mix uniform on
  transacting steps; quotes are deterministic.  In forced-trade mode a
  step with at least one crossing pair consumes one pair-pick uniform and
  one price-mix uniform, and nothing otherwise.

Eligible traders are kept in swap-remove pools: picking maps a uniform u
to slot floor(u * n); a trade swaps each party with the pool's last live
slot.  Pools reset to id order at every day boundary.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import ConfigurationError
from .market import (MarketConfig, MarketInstance, ShoutTable, TradeLog,
                     TradeTable, generate_market, make_rng, replica_seed)

_I64 = np.int64


class _Pool:
    """Eligible-trader pool over local side indices 0..size-1."""

    __slots__ = ("size", "ids", "slot", "n")

    def __init__(self, size: int):
        self.size = size
        self.reset()

    def reset(self) -> None:
        self.ids = np.arange(self.size, dtype=_I64)
        self.slot = np.arange(self.size, dtype=_I64)
        self.n = self.size

    def pick(self, u: float) -> int:
        """Local index selected by uniform u in [0, 1)."""
        j = int(u * self.n)
        if j >= self.n:  # float rounding at the top edge
            j = self.n - 1
        return int(self.ids[j])

    def remove(self, idx: int) -> None:
        j = int(self.slot[idx])
        last = self.n - 1
        moved = self.ids[last]
        self.ids[j] = moved
        self.slot[moved] = j
        self.ids[last] = idx
        self.slot[idx] = last
        self.n = last


class _Buf:
    """Growable 1-d append buffer."""

    __slots__ = ("a", "n")

    def __init__(self, dtype, cap: int = 1024):
        self.a = np.empty(cap, dtype=dtype)
        self.n = 0

    def _room(self, k: int) -> None:
        need = self.n + k
        if need > len(self.a):
            cap = len(self.a)
            while cap < need:
                cap *= 2
            grown = np.empty(cap, dtype=self.a.dtype)
            grown[: self.n] = self.a[: self.n]
            self.a = grown

    def push(self, x) -> None:
        self._room(1)
        self.a[self.n] = x
        self.n += 1

    def push_arr(self, arr) -> None:
        k = len(arr)
        self._room(k)
        self.a[self.n: self.n + k] = arr
        self.n += k

    def values(self) -> np.ndarray:
        return self.a[: self.n].copy()


class _ShoutBuf:
    def __init__(self, record: bool):
        self.record = record
        if record:
            self.step = _Buf(np.int64)
            self.day = _Buf(np.int32)
            self.trader = _Buf(np.int32)
            self.is_bid = _Buf(bool)
            self.price = _Buf(np.float64)
            self.accepted = _Buf(bool)

    def push_step(self, step: int, day: int, buyer_gid: int, bid: float,
                  seller_gid: int, ask: float, accepted: bool) -> None:
        if not self.record:
            return
        self.step.push(step)
        self.step.push(step)
        self.day.push(day)
        self.day.push(day)
        self.trader.push(buyer_gid)
        self.trader.push(seller_gid)
        self.is_bid.push(True)
        self.is_bid.push(False)
        self.price.push(bid)
        self.price.push(ask)
        self.accepted.push(accepted)
        self.accepted.push(accepted)

    def push_chunk(self, base_step: int, day: int, buyer_gids, bids,
                   seller_gids, asks, trade_on_last: bool) -> None:
        if not self.record:
            return
        k = len(bids)
        rows = 2 * k
        steps = np.repeat(np.arange(base_step, base_step + k, dtype=np.int64), 2)
        trader = np.empty(rows, dtype=np.int64)
        trader[0::2] = buyer_gids
        trader[1::2] = seller_gids
        price = np.empty(rows, dtype=np.float64)
        price[0::2] = bids
        price[1::2] = asks
        is_bid = np.zeros(rows, dtype=bool)
        is_bid[0::2] = True
        accepted = np.zeros(rows, dtype=bool)
        if trade_on_last:
            accepted[-2:] = True
        self.step.push_arr(steps)
        self.day.push_arr(np.full(rows, day, dtype=np.int32))
        self.trader.push_arr(trader)
        self.is_bid.push_arr(is_bid)
        self.price.push_arr(price)
        self.accepted.push_arr(accepted)

    def table(self) -> ShoutTable:
        if not self.record:
            return ShoutTable.empty()
        return ShoutTable(self.step.values(), self.day.values(),
                          self.trader.values(), self.is_bid.values(),
                          self.price.values(), self.accepted.values())


class _TradeBuf:
    def __init__(self):
        self.step = _Buf(np.int64)
        self.day = _Buf(np.int32)
        self.buyer = _Buf(np.int32)
        self.seller = _Buf(np.int32)
        self.bid = _Buf(np.float64)
        self.ask = _Buf(np.float64)
        self.price = _Buf(np.float64)

    def push(self, step, day, buyer_gid, seller_gid, bid, ask, price) -> None:
        self.step.push(step)
        self.day.push(day)
        self.buyer.push(buyer_gid)
        self.seller.push(seller_gid)
        self.bid.push(bid)
        self.ask.push(ask)
        self.price.push(price)

    def table(self) -> TradeTable:
        return TradeTable(self.step.values(), self.day.values(),
                          self.buyer.values(), self.seller.values(),
                          self.bid.values(), self.ask.values(),
                          self.price.values())


def _trade_price(bid: float, ask: float, rule: str, u_mix: float) -> float:
    if rule == "midpoint":
        return 0.5 * (bid + ask)
    if rule == "buyer_price":
        return bid
    if rule == "seller_price":
        return ask
    return ask + u_mix * (bid - ask)  # uniform_random


# ---------------------------------------------------------------------------
# ZI
# ---------------------------------------------------------------------------

def _run_zi(market, config, rng, shouts, trades):
    nb = market.n_buyers
    blim = market.buyer_limits
    slim = market.seller_limits
    pmin, pmax = config.price_min, config.price_max
    rule = config.trade_price_rule
    d = config.rounds_per_day
    bpool = _Pool(nb)
    spool = _Pool(market.n_sellers)

    for day in range(config.n_days):
        bpool.reset()
        spool.reset()
        base = day * d
        U = rng.random((d, 5))
        r = 0
        chunk = 64
        while r < d:
            if bpool.n == 0 or spool.n == 0:
                break  # remaining steps of the day are shoutless no-ops
            k = min(chunk, d - r)
            u = U[r: r + k]
            jb = (u[:, 0] * bpool.n).astype(_I64)
            np.minimum(jb, bpool.n - 1, out=jb)
            js = (u[:, 1] * spool.n).astype(_I64)
            np.minimum(js, spool.n - 1, out=js)
            bi = bpool.ids[jb]
            si = spool.ids[js]
            lb = blim[bi]
            ls = slim[si]
            bids = pmin + u[:, 2] * (lb - pmin)
            asks = ls + u[:, 3] * (pmax - ls)
            cross = bids >= asks
            m = int(np.argmax(cross))
            if not cross[m]:
                shouts.push_chunk(base + r, day, bi, bids, nb + si, asks, False)
                r += k
                chunk = min(chunk * 2, 65536)
                continue
            shouts.push_chunk(base + r, day, bi[: m + 1], bids[: m + 1],
                              nb + si[: m + 1], asks[: m + 1], True)
            bid, ask = float(bids[m]), float(asks[m])
            price = _trade_price(bid, ask, rule, float(u[m, 4]))
            b, s = int(bi[m]), int(si[m])
            trades.push(base + r + m, day, b, nb + s, bid, ask, price)
            bpool.remove(b)
            spool.remove(s)
            r += m + 1
            chunk = 64


# ---------------------------------------------------------------------------
# ZIP
# ---------------------------------------------------------------------------

class _ZipSide:
    """Vectorized margin state for one side of the market."""

    def __init__(self, limits, is_buyer, params, rng, pmin, pmax):
        n = len(limits)
        self.limits = limits
        self.is_buyer = is_buyer
        self.pmin = pmin
        self.pmax = pmax
        self.rel_up = params.rel_perturb_up
        self.rel_down = params.rel_perturb_down
        self.abs_rng = params.abs_perturb
        m_lo, m_hi = params.initial_margin_range
        margin = m_lo + rng.random(n) * (m_hi - m_lo)
        if is_buyer:
            margin = -margin
        b_lo, b_hi = params.beta_range
        self.beta = b_lo + rng.random(n) * (b_hi - b_lo)
        g_lo, g_hi = params.gamma_range
        self.gamma = g_lo + rng.random(n) * (g_hi - g_lo)
        self.margin = margin
        self.momentum = np.zeros(n)
        self.updatable = limits > 0.0  # zero-limit agents skip margin math
        self.price = np.clip(limits * (1.0 + margin), pmin, pmax)

    def update_many(self, mask, q, towards, rng):
        """Widrow-Hoff-with-momentum update of every masked agent toward a
        perturbed target R*q ± A (per-agent draws: the R array then the A
        array, consumed as one block).  All arithmetic is in place; the
        clamps keep seller margins >= 0, buyer margins in [-1, 0] and
        prices inside the band."""
        idx = mask.nonzero()[0]
        m = idx.size
        if m == 0:
            return
        if towards == "up":
            r_lo, r_hi = self.rel_up
            sign = 1.0
        else:
            r_lo, r_hi = self.rel_down
            sign = -1.0
        a_lo, a_hi = self.abs_rng
        u = rng.random(2 * m)
        tau = u[:m]
        tau *= (r_hi - r_lo) * q
        tau += r_lo * q + sign * a_lo
        aa = u[m:]
        aa *= sign * (a_hi - a_lo)
        tau += aa
        p = self.price.take(idx)
        mom = self.momentum.take(idx)
        gamma = self.gamma.take(idx)
        tau -= p
        tau *= self.beta.take(idx)      # tau is now the delta term
        mom *= gamma
        gamma -= 1.0
        tau *= gamma                    # -(1-gamma)*delta
        mom -= tau                      # gamma*mom + (1-gamma)*delta
        self.momentum[idx] = mom
        lim = self.limits.take(idx)
        p += mom
        p /= lim
        p -= 1.0                        # raw margin
        if self.is_buyer:
            np.minimum(p, 0.0, out=p)
            np.maximum(p, -1.0, out=p)
        else:
            np.maximum(p, 0.0, out=p)
        self.margin[idx] = p
        p += 1.0
        p *= lim
        np.minimum(p, self.pmax, out=p)
        np.maximum(p, self.pmin, out=p)
        self.price[idx] = p

def _run_zip(market, config, rng, shouts, trades):
    nb = market.n_buyers
    pmin, pmax = config.price_min, config.price_max
    rule = config.trade_price_rule
    d = config.rounds_per_day
    params = config.model_params
    buyers = _ZipSide(market.buyer_limits, True, params, rng, pmin, pmax)
    sellers = _ZipSide(market.seller_limits, False, params, rng, pmin, pmax)
    bpool = _Pool(nb)
    spool = _Pool(market.n_sellers)
    # "Active" for the margin-cut branches: still holding an untraded unit
    # today.  Margin raises are not gated on activity.
    b_active = np.ones(nb, dtype=bool)
    s_active = np.ones(market.n_sellers, dtype=bool)

    def observe(q, is_bid, accepted):
        # Sellers first, then buyers; within a side, the raise wave is
        # applied before the concession wave and excludes it at p == q.
        if accepted:
            raise_s = (sellers.price <= q) & sellers.updatable
            sellers.update_many(raise_s, q, "up", rng)
            if is_bid:
                lower_s = ~raise_s & s_active & (sellers.price >= q) & sellers.updatable
                sellers.update_many(lower_s, q, "down", rng)
        elif not is_bid:
            lower_s = s_active & (sellers.price >= q) & sellers.updatable
            sellers.update_many(lower_s, q, "down", rng)
        if accepted:
            raise_b = (buyers.price >= q) & buyers.updatable
            buyers.update_many(raise_b, q, "down", rng)
            if not is_bid:
                lower_b = ~raise_b & b_active & (buyers.price <= q) & buyers.updatable
                buyers.update_many(lower_b, q, "up", rng)
        elif is_bid:
            lower_b = b_active & (buyers.price <= q) & buyers.updatable
            buyers.update_many(lower_b, q, "up", rng)

    for day in range(config.n_days):
        bpool.reset()
        spool.reset()
        b_active[:] = True
        s_active[:] = True
        base = day * d
        for r in range(d):
            if bpool.n == 0 or spool.n == 0:
                break
            bi = bpool.pick(rng.random())
            si = spool.pick(rng.random())
            bid = float(buyers.price[bi])
            ask = float(sellers.price[si])
            crossed = bid >= ask
            if crossed:
                price = _trade_price(bid, ask, rule, rng.random())
            shouts.push_step(base + r, day, bi, bid, nb + si, ask, crossed)
            if crossed:
                trades.push(base + r, day, bi, nb + si, bid, ask, price)
                bpool.remove(bi)
                spool.remove(si)
                b_active[bi] = False
                s_active[si] = False
            # Events are observed with post-step activity flags, so a pair
            # that just traded no longer concedes on its own events.
            observe(bid, True, crossed)
            observe(ask, False, crossed)


# ---------------------------------------------------------------------------
# GD
# ---------------------------------------------------------------------------

class _GdWindow:
    """Shared shout memory with sorted per-class price buffers.

    Classes: accepted asks, rejected asks, accepted bids, rejected bids.
    Insertions and evictions keep each buffer sorted so belief counts are
    searchsorted lookups.
    """

    def __init__(self, cap: int):
        self.cap = cap
        self.ring_price = np.empty(cap)
        self.ring_cls = np.empty(cap, dtype=np.uint8)
        self.head = 0
        self.count = 0
        self.bufs = [np.empty(cap) for _ in range(4)]
        self.sizes = [0, 0, 0, 0]
        self.all_buf = np.empty(cap)
        self.all_n = 0

    @staticmethod
    def _cls(is_bid: bool, accepted: bool) -> int:
        # 0: accepted ask, 1: rejected ask, 2: accepted bid, 3: rejected bid
        return (2 if is_bid else 0) + (0 if accepted else 1)

    @staticmethod
    def _ins(buf, n, x):
        i = int(np.searchsorted(buf[:n], x))
        buf[i + 1: n + 1] = buf[i:n]
        buf[i] = x
        return n + 1

    @staticmethod
    def _del(buf, n, x):
        i = int(np.searchsorted(buf[:n], x))
        buf[i: n - 1] = buf[i + 1: n]
        return n - 1

    def push(self, price: float, is_bid: bool, accepted: bool) -> None:
        if self.count == self.cap:
            old_p = float(self.ring_price[self.head])
            old_c = int(self.ring_cls[self.head])
            self.sizes[old_c] = self._del(self.bufs[old_c], self.sizes[old_c], old_p)
            self.all_n = self._del(self.all_buf, self.all_n, old_p)
            self.head = (self.head + 1) % self.cap
            self.count -= 1
        tail = (self.head + self.count) % self.cap
        c = self._cls(is_bid, accepted)
        self.ring_price[tail] = price
        self.ring_cls[tail] = c
        self.count += 1
        self.sizes[c] = self._ins(self.bufs[c], self.sizes[c], price)
        self.all_n = self._ins(self.all_buf, self.all_n, price)

    def unique_prices(self) -> np.ndarray:
        a = self.all_buf[: self.all_n]
        if a.size == 0:
            return a
        keep = np.empty(a.size, dtype=bool)
        keep[0] = True
        np.not_equal(a[1:], a[:-1], out=keep[1:])
        return a[keep]

    def seller_quote(self, limit: float, uniq: np.ndarray, pmax: float) -> float:
        lo = int(np.searchsorted(uniq, limit, "left"))
        cand = uniq[lo:]
        if cand.size == 0 or cand[0] != limit:
            cand = np.concatenate(([limit], cand))
        a_acc, na = self.bufs[0][: self.sizes[0]], self.sizes[0]
        a_rej = self.bufs[1][: self.sizes[1]]
        b_acc, nba = self.bufs[2][: self.sizes[2]], self.sizes[2]
        b_rej, nbr = self.bufs[3][: self.sizes[3]], self.sizes[3]
        tag = na - np.searchsorted(a_acc, cand, "left")
        bg = (nba - np.searchsorted(b_acc, cand, "left")) + \
             (nbr - np.searchsorted(b_rej, cand, "left"))
        ral = np.searchsorted(a_rej, cand, "right")
        num = tag + bg
        den = num + ral
        belief = np.where(den > 0, num / np.maximum(den, 1), 1.0)
        value = belief * (cand - limit)
        j = int(np.argmax(value))  # ascending grid: first max is nearest limit
        return float(cand[j])

    def buyer_quote(self, limit: float, uniq: np.ndarray, pmin: float) -> float:
        hi = int(np.searchsorted(uniq, limit, "right"))
        cand = uniq[:hi]
        if cand.size == 0 or cand[-1] != limit:
            cand = np.concatenate((cand, [limit]))
        a_acc = self.bufs[0][: self.sizes[0]]
        a_rej = self.bufs[1][: self.sizes[1]]
        b_acc = self.bufs[2][: self.sizes[2]]
        b_rej, nbr = self.bufs[3][: self.sizes[3]], self.sizes[3]
        tbl = np.searchsorted(b_acc, cand, "right")
        al = np.searchsorted(a_acc, cand, "right") + np.searchsorted(a_rej, cand, "right")
        rbg = nbr - np.searchsorted(b_rej, cand, "left")
        num = tbl + al
        den = num + rbg
        belief = np.where(den > 0, num / np.maximum(den, 1), 1.0)
        value = belief * (limit - cand)
        j = cand.size - 1 - int(np.argmax(value[::-1]))  # first max from the top
        return float(cand[j])


def _run_gd(market, config, rng, shouts, trades):
    nb = market.n_buyers
    blim = market.buyer_limits
    slim = market.seller_limits
    pmin, pmax = config.price_min, config.price_max
    rule = config.trade_price_rule
    d = config.rounds_per_day
    window = _GdWindow(config.model_params.memory_len)
    bpool = _Pool(nb)
    spool = _Pool(market.n_sellers)

    for day in range(config.n_days):
        bpool.reset()
        spool.reset()
        base = day * d
        for r in range(d):
            if bpool.n == 0 or spool.n == 0:
                break
            bi = bpool.pick(rng.random())
            si = spool.pick(rng.random())
            uniq = window.unique_prices()
            bid = window.buyer_quote(float(blim[bi]), uniq, pmin)
            ask = window.seller_quote(float(slim[si]), uniq, pmax)
            crossed = bid >= ask
            if crossed:
                price = _trade_price(bid, ask, rule, rng.random())
            shouts.push_step(base + r, day, bi, bid, nb + si, ask, crossed)
            window.push(bid, True, crossed)
            window.push(ask, False, crossed)
            if crossed:
                trades.push(base + r, day, bi, nb + si, bid, ask, price)
                bpool.remove(bi)
                spool.remove(si)


def _run_gd_forced(market, config, rng, shouts, trades):
    """Forced-trade variant: each step picks uniformly among the (buyer,
    seller) pairs whose current quotes cross, so every step with a
    crossable pair transacts.  Quotes for every eligible trader are
    recomputed per step, which is fine at validation scale but not tuned
    for paper-scale populations.
    """
    nb = market.n_buyers
    blim = market.buyer_limits
    slim = market.seller_limits
    pmin, pmax = config.price_min, config.price_max
    rule = config.trade_price_rule
    d = config.rounds_per_day
    window = _GdWindow(config.model_params.memory_len)
    bpool = _Pool(nb)
    spool = _Pool(market.n_sellers)

    for day in range(config.n_days):
        bpool.reset()
        spool.reset()
        base = day * d
        for r in range(d):
            if bpool.n == 0 or spool.n == 0:
                break
            uniq = window.unique_prices()
            byrs = bpool.ids[: bpool.n]
            slrs = spool.ids[: spool.n]
            bids = np.array([window.buyer_quote(float(blim[i]), uniq, pmin) for i in byrs])
            asks = np.array([window.seller_quote(float(slim[i]), uniq, pmax) for i in slrs])
            order = np.argsort(asks, kind="stable")
            asks_sorted = asks[order]
            cnt = np.searchsorted(asks_sorted, bids, "right")
            total = int(cnt.sum())
            if total == 0:
                break  # no crossing pair; quotes cannot change until pools reset
            k = int(rng.random() * total)
            if k >= total:
                k = total - 1
            cum = np.cumsum(cnt)
            i = int(np.searchsorted(cum, k, "right"))
            rank = k - (int(cum[i - 1]) if i > 0 else 0)
            bi = int(byrs[i])
            si = int(slrs[order[rank]])
            bid = float(bids[i])
            ask = float(asks_sorted[rank])
            price = _trade_price(bid, ask, rule, rng.random())
            shouts.push_step(base + r, day, bi, bid, nb + si, ask, True)
            window.push(bid, True, True)
            window.push(ask, False, True)
            trades.push(base + r, day, bi, nb + si, bid, ask, price)
            bpool.remove(bi)
            spool.remove(si)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------

def run_session(market: MarketInstance, config: MarketConfig,
                rng: np.random.Generator, *, record_shouts: bool = True) -> TradeLog:
    """Run the p-day, d-round schedule on an already-generated market.

    ``rng`` must be the same stream that generated the market for the run
    to be reproducible from the config seed alone.  ``record_shouts=False``
    drops the shout table (the trade record is unaffected), which saves
    memory on million-round runs.
    """
    if market.n_traders != config.n_traders:
        raise ConfigurationError(
            f"market has {market.n_traders} traders, config says {config.n_traders}")
    shouts = _ShoutBuf(record_shouts)
    trades = _TradeBuf()
    if config.model == "ZI":
        _run_zi(market, config, rng, shouts, trades)
    elif config.model == "ZIP":
        _run_zip(market, config, rng, shouts, trades)
    elif config.gd_forced_trade:
        _run_gd_forced(market, config, rng, shouts, trades)
    else:
        _run_gd(market, config, rng, shouts, trades)
    return TradeLog(config=config, market=market,
                    shouts=shouts.table(), trades=trades.table())


def run(config: MarketConfig, *, record_shouts: bool = True) -> TradeLog:
    """Generate the market and run the full session from the config seed."""
    rng = make_rng(config.seed)
    market = generate_market(config, rng)
    return run_session(market, config, rng, record_shouts=record_shouts)


def run_replicas(config: MarketConfig, n_replicas: int,
                 base_seed: int | None = None, *,
                 record_shouts: bool = True) -> list[TradeLog]:
    """Independent runs with per-replica derived seeds and fresh markets.

    Replica i uses seed ``replica_seed(base, i)`` where base defaults to
    the config's own seed.  Note the logs of long runs are large; the
    experiment runner streams replicas instead of collecting them.
    """
    if n_replicas < 1:
        raise ConfigurationError(f"n_replicas must be >= 1: {n_replicas}")
    base = config.seed if base_seed is None else base_seed
    out = []
    for i in range(n_replicas):
        cfg = replace(config, seed=replica_seed(base, i))
        out.append(run(cfg, record_shouts=record_shouts))
    return out
