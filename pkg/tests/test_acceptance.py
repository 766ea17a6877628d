"""Acceptance gate: the eight replication criteria at their stated
tolerances, one printed PASS/FAIL line each.

The paper-scale ensembles here simulate hundreds of millions of Monte
Carlo steps on one core; expect on the order of an hour for the full
module.  Set CDAMARKET_ACCEPT_DIR to keep experiment outputs between
sessions (reuse is keyed on config hash and package version).

Expected outcomes, measured at the pinned preset seeds during
development: criteria 1, 2, 5 and 8 pass.  Criterion 3 fails on its ZI
clause only (in ZI the day-trade rate is continuous across the marginal
boundary, so the intramarginal mode always sits just above the
extramarginal 95th percentile).  Criterion 4 fails because minimizing
modularity on a bipartite transaction network provably returns the
buyer|seller side split - no community-size power law exists.  Criterion
6 fails on its GD clause (the GD price band drifts slowly, blowing up
long-lag kurtosis), and criterion 7 fails its ZIP/GD 25% contrast
(day-0 averages are already mostly converged).  Supplementary check E1
(ZIP intramarginal skewness) fails at the pinned |s| < 0.5 threshold;
E2 and E3 pass.  Each failing test prints the measured values alongside
the expectation; the analyses live in the project decision notes.
"""

import os

import numpy as np
import pytest

from cdamarket import __version__, persist
from cdamarket.engine import run
from cdamarket.experiment import (ExperimentSpec, get_preset, run_experiment)
from cdamarket.market import MarketConfig
from cdamarket.stats import fit_power_law, log_bin_histogram

REPORT_LINES = []


def report(num, ok, detail):
    line = f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}"
    print("\n" + line, flush=True)
    REPORT_LINES.append(line)
    return ok


@pytest.fixture(scope="session")
def accept_root(tmp_path_factory):
    env = os.environ.get("CDAMARKET_ACCEPT_DIR")
    if env:
        os.makedirs(env, exist_ok=True)
        return env
    return str(tmp_path_factory.mktemp("acceptance"))


@pytest.fixture(scope="session", autouse=True)
def write_report(accept_root):
    yield
    path = os.path.join(accept_root, "acceptance_report.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(REPORT_LINES) + "\n")
    print(f"\nacceptance report: {path}")


def run_cached(spec: ExperimentSpec, root: str):
    """Run an experiment, or reuse an on-disk result with the same config
    hash and code version."""
    out = os.path.join(root, spec.name)
    summary_path = os.path.join(out, "summary.json")
    if os.path.exists(summary_path):
        summary = persist.read_json(summary_path)
        if (summary.get("spec_hash") == spec.spec_hash()
                and summary.get("version") == __version__):
            return summary
    return run_experiment(spec, out_dir=out).summary


def combined_200d_spec(model: str) -> ExperimentSpec:
    """One ensemble standing in for the degree/community/returns presets
    of a model: they share the market config and seed, so their replica
    logs are byte-identical; this union just avoids simulating the same
    runs three times."""
    degree = get_preset(f"paper-degree-{model}")
    community = get_preset(f"paper-community-{model}")
    returns = get_preset(f"paper-returns-{model}")
    assert degree.market.config_hash() == community.market.config_hash()
    assert degree.market.config_hash() == returns.market.config_hash()
    return ExperimentSpec(
        name=f"acceptance-200d-{model}",
        market=degree.market,
        replicas=degree.replicas,
        analyses=("degree", "degree_by_class", "community", "returns"),
        return_lags=returns.return_lags,
        fit_ranges=degree.fit_ranges,
    )


@pytest.fixture(scope="session")
def ens200(accept_root):
    cache = {}

    def get(model: str):
        if model not in cache:
            cache[model] = run_cached(combined_200d_spec(model), accept_root)
        return cache[model]

    return get


@pytest.fixture(scope="session")
def ens1000(accept_root):
    cache = {}

    def get(model: str):
        if model not in cache:
            cache[model] = run_cached(get_preset(f"paper-degree-1000d-{model}"),
                                      accept_root)
        return cache[model]

    return get


@pytest.fixture(scope="session")
def intervals(accept_root):
    cache = {}

    def get(model: str):
        if model not in cache:
            cache[model] = run_cached(get_preset(f"paper-intervals-{model}"),
                                      accept_root)
        return cache[model]

    return get


def fit_of(summary, name):
    fit = summary["fits"].get(name, {})
    return fit.get("exponent"), fit


class TestCriterion1:
    def test_zi_degree_exponent_and_mean_degree(self, ens200):
        s = ens200("zi")
        exp, fit = fit_of(s, "degree")
        mean_k = s["pooled"]["mean_degree"]
        ok_exp = exp is not None and abs(exp - (-0.51)) <= 0.15
        ok_k = abs(mean_k - 20.0) <= 5.0
        ok = report(1, ok_exp and ok_k,
                    f"ZI degree exponent {exp:.3f} (want -0.51 +/- 0.15, "
                    f"range {fit.get('fit_range')}), mean degree {mean_k:.1f} "
                    f"(want 20 +/- 5)")
        assert ok


class TestCriterion2:
    def test_thousand_day_exponent_band(self, ens1000):
        zi, _ = fit_of(ens1000("zi"), "degree")
        zipx, _ = fit_of(ens1000("zip"), "degree_extramarginal")
        gdx, _ = fit_of(ens1000("gd"), "degree_extramarginal")
        vals = {"ZI": zi, "ZIP-extra": zipx, "GD-extra": gdx}
        in_band = all(v is not None and -1.0 <= v <= -0.35 for v in vals.values())
        ok_zip = zipx is not None and abs(zipx - (-0.83)) <= 0.2
        ok_gd = gdx is not None and abs(gdx - (-0.78)) <= 0.25
        detail = ", ".join(f"{k} {v:.3f}" if v is not None else f"{k} n/a"
                           for k, v in vals.items())
        ok = report(2, in_band and ok_zip and ok_gd,
                    f"1000-day slopes [{detail}]; band [-1.0, -0.35], "
                    f"ZIP-extra -0.83 +/- 0.2, GD-extra -0.78 +/- 0.25")
        assert ok


class TestCriterion3:
    def test_bump_decomposition(self, ens200):
        rows = {}
        for model in ("zi", "zip", "gd"):
            b = ens200(model).get("bump", {})
            rows[model] = (b.get("intra_mode_mean"), b.get("extra_p95_mean"),
                           b.get("bimodal"))
        ok = (rows["zip"][2] is True and rows["gd"][2] is True
              and rows["zi"][2] is False)
        detail = "; ".join(
            f"{m.upper()} intra-mode {v[0]:.1f} vs extra-p95 {v[1]:.1f} -> "
            f"bimodal={v[2]}" for m, v in rows.items())
        ok = report(3, ok, detail + " (want ZIP/GD bimodal, ZI not)")
        assert ok


class TestCriterion4:
    def test_community_size_exponents(self, ens200):
        want = {"zi": -1.36, "zip": -1.55, "gd": -1.50}
        measured = {}
        all_ok = True
        for model, target in want.items():
            exp, fit = fit_of(ens200(model), "community_sizes")
            measured[model] = exp if exp is not None else fit.get("unavailable")
            all_ok &= exp is not None and abs(exp - target) <= 0.2
        detail = (f"community-size fits {measured}; want -1.36/-1.55/-1.50 +/- 0.2. "
                  "Q-minimization on a bipartite transaction network provably "
                  "returns the buyer|seller side split (2 communities, Q=-1/2), "
                  "so no size power law exists; see decisions ledger")
        ok = report(4, all_ok, detail)
        assert ok


class TestCriterion5:
    def test_interval_exponents(self, intervals):
        zi, zi_fit = fit_of(intervals("zi"), "intervals")
        zp, zp_fit = fit_of(intervals("zip"), "intervals")
        ok_zi = zi is not None and abs(zi - (-1.36)) <= 0.2
        ok_zp = zp is not None and abs(zp - (-1.84)) <= 0.25
        ok = report(5, ok_zi and ok_zp,
                    f"interval exponents ZI {zi:.3f} (want -1.36 +/- 0.2, range "
                    f"{zi_fit.get('fit_range')}), ZIP {zp:.3f} (want -1.84 +/- 0.25, "
                    f"range {zp_fit.get('fit_range')})")
        assert ok

    def test_forced_gd_intervals_skipped(self, tmp_path):
        market = MarketConfig(n_traders=30, rounds_per_day=40, n_days=3, seed=17,
                              model="GD", gd_forced_trade=True)
        spec = ExperimentSpec(name="forced-gd-intervals", market=market,
                              replicas=2, analyses=("intervals",))
        res = run_experiment(spec, out_dir=str(tmp_path / "forced"))
        ok = report("5b", "intervals" in res.skipped
                    and "forced-trade" in res.skipped["intervals"],
                    f"forced-trade GD intervals skipped: "
                    f"{res.skipped.get('intervals', 'MISSING')!r}")
        assert ok


class TestCriterion6:
    def test_return_distributions(self, ens200):
        zi = ens200("zi")["returns"]
        gd = ens200("gd")["returns"]
        zp = ens200("zip")["returns"]
        zi_ks = max(zi["ks_mean"].values())
        zi_k5 = zi["by_lag"]["5"]["excess_kurtosis_mean"]
        ok_a = zi_ks < 0.05 and zi_k5 > 1.0
        gd_kurts = {t: v["excess_kurtosis_mean"] for t, v in gd["by_lag"].items()
                    if "excess_kurtosis_mean" in v}
        ok_b = len(gd_kurts) == 4 and all(abs(v) < 0.5 for v in gd_kurts.values())
        zp_k5 = zp["by_lag"]["5"]["excess_kurtosis_mean"]
        zp_k1000 = zp["by_lag"]["1000"]["excess_kurtosis_mean"]
        ok_c = abs(zp_k1000) < 0.5 and zp_k5 > zp_k1000
        detail = (f"(a) ZI maxKS {zi_ks:.4f} (<0.05), kurt(tau5) {zi_k5:.2f} (>1): "
                  f"{'ok' if ok_a else 'fail'}; "
                  f"(b) GD kurts {({t: round(v, 2) for t, v in gd_kurts.items()})} "
                  f"(all |.|<0.5): {'ok' if ok_b else 'fail'}; "
                  f"(c) ZIP kurt tau5 {zp_k5:.2f} > tau1000 {zp_k1000:.2f}, "
                  f"|tau1000|<0.5: {'ok' if ok_c else 'fail'}")
        ok = report(6, ok_a and ok_b and ok_c, detail)
        assert ok


class TestCriterion7:
    def test_convergence_contrast(self, ens200):
        zp = ens200("zip")["convergence"]
        gd = ens200("gd")["convergence"]
        zi = ens200("zi")["convergence"]
        ok_zip = zp["abs_dev_ratio"] < 0.25
        ok_gd = gd["abs_dev_ratio"] < 0.25
        ok_zi = zi["price_std_ratio"] > 0.5
        detail = (f"ZIP |dev| last/first {zp['abs_dev_ratio']:.2f} (<0.25): "
                  f"{'ok' if ok_zip else 'fail'}; "
                  f"GD {gd['abs_dev_ratio']:.2f} (<0.25): {'ok' if ok_gd else 'fail'}; "
                  f"ZI std ratio {zi['price_std_ratio']:.2f} (>0.5): "
                  f"{'ok' if ok_zi else 'fail'}")
        ok = report(7, ok_zip and ok_gd and ok_zi, detail)
        assert ok


class TestModuleExamples:
    """Paper-scale module examples and invariants that need the full
    ensembles."""

    def test_zip_intramarginal_degree_skewness(self, ens200):
        s = ens200("zip")["bump"]["intra_skewness"]
        ok = report("E1", abs(s) < 0.5,
                    f"ZIP intramarginal degree skewness {s:.2f} (module example "
                    f"wants |s| < 0.5; the hump is unimodal but left-tailed at "
                    f"the pinned threshold)")
        assert ok

    def test_collapse_contrast_zip_exceeds_zi(self, ens200):
        zi = ens200("zi")["returns"]["ks_mean"]["5-1000"]
        zp = ens200("zip")["returns"]["ks_mean"]["5-1000"]
        ok = report("E2", zi < 0.05 and zp > zi,
                    f"scaling-collapse proxy: ZI KS(5,1000) {zi:.4f} < 0.05 and "
                    f"ZIP {zp:.4f} exceeds the ZI value")
        assert ok

    def test_adaptive_models_tighten_toward_equilibrium(self, ens200):
        # the ensemble invariant in its weak (ratio < 1) form
        zp = ens200("zip")["convergence"]["abs_dev_ratio"]
        gd = ens200("gd")["convergence"]["abs_dev_ratio"]
        ok = report("E3", zp < 1.0 and gd < 1.0,
                    f"last-day |price - p_eq| below first day: ZIP ratio {zp:.2f}, "
                    f"GD ratio {gd:.2f} (both < 1)")
        assert ok


class TestCriterion8:
    """Property suites with no study-derived numbers."""

    def test_budget_constraint_fuzz_one_million_trades(self):
        # crossing-heavy curves so trades accumulate quickly
        totals = 0
        configs = [
            ("ZI", MarketConfig(n_traders=2000, rounds_per_day=2500, n_days=1000,
                                seed=71, model="ZI",
                                demand_curve=(100, 50), supply_curve=(0, 50))),
            ("ZIP", MarketConfig(n_traders=2000, rounds_per_day=2500, n_days=250,
                                 seed=72, model="ZIP",
                                 demand_curve=(100, 50), supply_curve=(0, 50))),
            ("GD", MarketConfig(n_traders=500, rounds_per_day=1000, n_days=1500,
                                seed=73, model="GD",
                                demand_curve=(100, 50), supply_curve=(0, 50))),
        ]
        for model, cfg in configs:
            log = run(cfg, record_shouts=False)
            t = log.trades
            market = log.market
            nb = market.n_buyers
            blim = market.buyer_limits[t.buyer_id]
            slim = market.seller_limits[t.seller_id - nb]
            assert np.all(t.bid >= t.ask), model
            assert np.all((t.price >= t.ask) & (t.price <= t.bid)), model
            assert np.all(t.bid <= blim + 1e-9), model
            assert np.all(t.ask >= slim - 1e-9), model
            totals += len(t)
        ok = report("8a", totals >= 1_000_000,
                    f"budget invariant on {totals} fuzzed trades across ZI/ZIP/GD")
        assert ok

    def test_gd_quote_equals_brute_force_on_1000_histories(self):
        from cdamarket.agents import GdHistory, Trader, gd_quote
        from cdamarket.market import GdParams, ShoutEvent
        from test_agents import brute_force_gd_quote
        rng = np.random.default_rng(81)
        bad = 0
        for _ in range(1000):
            events = [ShoutEvent(step=s, day=0, trader_id=0,
                                 kind="bid" if rng.random() < 0.5 else "offer",
                                 price=float(rng.uniform(0, 100)),
                                 accepted=bool(rng.random() < 0.4))
                      for s in range(int(rng.integers(0, 40)))]
            h = GdHistory(GdParams(memory_len=100))
            h.extend(events)
            side = "buyer" if rng.random() < 0.5 else "seller"
            t = Trader(id=0, side=side, limit=float(rng.uniform(0, 100)))
            if gd_quote(t, h) != pytest.approx(brute_force_gd_quote(t, events)):
                bad += 1
        ok = report("8b", bad == 0,
                    f"GD quote == brute-force grid argmax on 1000 random histories "
                    f"({bad} mismatches)")
        assert ok

    def test_anticommunity_matches_exhaustive_minimum(self):
        from cdamarket.community import modularity, partition_anticommunities
        from cdamarket.netgraph import network_from_pairs
        from test_community import exhaustive_min_q
        rng = np.random.default_rng(91)
        checked = mismatches = 0
        while checked < 100:
            n = int(rng.integers(4, 11))
            p = rng.uniform(0.15, 0.85)
            pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
                     if rng.random() < p]
            if not pairs:
                continue
            net = network_from_pairs(np.array([a for a, b in pairs]),
                                     np.array([b for a, b in pairs]))
            checked += 1
            q = modularity(net, partition_anticommunities(net))
            if abs(q - exhaustive_min_q(net)) > 1e-9:
                mismatches += 1
        ok = report("8c", mismatches == 0,
                    f"anti-community partition == exhaustive-search minimum Q on "
                    f"{checked} random graphs <= 10 nodes ({mismatches} mismatches)")
        assert ok

    def test_power_law_fitter_recovers_synthetic_slope(self):
        rng = np.random.default_rng(92)
        u = rng.random(1_000_000)
        x = 1.0 / (1.0 - u * (1.0 - 1e-3))  # p(x) ~ x^-2 on [1, 1000]
        fit = fit_power_law(log_bin_histogram(x))
        ok = report("8d", abs(fit.exponent - (-2.0)) <= 0.1,
                    f"power-law fitter on x^-2 samples: slope {fit.exponent:.3f} "
                    f"(want -2.0 +/- 0.1)")
        assert ok

    def test_determinism_byte_identical_trades(self, tmp_path):
        market = MarketConfig(n_traders=100, rounds_per_day=400, n_days=5,
                              seed=123, model="ZIP")
        spec = ExperimentSpec(name="determinism", market=market, replicas=2,
                              analyses=("degree",))
        a = run_experiment(spec, out_dir=str(tmp_path / "a"))
        b = run_experiment(spec, out_dir=str(tmp_path / "b"))
        same = all(
            open(os.path.join(da, "trades.csv"), "rb").read()
            == open(os.path.join(db, "trades.csv"), "rb").read()
            for da, db in zip(a.replica_dirs, b.replica_dirs))
        ok = report("8e", same,
                    "identical (spec, seed) -> byte-identical trades.csv twice")
        assert ok
