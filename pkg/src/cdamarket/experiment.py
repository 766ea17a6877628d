"""Experiment runner: replica ensembles, pooled analyses, plot-ready exports.

An experiment is a market config plus a replica count and a set of
analyses.  Replicas run with derived seeds (deterministic in the spec
file), each writing its own run directory; raw observations are pooled
across replicas before binning, and per-replica fits are kept alongside
the pooled fit so the ensemble spread stays visible.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import __version__
from .errors import CdaError, ConfigurationError, FitError
from .market import MarketConfig, replica_seed
from .engine import run
from .netgraph import (EXTRAMARGINAL, INTRAMARGINAL, build_network,
                       classify_marginal, degrees_by_class)
from .community import partition_anticommunities
from .stats import (excess_kurtosis, fit_power_law, ks_statistic,
                    linear_histogram, log_bin_histogram, log_returns,
                    normalize_returns, skewness, transaction_intervals)
from . import persist

ANALYSES = ("degree", "degree_by_class", "community", "intervals", "returns")
DEFAULT_RETURN_LAGS = (5, 20, 30, 1000)

# Reference exponents used as static annotation columns by `summarize`.
# The human-market comparison constants come from the study this suite's
# presets replicate against.
REFERENCE_EXPONENTS = {
    "degree": {"ZI": -0.51, "ZIP": None, "GD": None, "human_market": -2.14},
    "degree_extramarginal": {"ZI": None, "ZIP": -0.83, "GD": -0.78, "human_market": -2.14},
    "community_sizes": {"ZI": -1.36, "ZIP": -1.55, "GD": -1.50, "human_market": -1.2},
    "intervals": {"ZI": -1.36, "ZIP": -1.84, "GD": None, "human_market": -1.3},
}


@dataclass
class ExperimentSpec:
    """Everything needed to reproduce one experiment end to end."""

    name: str
    market: MarketConfig
    replicas: int = 10
    analyses: tuple[str, ...] = ("degree",)
    return_lags: tuple[int, ...] = DEFAULT_RETURN_LAGS
    fit_ranges: dict = field(default_factory=dict)
    output_dir: Optional[str] = None
    persist_shouts: bool = False
    bins_per_decade: int = 10

    def __post_init__(self):
        if self.replicas < 1:
            raise ConfigurationError(f"replicas must be >= 1: {self.replicas}")
        bad = [a for a in self.analyses if a not in ANALYSES]
        if bad:
            raise ConfigurationError(f"unknown analyses {bad}; expected from {ANALYSES}")
        self.analyses = tuple(self.analyses)
        self.return_lags = tuple(int(x) for x in self.return_lags)
        if any(t < 1 for t in self.return_lags):
            raise ConfigurationError(f"return lags must be >= 1: {self.return_lags}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "market": self.market.to_dict(),
            "replicas": self.replicas,
            "analyses": list(self.analyses),
            "return_lags": list(self.return_lags),
            "fit_ranges": {k: list(v) for k, v in self.fit_ranges.items()},
            "output_dir": self.output_dir,
            "persist_shouts": self.persist_shouts,
            "bins_per_decade": self.bins_per_decade,
        }

    def spec_hash(self) -> str:
        """Hash of everything that affects the experiment's outputs."""
        import hashlib
        import json as _json
        payload = self.to_dict()
        payload.pop("output_dir")
        blob = _json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        return cls(
            name=d["name"],
            market=MarketConfig.from_dict(d["market"]),
            replicas=int(d.get("replicas", 10)),
            analyses=tuple(d.get("analyses", ("degree",))),
            return_lags=tuple(d.get("return_lags", DEFAULT_RETURN_LAGS)),
            fit_ranges={k: tuple(v) for k, v in d.get("fit_ranges", {}).items()},
            output_dir=d.get("output_dir"),
            persist_shouts=bool(d.get("persist_shouts", False)),
            bins_per_decade=int(d.get("bins_per_decade", 10)),
        )


@dataclass
class ExperimentResult:
    name: str
    output_dir: str
    replica_dirs: list[str]
    fits: dict
    summary: dict
    skipped: dict


def _replica_payload(spec_dict: dict, index: int, out_root: str) -> dict:
    """Worker body: run one replica, write its directory, reduce to the
    small arrays the pooled analyses need."""
    spec = ExperimentSpec.from_dict(spec_dict)
    cfg = replace(spec.market, seed=replica_seed(spec.market.seed, index))
    log = run(cfg, record_shouts=spec.persist_shouts)
    rdir = os.path.join(out_root, f"run_{index:03d}")
    persist.save_log(log, rdir, write_shouts=spec.persist_shouts)

    t = log.trades
    p_eq = log.market.equilibrium_price
    payload = {
        "index": index,
        "seed": cfg.seed,
        "dir": rdir,
        "n_trades": len(t),
        "prices": t.price,
        "days": t.day,
        "p_eq": p_eq,
    }
    if len(t):
        first = t.price[t.day == t.day.min()]
        last = t.price[t.day == t.day.max()]
        payload["convergence"] = {
            "first_day_abs_dev": float(np.abs(first - p_eq).mean()),
            "last_day_abs_dev": float(np.abs(last - p_eq).mean()),
            "first_day_price_std": float(first.std()),
            "last_day_price_std": float(last.std()),
        }
    else:
        payload["convergence"] = None

    wants_network = {"degree", "degree_by_class", "community"} & set(spec.analyses)
    if wants_network:
        net = build_network(log)
        classes = classify_marginal(log.market)
        payload["nodes"] = net.n_nodes
        payload["edges"] = net.n_edges
        payload["degrees"] = net.degrees
        by = degrees_by_class(net, classes)
        payload["degrees_intra"] = by[INTRAMARGINAL]
        payload["degrees_extra"] = by[EXTRAMARGINAL]
        persist.write_network(os.path.join(rdir, "network.csv"), net.edges, net.multiplicity)
        persist.write_degrees(os.path.join(rdir, "degrees.csv"), net.nodes, net.degrees,
                              (classes.label(int(i)) for i in net.nodes))
        if "community" in spec.analyses:
            part = partition_anticommunities(net)
            payload["community_sizes"] = part.sizes
            persist.write_table(os.path.join(rdir, "communities.csv"),
                                ("trader_id", "community_id"),
                                (part.node_ids, part.labels))
            persist.write_table(os.path.join(rdir, "community_sizes.csv"),
                                ("community_id", "size"),
                                (np.arange(part.n_communities), part.sizes))
    if "intervals" in spec.analyses:
        iv = transaction_intervals(log)
        payload["intervals"] = iv
        persist.write_table(os.path.join(rdir, "intervals.csv"), ("interval",), (iv,))
    return payload


def _pooled_fit(name: str, values, spec: ExperimentSpec, fits: dict,
                skipped: dict, hist_dir: str, per_replica: list) -> None:
    """Log-bin pooled values, write the histogram, record the fit or the
    reason it is unavailable."""
    values = np.asarray(values)
    values = values[values > 0]
    if values.size == 0:
        skipped[name] = "no positive observations to bin"
        return
    hist = log_bin_histogram(values, spec.bins_per_decade)
    persist.write_histogram(os.path.join(hist_dir, f"hist_{name}.csv"), hist)
    fit_range = spec.fit_ranges.get(name)
    entry: dict = {}
    try:
        fit = fit_power_law(hist, fit_range)
        entry = fit.to_dict()
    except FitError as exc:
        skipped[name] = f"fit unavailable: {exc}"
        entry = {"unavailable": str(exc)}
    reps = []
    for values_i in per_replica:
        values_i = np.asarray(values_i)
        values_i = values_i[values_i > 0]
        if values_i.size == 0:
            reps.append(None)
            continue
        try:
            reps.append(fit_power_law(log_bin_histogram(values_i, spec.bins_per_decade),
                                      fit_range).to_dict())
        except FitError:
            reps.append(None)
    entry["per_replica"] = reps
    fits[name] = entry


def run_experiment(spec: ExperimentSpec, out_dir: Optional[str] = None,
                   threads: int = 1) -> ExperimentResult:
    """Run all replicas, pool, fit, and write the experiment directory.

    Deterministic for a given spec: re-running overwrites with identical
    bytes.  ``threads`` parallelizes replicas only; analyses of pooled
    data happen after all replicas finish, and each directory has a single
    writer.
    """
    out = out_dir or spec.output_dir or spec.name
    os.makedirs(out, exist_ok=True)
    persist.write_json(os.path.join(out, "experiment.json"), spec.to_dict())

    spec_dict = spec.to_dict()
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            payloads = list(pool.map(_replica_payload, [spec_dict] * spec.replicas,
                                     range(spec.replicas), [out] * spec.replicas))
    else:
        payloads = [_replica_payload(spec_dict, i, out) for i in range(spec.replicas)]

    fits: dict = {}
    skipped: dict = {}
    summary: dict = {
        "name": spec.name,
        "version": __version__,
        "config_hash": spec.market.config_hash(),
        "spec_hash": spec.spec_hash(),
        "model": spec.market.model,
        "replicas": spec.replicas,
        "analyses": list(spec.analyses),
        "per_replica": [
            {"index": p["index"], "seed": p["seed"], "dir": os.path.basename(p["dir"]),
             "n_trades": p["n_trades"],
             **({"nodes": p["nodes"], "edges": p["edges"]} if "nodes" in p else {})}
            for p in payloads
        ],
    }

    conv = [p["convergence"] for p in payloads if p["convergence"]]
    if conv:
        summary["convergence"] = {
            key: float(np.mean([c[key] for c in conv]))
            for key in conv[0]
        }
        fd = summary["convergence"]["first_day_abs_dev"]
        ld = summary["convergence"]["last_day_abs_dev"]
        summary["convergence"]["abs_dev_ratio"] = float(ld / fd) if fd > 0 else None
        fs = summary["convergence"]["first_day_price_std"]
        ls = summary["convergence"]["last_day_price_std"]
        summary["convergence"]["price_std_ratio"] = float(ls / fs) if fs > 0 else None

    if {"degree", "degree_by_class", "community"} & set(spec.analyses):
        summary["pooled"] = {
            "nodes": int(sum(p["nodes"] for p in payloads)),
            "edges": int(sum(p["edges"] for p in payloads)),
            "mean_degree": float(np.concatenate(
                [p["degrees"] for p in payloads]).mean()) if any(
                    p["nodes"] for p in payloads) else 0.0,
        }

    if "degree" in spec.analyses:
        _pooled_fit("degree", np.concatenate([p["degrees"] for p in payloads]),
                    spec, fits, skipped, out, [p["degrees"] for p in payloads])

    if "degree_by_class" in spec.analyses:
        intra = [p["degrees_intra"] for p in payloads]
        extra = [p["degrees_extra"] for p in payloads]
        _pooled_fit("degree_extramarginal", np.concatenate(extra), spec, fits,
                    skipped, out, extra)
        pooled_intra = np.concatenate(intra)
        if pooled_intra.size:
            hist = log_bin_histogram(pooled_intra, spec.bins_per_decade)
            persist.write_histogram(os.path.join(out, "hist_degree_intramarginal.csv"), hist)
            # Bump diagnostics: ensemble averages of per-replica mode and
            # extramarginal 95th percentile.
            modes = [float(np.argmax(np.bincount(d))) for d in intra if len(d)]
            p95s = [float(np.percentile(d, 95)) for d in extra if len(d)]
            summary["bump"] = {
                "intra_mode_mean": float(np.mean(modes)) if modes else None,
                "extra_p95_mean": float(np.mean(p95s)) if p95s else None,
                "intra_skewness": float(skewness(pooled_intra)) if pooled_intra.size >= 3 else None,
                "bimodal": bool(np.mean(modes) > np.mean(p95s)) if modes and p95s else None,
            }

    if "community" in spec.analyses:
        sizes = [p["community_sizes"] for p in payloads]
        _pooled_fit("community_sizes", np.concatenate(sizes), spec, fits,
                    skipped, out, sizes)

    if "intervals" in spec.analyses:
        if spec.market.model == "GD" and spec.market.gd_forced_trade:
            skipped["intervals"] = ("forced-trade GD transacts on every step; "
                                    "no transaction time interval is defined")
        else:
            iv = [p["intervals"] for p in payloads]
            pooled = np.concatenate(iv) if iv else np.empty(0)
            if pooled.size == 0:
                skipped["intervals"] = "fewer than 2 trades in every replica"
            else:
                _pooled_fit("intervals", pooled, spec, fits, skipped, out, iv)

    if "returns" in spec.analyses:
        by_lag: dict = {}
        edges = np.linspace(-10.0, 10.0, 201)
        # series[i][tau] for replica i; None where the lag is infeasible
        series_all = []
        for p in payloads:
            per_tau = {}
            for tau in spec.return_lags:
                try:
                    per_tau[tau] = normalize_returns(log_returns(p["prices"], tau))
                except CdaError:
                    per_tau[tau] = None
            series_all.append(per_tau)
        for tau in spec.return_lags:
            usable = [s[tau] for s in series_all if s[tau] is not None]
            if not usable:
                by_lag[str(tau)] = {"skipped": f"lag {tau} infeasible in all replicas"}
                continue
            kurts = [excess_kurtosis(s.normalized) for s in usable]
            g = np.concatenate([s.normalized for s in usable])
            persist.write_histogram(os.path.join(out, f"hist_returns_tau{tau}.csv"),
                                    linear_histogram(g[(g >= -10) & (g <= 10)], edges))
            by_lag[str(tau)] = {
                "excess_kurtosis_mean": float(np.mean(kurts)),
                "excess_kurtosis_per_replica": [float(k) for k in kurts],
                "n_replicas_used": len(usable),
                "n_skipped": len(series_all) - len(usable),
            }
        for p, per_tau in zip(payloads, series_all):
            _write_returns(os.path.join(p["dir"], "returns.csv"), spec.return_lags, per_tau)
        # ensemble-averaged pairwise KS between normalized return samples
        ks: dict = {}
        lags = list(spec.return_lags)
        for i, a in enumerate(lags):
            for b in lags[i + 1:]:
                vals = [ks_statistic(s[a].normalized, s[b].normalized)
                        for s in series_all if s[a] is not None and s[b] is not None]
                if vals:
                    ks[f"{a}-{b}"] = float(np.mean(vals))
        summary["returns"] = {"by_lag": by_lag, "ks_mean": ks}

    summary["fits"] = fits
    summary["skipped"] = skipped
    persist.write_fits(os.path.join(out, "fits.json"), fits)
    persist.write_json(os.path.join(out, "summary.json"), summary)
    return ExperimentResult(name=spec.name, output_dir=out,
                            replica_dirs=[p["dir"] for p in payloads],
                            fits=fits, summary=summary, skipped=skipped)


def _write_returns(path: str, lags, per_tau: dict) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("t,tau,G,g\n")
        for tau in lags:
            series = per_tau.get(tau)
            if series is None:
                continue
            raw = series.raw
            norm = series.normalized
            for t in range(len(raw)):
                fh.write(f"{t},{tau},{raw[t]!r},{norm[t]!r}\n")


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

# The 200-day presets per model share one market seed, so the degree,
# community and returns presets of a model analyze the same deterministic
# run family (replica logs are byte-identical across them).
_PRESET_SEEDS = {
    "paper-degree-zi": 101, "paper-degree-zip": 102, "paper-degree-gd": 103,
    "paper-degree-1000d-zi": 111, "paper-degree-1000d-zip": 112, "paper-degree-1000d-gd": 113,
    "paper-community-zi": 101, "paper-community-zip": 102, "paper-community-gd": 103,
    "paper-intervals-zi": 131, "paper-intervals-zip": 132,
    "paper-returns-zi": 101, "paper-returns-zip": 102, "paper-returns-gd": 103,
}

# Pre-roll-off fit windows chosen per experiment from the pooled
# histograms: the low end starts past the bins distorted by integer
# binning (and, for degrees, past the small-degree regime of one-off
# traders), the high end stops before the finite-size roll-off knee.
_FIT_RANGES = {
    "paper-degree-zi": {"degree": (6.0, 60.0)},
    "paper-degree-zip": {"degree_extramarginal": (2.0, 40.0)},
    "paper-degree-gd": {},
    "paper-degree-1000d-zi": {"degree": (6.0, 250.0)},
    "paper-degree-1000d-zip": {"degree_extramarginal": (2.0, 200.0)},
    "paper-degree-1000d-gd": {"degree_extramarginal": (1.0, 50.0)},
    "paper-intervals-zi": {"intervals": (4.0, 30000.0)},
    "paper-intervals-zip": {"intervals": (4.0, 30000.0)},
}


def _model_of(name: str) -> str:
    return name.rsplit("-", 1)[1].upper()


def presets() -> list[ExperimentSpec]:
    """The shipped experiment designs (paper-scale study layouts)."""
    out = []
    for name, seed in _PRESET_SEEDS.items():
        model = _model_of(name)
        if "intervals" in name:
            market = MarketConfig(n_traders=2500, rounds_per_day=1_000_000,
                                  n_days=1, seed=seed, model=model)
            spec = ExperimentSpec(name=name, market=market, replicas=30,
                                  analyses=("intervals",),
                                  fit_ranges=_FIT_RANGES.get(name, {}))
        else:
            days = 1000 if "1000d" in name else 200
            market = MarketConfig(n_traders=2500, rounds_per_day=2000,
                                  n_days=days, seed=seed, model=model)
            if "community" in name:
                analyses: tuple[str, ...] = ("community",)
            elif "returns" in name:
                analyses = ("returns",)
            else:
                analyses = ("degree", "degree_by_class")
            # 1000-day runs are 5x the steps; five replicas keep the
            # longest designs desk-feasible at the wide tolerances they
            # are compared against.
            replicas = 5 if "1000d" in name else 10
            spec = ExperimentSpec(name=name, market=market, replicas=replicas,
                                  analyses=analyses,
                                  fit_ranges=_FIT_RANGES.get(name, {}))
        out.append(spec)
    return out


def get_preset(name: str) -> ExperimentSpec:
    for spec in presets():
        if spec.name == name:
            return spec
    raise ConfigurationError(f"unknown preset {name!r}; "
                             f"available: {', '.join(_PRESET_SEEDS)}")


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def summarize(result_dirs: list[str]) -> list[dict]:
    """Merge fits.json/summary.json files into comparison-table rows."""
    rows = []
    for d in result_dirs:
        summary_path = os.path.join(d, "summary.json")
        fits_path = os.path.join(d, "fits.json")
        if not os.path.exists(fits_path):
            rows.append({"experiment": os.path.basename(os.path.normpath(d)),
                         "model": "?", "observable": "?",
                         "exponent": None, "stderr": None, "r_squared": None,
                         "reference": None, "note": "unavailable: no fits.json"})
            continue
        fits = persist.read_json(fits_path)
        model = "?"
        name = os.path.basename(os.path.normpath(d))
        if os.path.exists(summary_path):
            s = persist.read_json(summary_path)
            model = s.get("model", "?")
            name = s.get("name", name)
        if not fits:
            rows.append({"experiment": name, "model": model, "observable": "?",
                         "exponent": None, "stderr": None, "r_squared": None,
                         "reference": None, "note": "unavailable: no fits recorded"})
        for observable, fit in sorted(fits.items()):
            ref = REFERENCE_EXPONENTS.get(observable, {})
            row = {
                "experiment": name,
                "model": model,
                "observable": observable,
                "exponent": fit.get("exponent"),
                "stderr": fit.get("stderr"),
                "r_squared": fit.get("r_squared"),
                "reference": ref.get(model),
                "reference_human_market": ref.get("human_market"),
            }
            if "unavailable" in fit:
                row["note"] = f"unavailable: {fit['unavailable']}"
            rows.append(row)
    return rows


def format_summary_table(rows: list[dict]) -> str:
    if not rows:
        return "(no results)\n"
    headers = ["experiment", "model", "observable", "exponent", "stderr",
               "r_squared", "reference", "reference_human_market", "note"]
    def cell(row, h):
        v = row.get(h)
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.3f}"
        return str(v)
    table = [[cell(r, h) for h in headers] for r in rows]
    widths = [max(len(h), *(len(t[i]) for t in table)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for t in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(t, widths)))
    return "\n".join(lines) + "\n"
