"""Distribution statistics: intervals, log returns, histograms, power-law fits.

Conventions fixed here: natural log in return definitions, population
(n-denominator) standard deviations, geometric bin centers for log-binned
histograms and arithmetic centers for linear ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (DegenerateSeriesError, DomainError, FitError,
                     InsufficientDataError)
from .market import TradeLog


@dataclass
class Histogram:
    """Binned empirical distribution.

    ``edges`` has one more entry than ``counts``; densities are
    count / (total * bin width) so density times width sums to one.
    """

    edges: np.ndarray
    counts: np.ndarray
    kind: str = "linear"  # "linear" or "log"

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.edges) not in (0, len(self.counts) + 1):
            raise DomainError("edges must be one longer than counts")
        if len(self.edges) > 1 and not np.all(np.diff(self.edges) > 0):
            raise DomainError("edges must be strictly increasing")

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        if self.kind == "log":
            return np.sqrt(self.edges[:-1] * self.edges[1:])
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def densities(self) -> np.ndarray:
        total = self.total
        if total == 0:
            return np.zeros(len(self.counts))
        return self.counts / (total * self.widths)

    def value_counts(self) -> dict[int, int]:
        """Mapping value -> count; valid for unit-width integer histograms."""
        out = {}
        for c, n in zip(self.centers, self.counts):
            if n > 0:
                out[int(round(c))] = int(n)
        return out


def integer_histogram(values) -> Histogram:
    """Unit-width bins centered on each integer between min and max."""
    v = np.asarray(values)
    if v.size == 0:
        return Histogram(np.empty(0), np.empty(0, dtype=np.int64))
    lo = int(v.min())
    hi = int(v.max())
    edges = np.arange(lo, hi + 2, dtype=np.float64) - 0.5
    counts = np.bincount(v.astype(np.int64) - lo, minlength=hi - lo + 1)
    return Histogram(edges, counts, kind="linear")


def log_bin_histogram(values, bins_per_decade: int = 10) -> Histogram:
    """Geometric bins covering [min, max] at the given resolution.

    All values must be strictly positive; an empty input yields an empty
    histogram.
    """
    if bins_per_decade < 1:
        raise DomainError(f"bins_per_decade must be >= 1: {bins_per_decade}")
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return Histogram(np.empty(0), np.empty(0, dtype=np.int64), kind="log")
    if np.any(v <= 0):
        raise DomainError("log binning requires strictly positive values")
    vmin = float(v.min())
    vmax = float(v.max())
    ratio = 10.0 ** (1.0 / bins_per_decade)
    if vmin == vmax:
        edges = np.array([vmin, vmin * ratio])
    else:
        n_bins = max(1, int(math.ceil(math.log10(vmax / vmin) * bins_per_decade)))
        edges = vmin * ratio ** np.arange(n_bins + 1)
        while edges[-1] < vmax:  # float guard: cover the max value
            edges = np.append(edges, edges[-1] * ratio)
    counts, _ = np.histogram(v, bins=edges)
    return Histogram(edges, counts, kind="log")


def linear_histogram(values, edges) -> Histogram:
    """Fixed linear binning (plot-ready densities for return distributions)."""
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=edges)
    return Histogram(np.asarray(edges, dtype=np.float64), counts, kind="linear")


@dataclass
class PowerLawFit:
    """Least-squares slope of log10 density against log10 bin center."""

    exponent: float
    stderr: float
    r_squared: float
    fit_range: tuple[float, float]
    n_bins: int

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "stderr": self.stderr,
            "r_squared": self.r_squared,
            "fit_range": list(self.fit_range),
            "n_bins": self.n_bins,
        }


def fit_power_law(hist: Histogram,
                  fit_range: Optional[tuple[float, float]] = None) -> PowerLawFit:
    """OLS fit over nonempty bins whose centers lie inside ``fit_range``.

    Needs at least three usable bins.  The recorded range is the one
    requested, or the span of used centers when none was given.
    """
    centers = hist.centers
    dens = hist.densities
    keep = hist.counts > 0
    if fit_range is not None:
        lo, hi = fit_range
        keep &= (centers >= lo) & (centers <= hi)
    x = np.log10(centers[keep])
    y = np.log10(dens[keep])
    n = len(x)
    if n < 3:
        raise FitError(f"power-law fit needs >= 3 nonempty bins in range, got {n}")
    xbar = x.mean()
    ybar = y.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx == 0.0:
        raise FitError("degenerate fit: all bin centers coincide")
    slope = float(np.sum((x - xbar) * (y - ybar)) / sxx)
    resid = y - (ybar + slope * (x - xbar))
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - ybar) ** 2))
    stderr = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else 0.0
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    if fit_range is None:
        used = centers[keep]
        fit_range = (float(used.min()), float(used.max()))
    return PowerLawFit(exponent=slope, stderr=stderr, r_squared=r2,
                       fit_range=(float(fit_range[0]), float(fit_range[1])),
                       n_bins=n)


# ---------------------------------------------------------------------------
# Transaction timing and returns
# ---------------------------------------------------------------------------

def transaction_intervals(log: TradeLog) -> np.ndarray:
    """Monte Carlo steps between consecutive trades (empty if < 2 trades)."""
    steps = log.trades.step
    if len(steps) < 2:
        return np.empty(0, dtype=np.int64)
    return np.diff(steps)


@dataclass
class ReturnSeries:
    """Lagged log-price differences, optionally standardized."""

    tau: int
    raw: np.ndarray
    normalized: Optional[np.ndarray] = None
    mu_tau: Optional[float] = None
    sigma_tau: Optional[float] = None


def log_returns(prices: Sequence[float], tau: int) -> ReturnSeries:
    """Natural-log return at lag ``tau`` over a transaction-time price series."""
    if tau < 1:
        raise DomainError(f"lag must be >= 1: {tau}")
    p = np.asarray(prices, dtype=np.float64)
    if np.any(p <= 0):
        raise DomainError("log returns need strictly positive prices")
    if len(p) <= tau:
        raise InsufficientDataError(
            f"need more than {tau} prices for lag {tau}, got {len(p)}")
    logp = np.log(p)
    return ReturnSeries(tau=tau, raw=logp[tau:] - logp[:-tau])


def normalize_returns(series: ReturnSeries) -> ReturnSeries:
    """Standardize by the raw series' own mean and population std."""
    raw = series.raw
    mu = float(raw.mean())
    sigma = float(raw.std())  # population denominator
    if sigma == 0.0:
        raise DegenerateSeriesError("return series has zero variance")
    return ReturnSeries(tau=series.tau, raw=raw, normalized=(raw - mu) / sigma,
                        mu_tau=mu, sigma_tau=sigma)


@dataclass
class GaussianFit:
    mu: float
    sigma: float
    grid: np.ndarray
    density: np.ndarray


def gaussian_fit(samples, grid_points: int = 201) -> GaussianFit:
    """Maximum-likelihood normal fit with the density evaluated on a grid."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 2:
        raise InsufficientDataError("gaussian fit needs >= 2 samples")
    mu = float(x.mean())
    sigma = float(x.std())
    if sigma == 0.0:
        raise DegenerateSeriesError("gaussian fit needs nonzero variance")
    grid = np.linspace(float(x.min()), float(x.max()), grid_points)
    density = np.exp(-0.5 * ((grid - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    return GaussianFit(mu=mu, sigma=sigma, grid=grid, density=density)


def excess_kurtosis(samples) -> float:
    """Fourth standardized moment minus 3 (population moments)."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 4:
        raise InsufficientDataError("excess kurtosis needs >= 4 samples")
    c = x - x.mean()
    m2 = float(np.mean(c ** 2))
    if m2 == 0.0:
        raise DegenerateSeriesError("excess kurtosis needs nonzero variance")
    return float(np.mean(c ** 4) / m2 ** 2 - 3.0)


def skewness(samples) -> float:
    """Third standardized moment (population form)."""
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < 3:
        raise InsufficientDataError("skewness needs >= 3 samples")
    c = x - x.mean()
    m2 = float(np.mean(c ** 2))
    if m2 == 0.0:
        raise DegenerateSeriesError("skewness needs nonzero variance")
    return float(np.mean(c ** 3) / m2 ** 1.5)


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (max ECDF distance)."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise InsufficientDataError("KS statistic needs nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, "right") / len(a)
    fb = np.searchsorted(b, grid, "right") / len(b)
    return float(np.abs(fa - fb).max())
