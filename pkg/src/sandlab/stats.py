"""Avalanche-size statistics.

Log-binned normalized densities, discrete power-law fits by maximum
likelihood (zeta-function normalization, Clauset-style KS selection of the
lower cutoff), rescaling-collapse distances between densities, and the
power-law window detector that operationalizes "bandwidth" as decades of
scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import zeta

from .errors import DataError

DEFAULT_BASE = 10.0 ** 0.1  # ten bins per decade

MIN_TAIL_SAMPLES = 50

_GAMMA_LO = 1.000001
_GAMMA_HI = 20.0


@dataclass
class LogHistogram:
    """Normalized density on logarithmic bins.

    Edges sit at integer powers of `base`, so histograms of different
    samples share a global grid; density integrates to one over the bins.
    """

    base: float
    edges: np.ndarray
    counts: np.ndarray
    total: int
    density: np.ndarray

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        """Geometric bin centers."""
        return np.sqrt(self.edges[:-1] * self.edges[1:])

    def occupied(self) -> np.ndarray:
        return self.counts > 0

    def log10_curve(self) -> tuple[np.ndarray, np.ndarray]:
        """(log10 center, log10 density) over occupied bins."""
        occ = self.occupied()
        return (np.log10(self.centers[occ]),
                np.log10(self.density[occ]))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("bin_lo,bin_hi,count,density\n")
            for lo, hi, n, d in zip(self.edges.tolist(),
                                    self.edges[1:].tolist(),
                                    self.counts.tolist(),
                                    self.density.tolist()):
                fh.write(f"{lo!r},{hi!r},{n},{d!r}\n")

    @classmethod
    def from_csv(cls, path, base: float = DEFAULT_BASE) -> "LogHistogram":
        lo, hi, counts = [], [], []
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("bin_lo"):
                raise DataError(f"{path}: not a histogram CSV")
            for line in fh:
                if not line.strip():
                    continue
                a, b, n, _ = line.split(",")
                lo.append(float(a))
                hi.append(float(b))
                counts.append(int(n))
        if not lo:
            raise DataError(f"{path}: empty histogram")
        edges = np.asarray(lo + [hi[-1]], dtype=float)
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        density = counts / (total * np.diff(edges))
        return cls(base=base, edges=edges, counts=counts, total=total,
                   density=density)


def build_histogram(sizes, base: float = DEFAULT_BASE) -> LogHistogram:
    """Log-binned normalized density of avalanche sizes (integers >= 1)."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size == 0:
        raise DataError("no avalanches")
    if sizes.min() < 1:
        raise DataError("sizes must be >= 1 (exclude empty events upstream)")
    if not base > 1.0:
        raise DataError(f"base must be > 1, got {base}")
    log_base = math.log(base)
    smin = int(sizes.min())
    smax = int(sizes.max())
    k_lo = math.floor(math.log(smin) / log_base)
    k_hi = math.floor(math.log(smax) / log_base) + 1
    while base ** k_lo > smin:
        k_lo -= 1
    while base ** k_hi <= smax:
        k_hi += 1
    edges = base ** np.arange(k_lo, k_hi + 1, dtype=float)
    counts, _ = np.histogram(sizes, bins=edges)
    counts = counts.astype(np.int64)
    total = int(counts.sum())
    density = counts / (total * np.diff(edges))
    return LogHistogram(base=float(base), edges=edges, counts=counts,
                        total=total, density=density)


@dataclass
class PowerLawFit:
    """Discrete MLE of P(S) ~ S^-gamma on [s_min, s_max]."""

    gamma: float
    s_min: int
    s_max: int
    ks_distance: float
    n_tail: int

    @property
    def stderr(self) -> float:
        """Large-n standard error of the exponent."""
        return (self.gamma - 1.0) / math.sqrt(self.n_tail)


def _discrete_norm(gamma: float, s_min: int, s_max: int) -> float:
    """Sum of s^-gamma over [s_min, s_max] via Hurwitz zeta."""
    return float(zeta(gamma, s_min) - zeta(gamma, s_max + 1))


def _fit_discrete_gamma(tail: np.ndarray, s_min: int, s_max: int) -> float:
    n = tail.size
    sum_log = float(np.log(tail).sum())

    def nll(g):
        return g * sum_log + n * math.log(_discrete_norm(g, s_min, s_max))

    res = minimize_scalar(nll, bounds=(_GAMMA_LO, _GAMMA_HI),
                          method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def _ks_discrete(tail: np.ndarray, gamma: float, s_min: int,
                 s_max: int) -> float:
    values, counts = np.unique(tail, return_counts=True)
    ecdf = np.cumsum(counts) / tail.size
    norm = _discrete_norm(gamma, s_min, s_max)
    # model CDF at each observed value: P(S <= v)
    upper = zeta(gamma, values + 1) - zeta(gamma, s_max + 1)
    cdf = 1.0 - upper / norm
    return float(np.abs(ecdf - cdf).max())


def fit_power_law(sizes, s_min: Optional[int] = None,
                  s_max: Optional[int] = None,
                  max_candidates: int = 64) -> PowerLawFit:
    """Discrete maximum-likelihood power-law fit.

    s_min=None selects the lower cutoff by minimizing the KS distance
    between the empirical tail and the fitted model over candidate cutoffs
    (log-spaced among observed values); an integer fixes it.  s_max
    defaults to the largest observed size.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size == 0:
        raise DataError("no avalanches")
    if sizes.min() < 1:
        raise DataError("sizes must be >= 1")
    smax_all = int(sizes.max())
    s_max_eff = smax_all if s_max is None else int(s_max)

    if s_min is not None:
        return _fit_at(sizes, int(s_min), s_max_eff)

    values = np.unique(sizes)
    values = values[values < s_max_eff]
    # candidates must leave a workable tail
    n_at_least = sizes.size - np.searchsorted(np.sort(sizes), values,
                                              side="left")
    values = values[n_at_least >= MIN_TAIL_SAMPLES]
    if values.size == 0:
        raise DataError(
            f"too few tail samples: no cutoff leaves >= {MIN_TAIL_SAMPLES} "
            f"of {sizes.size} samples")
    if values.size > max_candidates:
        picks = np.geomspace(values[0], values[-1], max_candidates)
        idx = np.unique(np.searchsorted(values, picks, side="left"))
        idx = idx[idx < values.size]
        values = values[idx]
    best: Optional[PowerLawFit] = None
    for v in values:
        fit = _fit_at(sizes, int(v), s_max_eff)
        if best is None or fit.ks_distance < best.ks_distance:
            best = fit
    return best


def _fit_at(sizes: np.ndarray, s_min: int, s_max: int) -> PowerLawFit:
    if s_min < 1:
        raise DataError(f"s_min must be >= 1, got {s_min}")
    if s_max <= s_min:
        raise DataError(f"need s_max > s_min, got [{s_min}, {s_max}]")
    tail = sizes[(sizes >= s_min) & (sizes <= s_max)]
    if tail.size < MIN_TAIL_SAMPLES:
        raise DataError(
            f"too few tail samples: {tail.size} at s_min={s_min} "
            f"(need >= {MIN_TAIL_SAMPLES})")
    if int(tail.min()) == int(tail.max()):
        raise DataError("no dynamic range")
    gamma = _fit_discrete_gamma(tail, s_min, s_max)
    ks = _ks_discrete(tail, gamma, s_min, s_max)
    return PowerLawFit(gamma=gamma, s_min=s_min, s_max=s_max,
                       ks_distance=ks, n_tail=int(tail.size))


def fit_power_law_continuous(values, x_min: float,
                             x_max: Optional[float] = None) -> float:
    """Continuous power-law MLE for real-valued (e.g. rescaled) samples.

    Unbounded support has the closed form 1 + n / sum(log(x/x_min)) and is
    exactly scale covariant; a finite x_max uses the bounded likelihood.
    """
    x = np.asarray(values, dtype=float)
    x = x[x >= x_min]
    if x.size < MIN_TAIL_SAMPLES:
        raise DataError(f"too few tail samples: {x.size}")
    log_ratio = np.log(x / x_min)
    if log_ratio.sum() == 0:
        raise DataError("no dynamic range")
    if x_max is None:
        return 1.0 + x.size / float(log_ratio.sum())
    sum_log = float(np.log(x).sum())
    n = x.size
    ratio = x_max / x_min

    def nll(g):
        if abs(g - 1.0) < 1e-12:
            norm = math.log(ratio)
        else:
            norm = (x_min ** (1.0 - g) - x_max ** (1.0 - g)) / (g - 1.0)
        return g * sum_log + n * math.log(norm)

    res = minimize_scalar(nll, bounds=(0.01, _GAMMA_HI), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x)


@dataclass
class CollapseReport:
    """Sup-norm distance between two log-densities after rescaling."""

    scale_factor: float
    overlap_lo: float
    overlap_hi: float
    distance: float
    decades_compared: float


def rescale_and_compare(hist_ref: LogHistogram, hist_test: LogHistogram,
                        scale_factor: float,
                        window: Optional[tuple[float, float]] = None,
                        grid_points: int = 512) -> CollapseReport:
    """Distance between hist_ref and hist_test with sizes divided by
    scale_factor, over their common log range (optionally clipped to
    `window`, a (lo, hi) pair in log10 size units).

    Rescaling divides abscissae by the factor and multiplies density by it,
    so an exact self-affine copy collapses to distance zero.  Both curves
    are interpolated in log-log space onto a shared grid; the distance is
    the max absolute difference of log10 densities.
    """
    if not scale_factor > 0:
        raise DataError(f"scale_factor must be > 0, got {scale_factor}")
    x1, y1 = hist_ref.log10_curve()
    x2, y2 = hist_test.log10_curve()
    if x1.size == 0 or x2.size == 0:
        raise DataError("empty histogram")
    shift = math.log10(scale_factor)
    x2 = x2 - shift
    y2 = y2 + shift
    lo = max(x1[0], x2[0])
    hi = min(x1[-1], x2[-1])
    if window is not None:
        lo = max(lo, window[0])
        hi = min(hi, window[1])
    if not hi > lo:
        raise DataError(
            f"no overlap between curves after rescaling by {scale_factor} "
            f"(window {window})")
    grid = np.linspace(lo, hi, grid_points)
    d1 = np.interp(grid, x1, y1)
    d2 = np.interp(grid, x2, y2)
    distance = float(np.abs(d1 - d2).max())
    return CollapseReport(scale_factor=float(scale_factor), overlap_lo=lo,
                          overlap_hi=hi, distance=distance,
                          decades_compared=hi - lo)


@dataclass
class PowerLawWindow:
    """Maximal contiguous log range where the local slope tracks -gamma."""

    lo_log10: float
    hi_log10: float

    @property
    def decades(self) -> float:
        return self.hi_log10 - self.lo_log10


def power_law_window(hist: LogHistogram, gamma: float,
                     slope_tol: float = 0.15,
                     smooth_bins: int = 5) -> Optional[PowerLawWindow]:
    """Detect the scaling window of a log-binned density.

    Local slopes come from least-squares lines over `smooth_bins`
    consecutive occupied bins; the window is the longest contiguous run of
    bins whose local slope stays within slope_tol of -gamma.  Returns None
    when fewer than smooth_bins bins are occupied or no bin qualifies.
    """
    if smooth_bins < 2:
        raise DataError("smooth_bins must be >= 2")
    x, y = hist.log10_curve()
    if x.size < smooth_bins:
        return None
    half = smooth_bins // 2
    n = x.size
    ok = np.zeros(n, dtype=bool)
    for i in range(n):
        a = max(0, min(i - half, n - smooth_bins))
        xs = x[a:a + smooth_bins]
        ys = y[a:a + smooth_bins]
        xbar = xs.mean()
        denom = ((xs - xbar) ** 2).sum()
        slope = ((xs - xbar) * ys).sum() / denom
        ok[i] = abs(slope - (-gamma)) <= slope_tol
    best_len = -1.0
    best: Optional[PowerLawWindow] = None
    i = 0
    while i < n:
        if not ok[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and ok[j + 1]:
            j += 1
        span = x[j] - x[i]
        if span > best_len:
            best_len = span
            best = PowerLawWindow(lo_log10=float(x[i]), hi_log10=float(x[j]))
        i = j + 1
    return best


def sample_power_law_sizes(gamma: float, n: int, s_min: int = 1,
                           s_max: int = 10**6, seed: int = 0) -> np.ndarray:
    """Synthetic integer sample from P(S) ~ S^-gamma on [s_min, s_max]
    by inverse transform on the exact discrete CDF."""
    if s_max <= s_min:
        raise DataError("need s_max > s_min")
    support = np.arange(s_min, s_max + 1, dtype=np.int64)
    weights = support.astype(float) ** -gamma
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random(n)
    idx = np.searchsorted(cdf, u, side="left")
    return support[idx]
