"""Experiment orchestration: steady-state detection, measurement runs,
drive-comparison and joint-rescaling collapses, and drive sweeps.

A run drives a lattice until the stored-grain series flattens (transient),
then collects a target number of avalanches and reduces them to a
normalized size density, a power-law fit, and a scaling-window bandwidth.
Sweeps run one lattice per worker process with seeds derived from the base
seed, so aggregation is deterministic regardless of completion order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dimensional import (DriveRegime, avalanche_relations,
                          classify_drive_regime, regime_order)
from .errors import ConfigError, DataError, TransientNotConverged
from .rng import SplitMix64
from .sandpile import (Boundaries, Boundary, DriveSpec, Lattice, RecordBatch,
                       new_lattice, run)
from .stats import (CollapseReport, LogHistogram, PowerLawFit,
                    build_histogram, fit_power_law, power_law_window,
                    rescale_and_compare)

FIT_MIN_TARGET = 1000


def corner_drain_boundaries() -> Boundaries:
    """North and west closed (drive corner), south and east open (drain)."""
    return Boundaries(north=Boundary.CLOSED, east=Boundary.OPEN,
                      south=Boundary.OPEN, west=Boundary.CLOSED)


@dataclass
class ExperimentConfig:
    side: int = 100
    threshold: int = 4
    boundaries: Boundaries = field(default_factory=corner_drain_boundaries)
    grains_per_event: int = 4
    site_policy: str = "corner"
    region_extent: int = 1
    event_probability: float = 1.0
    seed: int = 1
    target_avalanches: int = 1_000_000
    transient_window: Optional[int] = None  # None: 10 * side**2 timesteps
    transient_slope_tol: float = 1e-4
    max_transient_timesteps: int = 50_000_000
    min_measure_timesteps: int = 0
    decade_bins: int = 10
    window_slope_tol: float = 0.15
    keep_records: bool = False
    audit: bool = False
    backend: Optional[str] = None

    def __post_init__(self):
        if self.target_avalanches < 1:
            raise ConfigError("target_avalanches must be >= 1")
        if self.decade_bins < 1:
            raise ConfigError("decade_bins must be >= 1")
        if self.transient_window is not None and self.transient_window < 2:
            raise ConfigError("transient_window must be >= 2")
        if not (self.transient_slope_tol > 0):
            raise ConfigError("transient_slope_tol must be > 0")

    @property
    def histogram_base(self) -> float:
        return 10.0 ** (1.0 / self.decade_bins)

    def effective_window(self) -> int:
        return (self.transient_window if self.transient_window is not None
                else 10 * self.side ** 2)

    def drive_spec(self) -> DriveSpec:
        return DriveSpec(grains_per_event=self.grains_per_event,
                         site_policy=self.site_policy,
                         region_extent=self.region_extent,
                         event_probability=self.event_probability)

    def make_lattice(self) -> Lattice:
        return new_lattice(self.side, self.threshold, self.boundaries,
                           self.backend)

    def echo(self) -> dict:
        d = asdict(self)
        d["boundaries"] = self.boundaries.as_text()
        return d


@dataclass
class RunSummary:
    config: dict
    backend: str
    steady_state_reached_at: int
    measurement_start: int
    measurement_timesteps: int
    n_avalanches: int
    n_drive_events: int
    eps_inj: float
    eps_diss: float
    flux_imbalance: float
    r_a_configured: float
    r_a_measured: float
    ledger_grains_in: int
    ledger_grains_out: int
    ledger_stored: int
    ledger_timesteps: int
    audit_violations: int
    fit: Optional[PowerLawFit]
    fit_error: Optional[str]
    window_lo: Optional[float]
    window_hi: Optional[float]
    bandwidth_decades: Optional[float]
    histogram_bins: int

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.fit is not None:
            d["fit"] = asdict(self.fit)
        return d


@dataclass
class ExperimentResult:
    summary: RunSummary
    histogram: LogHistogram
    sizes: np.ndarray
    records: Optional[RecordBatch]


def _window_slope(y: np.ndarray, window: int) -> np.ndarray:
    """Least-squares slope of every length-`window` window of y, normalized
    by the window mean (vectorized, exact formulas)."""
    n = y.size
    w = window
    m = n - w + 1
    p1 = np.concatenate(([0.0], np.cumsum(y)))
    xg = np.arange(n, dtype=float)
    p2 = np.concatenate(([0.0], np.cumsum(xg * y)))
    t = np.arange(m, dtype=float)
    sy = p1[w:] - p1[:m]
    sxy = p2[w:] - p2[:m]
    # centered x: sum (j - t - (w-1)/2) * y[j]
    sxy_c = sxy - (t + (w - 1) / 2.0) * sy
    denom = w * (w * w - 1.0) / 12.0
    slope = sxy_c / denom
    mean = sy / w
    out = np.empty(m)
    nz = mean > 0
    out[nz] = np.abs(slope[nz]) / mean[nz]
    out[~nz] = np.where(slope[~nz] == 0.0, 0.0, np.inf)
    return out


def detect_steady_state(stored_series, window: int, slope_tol: float) -> int:
    """Earliest timestep t where the normalized least-squares slope of the
    stored-grain series over [t, t+window) drops below slope_tol."""
    y = np.asarray(stored_series, dtype=float)
    if window < 2:
        raise ConfigError("window must be >= 2")
    if y.size < 2 * window:
        raise DataError(
            f"series length {y.size} < 2*window = {2 * window}")
    # scan in blocks to bound memory on long series
    block = max(window, 1 << 18)
    last = math.inf
    for a in range(0, y.size - window + 1, block):
        b = min(a + block + window - 1, y.size)
        slopes = _window_slope(y[a:b], window)
        hits = np.nonzero(slopes < slope_tol)[0]
        if hits.size:
            return a + int(hits[0])
        last = float(slopes[-1])
    raise TransientNotConverged(
        f"transient not converged within {y.size} timesteps "
        f"(final normalized slope {last:.3e}, tol {slope_tol:.3e})",
        final_slope=last)


class _SteadyScanner:
    """Incremental earliest-t steady-state scan over a growing series."""

    def __init__(self, window: int, slope_tol: float):
        self.window = window
        self.slope_tol = slope_tol
        self.scan_t = 0  # global index of first unevaluated t
        self._tail = np.empty(0, dtype=np.int64)
        self.last_slope = math.inf

    def feed(self, chunk: np.ndarray) -> Optional[int]:
        self._tail = np.concatenate([self._tail, chunk])
        n = self._tail.size
        w = self.window
        if n < w:
            return None
        slopes = _window_slope(self._tail.astype(float), w)
        self.last_slope = float(slopes[-1])
        hits = np.nonzero(slopes < self.slope_tol)[0]
        if hits.size:
            return self.scan_t + int(hits[0])
        consumed = n - w + 1
        self.scan_t += consumed
        self._tail = self._tail[consumed:]
        return None


def _chunk_steps(cfg: ExperimentConfig) -> int:
    return int(min(max(cfg.effective_window() // 4, 4096), 1 << 18))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Drive a lattice to steady state, then collect target_avalanches
    records and reduce them to a histogram, fit and bandwidth."""
    lat = cfg.make_lattice()
    spec = cfg.drive_spec()
    rng = SplitMix64(cfg.seed)
    window = cfg.effective_window()
    scanner = _SteadyScanner(window, cfg.transient_slope_tol)
    chunk = _chunk_steps(cfg)
    audit_total = 0

    t_steady: Optional[int] = None
    while t_steady is None:
        if lat.ledger.timesteps + chunk > cfg.max_transient_timesteps:
            raise TransientNotConverged(
                f"transient not converged within "
                f"{lat.ledger.timesteps} timesteps (final normalized slope "
                f"{scanner.last_slope:.3e}, tol {cfg.transient_slope_tol:.3e})",
                final_slope=scanner.last_slope)
        out = run(lat, spec, rng, chunk, audit=cfg.audit)
        audit_total += out.audit_violations
        t_steady = scanner.feed(out.stored_series)

    measurement_start = lat.ledger.timesteps
    in0 = lat.ledger.grains_in
    out0 = lat.ledger.grains_out
    ts0 = lat.ledger.timesteps

    sizes_parts: list[np.ndarray] = []
    record_parts: list[RecordBatch] = []
    n_avalanches = 0
    n_events = 0
    while (n_avalanches < cfg.target_avalanches
           or lat.ledger.timesteps - ts0 < cfg.min_measure_timesteps):
        out = run(lat, spec, rng, chunk, audit=cfg.audit)
        audit_total += out.audit_violations
        batch = out.records
        n_events += len(batch)
        keep = batch.size_s >= 1
        sizes_parts.append(batch.size_s[keep])
        n_avalanches += int(keep.sum())
        if cfg.keep_records:
            record_parts.append(batch[keep])

    led = lat.ledger
    t_meas = led.timesteps - ts0
    eps_inj = (led.grains_in - in0) / t_meas
    eps_diss = (led.grains_out - out0) / t_meas
    imbalance = (abs(eps_inj - eps_diss) / eps_inj if eps_inj > 0
                 else math.inf)
    r_a_measured = ((eps_inj / cfg.side ** 2) / eps_diss if eps_diss > 0
                    else math.inf)
    r_a_configured = avalanche_relations(
        drive_rate=spec.grains_per_event * spec.event_probability
        / cfg.side ** 2,
        dissipation_rate=spec.grains_per_event * spec.event_probability,
        scale_ratio=cfg.side, dim=2).drive_ratio_predicted

    sizes = (np.concatenate(sizes_parts) if sizes_parts
             else np.empty(0, dtype=np.int64))
    if sizes.size == 0:
        raise DataError("run produced no avalanches")
    hist = build_histogram(sizes, base=cfg.histogram_base)

    fit: Optional[PowerLawFit] = None
    fit_error: Optional[str] = None
    window_lo = window_hi = bandwidth = None
    if cfg.target_avalanches < FIT_MIN_TARGET:
        fit_error = (f"target_avalanches {cfg.target_avalanches} below "
                     f"statistics threshold {FIT_MIN_TARGET}")
    else:
        try:
            fit = fit_power_law(sizes)
            plw = power_law_window(hist, fit.gamma,
                                   slope_tol=cfg.window_slope_tol)
            if plw is not None:
                window_lo = plw.lo_log10
                window_hi = plw.hi_log10
                bandwidth = plw.decades
        except DataError as e:
            fit_error = str(e)

    summary = RunSummary(
        config=cfg.echo(),
        backend=lat.backend_name,
        steady_state_reached_at=int(t_steady),
        measurement_start=int(measurement_start),
        measurement_timesteps=int(t_meas),
        n_avalanches=int(n_avalanches),
        n_drive_events=int(n_events),
        eps_inj=eps_inj,
        eps_diss=eps_diss,
        flux_imbalance=imbalance,
        r_a_configured=r_a_configured,
        r_a_measured=r_a_measured,
        ledger_grains_in=led.grains_in,
        ledger_grains_out=led.grains_out,
        ledger_stored=led.stored,
        ledger_timesteps=led.timesteps,
        audit_violations=audit_total,
        fit=fit,
        fit_error=fit_error,
        window_lo=window_lo,
        window_hi=window_hi,
        bandwidth_decades=bandwidth,
        histogram_bins=int(hist.counts.size),
    )
    records = RecordBatch.concat(record_parts) if cfg.keep_records else None
    return ExperimentResult(summary=summary, histogram=hist, sizes=sizes,
                            records=records)


def _run_parallel(configs: Sequence[ExperimentConfig],
                  parallel: int) -> list[ExperimentResult]:
    if parallel <= 1 or len(configs) <= 1:
        return [run_experiment(c) for c in configs]
    with ProcessPoolExecutor(max_workers=min(parallel, len(configs))) as ex:
        futures = [ex.submit(run_experiment, c) for c in configs]
        return [f.result() for f in futures]


def joint_power_law_window(ref: RunSummary, test: RunSummary,
                           scale_factor: float) -> tuple[float, float]:
    """Intersection of two runs' scaling windows in the reference frame
    (the test window is shifted down by log10(scale_factor))."""
    if ref.window_lo is None or test.window_lo is None:
        raise DataError("both runs need a detected power-law window")
    shift = math.log10(scale_factor)
    lo = max(ref.window_lo, test.window_lo - shift)
    hi = min(ref.window_hi, test.window_hi - shift)
    if not hi > lo:
        raise DataError(
            f"power-law windows do not intersect after rescaling "
            f"by {scale_factor}")
    return lo, hi


def gamma_difference_sigmas(a: PowerLawFit, b: PowerLawFit) -> float:
    """|gamma_a - gamma_b| in units of the joint standard error."""
    return abs(a.gamma - b.gamma) / math.hypot(a.stderr, b.stderr)


@dataclass
class DrivePairResult:
    """Two runs differing in drive rate (same lattice), compared after
    rescaling sizes by the drive ratio."""

    run_ref: ExperimentResult
    run_test: ExperimentResult
    scale_factor: float
    joint_window: tuple[float, float]
    collapse: CollapseReport
    collapse_unscaled: CollapseReport
    gamma_sigmas: float


def figure1_experiment(seed: int = 1, side: int = 100,
                       drives: tuple[int, int] = (4, 16),
                       scale_factor: float = 16.0,
                       target_avalanches: int = 1_000_000,
                       parallel: int = 2,
                       base: Optional[ExperimentConfig] = None
                       ) -> DrivePairResult:
    """Drive comparison on one lattice size: slow vs intermediate drive,
    fitted separately and collapsed with sizes rescaled by `scale_factor`
    over the joint power-law window."""
    base = base if base is not None else ExperimentConfig()
    cfg_ref = replace(base, side=side, grains_per_event=drives[0], seed=seed,
                      target_avalanches=target_avalanches)
    cfg_test = replace(base, side=side, grains_per_event=drives[1],
                       seed=seed + 1, target_avalanches=target_avalanches)
    res_ref, res_test = _run_parallel([cfg_ref, cfg_test], parallel)
    if res_ref.summary.fit is None or res_test.summary.fit is None:
        raise DataError(
            f"fits missing: ref={res_ref.summary.fit_error} "
            f"test={res_test.summary.fit_error}")
    window = joint_power_law_window(res_ref.summary, res_test.summary,
                                    scale_factor)
    collapse = rescale_and_compare(res_ref.histogram, res_test.histogram,
                                   scale_factor, window=window)
    collapse_unscaled = rescale_and_compare(res_ref.histogram,
                                            res_test.histogram, 1.0,
                                            window=window)
    return DrivePairResult(
        run_ref=res_ref, run_test=res_test, scale_factor=scale_factor,
        joint_window=window, collapse=collapse,
        collapse_unscaled=collapse_unscaled,
        gamma_sigmas=gamma_difference_sigmas(res_ref.summary.fit,
                                             res_test.summary.fit))


@dataclass
class JointRescaleResult:
    """Two runs with drive rate and system size scaled together, compared
    under the corresponding size rescaling; the top decade of observed
    sizes is reported both excluded (where collapse is expected) and
    included (where it degrades)."""

    run_ref: ExperimentResult
    run_test: ExperimentResult
    scale_factor: float
    joint_window: tuple[float, float]
    collapse_excluding_top: CollapseReport
    collapse_including_top: CollapseReport
    gamma_sigmas: float


def figure2_experiment(seed: int = 2,
                       sides: tuple[int, int] = (100, 400),
                       drives: tuple[int, int] = (4, 16),
                       scale_factor: float = 16.0,
                       targets: tuple[int, int] = (1_000_000, 300_000),
                       parallel: int = 2,
                       base: Optional[ExperimentConfig] = None
                       ) -> JointRescaleResult:
    """Joint (drive, size) rescaling: the larger/faster system's sizes are
    divided by `scale_factor` and compared over the joint power-law window.

    The large lattice uses a diffusive-horizon transient window (side^2
    timesteps) rather than the generic 10*side^2 default; the flux-balance
    diagnostic in its summary independently validates steadiness.
    """
    base = base if base is not None else ExperimentConfig()
    cfg_ref = replace(base, side=sides[0], grains_per_event=drives[0],
                      seed=seed, target_avalanches=targets[0])
    cfg_test = replace(base, side=sides[1], grains_per_event=drives[1],
                       seed=seed + 1, target_avalanches=targets[1],
                       transient_window=sides[1] ** 2)
    res_ref, res_test = _run_parallel([cfg_ref, cfg_test], parallel)
    if res_ref.summary.fit is None or res_test.summary.fit is None:
        raise DataError(
            f"fits missing: ref={res_ref.summary.fit_error} "
            f"test={res_test.summary.fit_error}")
    window = joint_power_law_window(res_ref.summary, res_test.summary,
                                    scale_factor)
    full = rescale_and_compare(res_ref.histogram, res_test.histogram,
                               scale_factor)
    top_cut = full.overlap_hi - 1.0
    excl = rescale_and_compare(res_ref.histogram, res_test.histogram,
                               scale_factor,
                               window=(window[0], min(window[1], top_cut)))
    incl = rescale_and_compare(res_ref.histogram, res_test.histogram,
                               scale_factor,
                               window=(window[0], full.overlap_hi))
    return JointRescaleResult(
        run_ref=res_ref, run_test=res_test, scale_factor=scale_factor,
        joint_window=window, collapse_excluding_top=excl,
        collapse_including_top=incl,
        gamma_sigmas=gamma_difference_sigmas(res_ref.summary.fit,
                                             res_test.summary.fit))


@dataclass
class SweepRow:
    grains_per_event: int
    seed: int
    regime: DriveRegime
    r_a_configured: Optional[float]
    bandwidth_decades: Optional[float]
    gamma: Optional[float]
    gamma_stderr: Optional[float]
    fitted: bool
    flagged: Optional[str] = None


@dataclass
class SweepResult:
    rows: list[SweepRow]
    bandwidth_monotone: Optional[bool]
    slack_decades: float
    results: list[Optional[ExperimentResult]]


def bandwidth_sweep(h_values: Sequence[int],
                    base: Optional[ExperimentConfig] = None,
                    parallel: int = 2,
                    slack_decades: float = 0.2,
                    margin: float = 0.5) -> SweepResult:
    """One run per drive rate; emits scaling bandwidth and exponent per
    row plus a monotonicity verdict (non-increasing bandwidth within
    `slack_decades`).  Laminar-regime drives are flagged and not run."""
    base = base if base is not None else ExperimentConfig()
    h_values = list(h_values)
    if any(b >= a for a, b in zip(h_values[1:], h_values)):
        raise ConfigError("h_values must be strictly increasing")
    regimes = [classify_drive_regime(
        h * base.event_probability, base.threshold, base.side, dim=2,
        margin=margin) for h in h_values]
    configs = []
    run_idx = []
    for i, (h, reg) in enumerate(zip(h_values, regimes)):
        if reg is DriveRegime.LAMINAR:
            continue
        configs.append(replace(base, grains_per_event=h,
                               seed=base.seed + i))
        run_idx.append(i)
    results_run = _run_parallel(configs, parallel)
    results: list[Optional[ExperimentResult]] = [None] * len(h_values)
    for i, res in zip(run_idx, results_run):
        results[i] = res

    rows: list[SweepRow] = []
    for i, (h, reg) in enumerate(zip(h_values, regimes)):
        res = results[i]
        if res is None:
            rows.append(SweepRow(
                grains_per_event=h, seed=base.seed + i, regime=reg,
                r_a_configured=None, bandwidth_decades=None, gamma=None,
                gamma_stderr=None, fitted=False,
                flagged="laminar drive regime; not run"))
            continue
        s = res.summary
        rows.append(SweepRow(
            grains_per_event=h, seed=base.seed + i, regime=reg,
            r_a_configured=s.r_a_configured,
            bandwidth_decades=s.bandwidth_decades,
            gamma=s.fit.gamma if s.fit else None,
            gamma_stderr=s.fit.stderr if s.fit else None,
            fitted=s.fit is not None,
            flagged=None if s.fit else s.fit_error))

    fitted_bw = [r.bandwidth_decades for r in rows
                 if r.fitted and r.bandwidth_decades is not None]
    verdict: Optional[bool] = None
    if len(fitted_bw) >= 2:
        verdict = all(b <= a + slack_decades
                      for a, b in zip(fitted_bw, fitted_bw[1:]))
    return SweepResult(rows=rows, bandwidth_monotone=verdict,
                       slack_decades=slack_decades, results=results)
