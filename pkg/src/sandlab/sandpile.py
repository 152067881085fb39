"""Deterministic 2D threshold sandpile with exact grain bookkeeping.

A lattice of integer heights topples any cell that reaches the threshold,
sending grains to its four von-Neumann neighbors; grains crossing an open
side leave the system, grains toward a closed side stay in the toppling
cell.  Driving adds grains at a corner, a corner block, or uniformly at
random; each drive event is relaxed to completion before the next timestep
(separation of timescales), and every grain is accounted for in an integer
ledger.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, RunError
from .rng import SplitMix64

DEFAULT_MAX_SWEEPS = 10**9

SITE_POLICIES = ("corner", "top_region", "uniform")

CSV_HEADER = "timestep,size_S,area,duration,dissipated,trigger_row,trigger_col"


class Boundary(enum.Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass(frozen=True)
class Boundaries:
    """Per-side boundary conditions, compass order north, east, south, west."""

    north: Boundary = Boundary.OPEN
    east: Boundary = Boundary.OPEN
    south: Boundary = Boundary.OPEN
    west: Boundary = Boundary.OPEN

    @classmethod
    def all_open(cls) -> "Boundaries":
        return cls()

    @classmethod
    def parse(cls, text: str) -> "Boundaries":
        """Parse 'closed,open,open,closed' (north,east,south,west)."""
        parts = [p.strip().lower() for p in text.split(",")]
        if len(parts) != 4:
            raise ConfigError(
                f"boundaries need 4 comma-separated sides (N,E,S,W), got {text!r}")
        try:
            sides = [Boundary(p) for p in parts]
        except ValueError:
            raise ConfigError(
                f"boundary sides must be 'open' or 'closed', got {text!r}") from None
        return cls(*sides)

    def as_text(self) -> str:
        return ",".join(s.value for s in
                        (self.north, self.east, self.south, self.west))

    def open_flags(self) -> tuple[int, int, int, int]:
        return tuple(int(s is Boundary.OPEN) for s in
                     (self.north, self.east, self.south, self.west))


@dataclass(frozen=True)
class DriveSpec:
    """How grains enter the pile.

    grains_per_event is the paper-style "h dt" when event_probability is 1;
    site_policy picks the injection site: 'corner' is the single cell at
    the closed-closed corner, 'top_region' a uniform cell of the
    extent x extent block at that corner, 'uniform' any cell.
    """

    grains_per_event: int = 4
    site_policy: str = "corner"
    region_extent: int = 1
    event_probability: float = 1.0

    def __post_init__(self):
        if self.grains_per_event < 1:
            raise ConfigError("grains_per_event must be >= 1")
        if self.site_policy not in SITE_POLICIES:
            raise ConfigError(
                f"site_policy must be one of {SITE_POLICIES}, "
                f"got {self.site_policy!r}")
        if self.region_extent < 1:
            raise ConfigError("region_extent must be >= 1")
        if not (0.0 < self.event_probability <= 1.0):
            raise ConfigError("event_probability must be in (0, 1]")


@dataclass
class AvalancheRecord:
    """One relaxation event."""

    size_s: int
    area: int
    duration: int
    dissipated: int
    trigger_site: Optional[tuple[int, int]]
    timestep: int


@dataclass
class Ledger:
    """Exact grain accounting; grains_in == grains_out + stored always."""

    grains_in: int = 0
    grains_out: int = 0
    stored: int = 0
    timesteps: int = 0

    def balanced(self) -> bool:
        return self.grains_in == self.grains_out + self.stored


@dataclass
class RecordBatch:
    """Column-wise avalanche records from a run chunk."""

    timestep: np.ndarray
    size_s: np.ndarray
    area: np.ndarray
    duration: np.ndarray
    dissipated: np.ndarray
    trigger_row: np.ndarray
    trigger_col: np.ndarray

    def __len__(self) -> int:
        return int(self.timestep.shape[0])

    @classmethod
    def empty(cls) -> "RecordBatch":
        z64 = np.empty(0, dtype=np.int64)
        z32 = np.empty(0, dtype=np.int32)
        return cls(z64, z64.copy(), z64.copy(), z64.copy(), z64.copy(),
                   z32, z32.copy())

    @classmethod
    def concat(cls, batches) -> "RecordBatch":
        batches = list(batches)
        if not batches:
            return cls.empty()
        return cls(*(np.concatenate([getattr(b, f) for b in batches])
                     for f in ("timestep", "size_s", "area", "duration",
                               "dissipated", "trigger_row", "trigger_col")))

    def __getitem__(self, index) -> "RecordBatch":
        return RecordBatch(*(getattr(self, f)[index]
                             for f in ("timestep", "size_s", "area",
                                       "duration", "dissipated",
                                       "trigger_row", "trigger_col")))


@dataclass
class ChunkResult:
    records: RecordBatch
    stored_series: np.ndarray
    grains_in: int
    grains_out: int
    audit_violations: int


class Lattice:
    """L x L integer height field with per-side boundaries and a threshold."""

    def __init__(self, side: int, threshold: int = 4,
                 boundaries: Boundaries = Boundaries.all_open(),
                 backend: str | None = None):
        if side < 2:
            raise ConfigError(f"side must be >= 2, got {side}")
        if threshold < 1:
            raise ConfigError(f"threshold must be >= 1, got {threshold}")
        self.side = int(side)
        self.threshold = int(threshold)
        self.boundaries = boundaries
        self.heights = np.zeros((side, side), dtype=np.int64)
        self.ledger = Ledger()
        self.max_sweeps = DEFAULT_MAX_SWEEPS
        self._kern = kernels.get_backend(backend)

    def __repr__(self):
        return (f"Lattice(side={self.side}, threshold={self.threshold}, "
                f"boundaries={self.boundaries.as_text()!r}, "
                f"backend={self.backend_name!r})")

    @property
    def backend_name(self) -> str:
        return self._kern.BACKEND_NAME

    def stored_grains(self) -> int:
        """Grains on the grid, counted from the height field itself."""
        return int(self.heights.sum())

    def is_relaxed(self) -> bool:
        return bool((self.heights < self.threshold).all())

    def verify_conservation(self):
        """Integer identity check of ledger vs the actual height field."""
        grid = self.stored_grains()
        led = self.ledger
        if led.stored != grid or not led.balanced():
            raise RunError(
                f"conservation violated: grains_in={led.grains_in} "
                f"grains_out={led.grains_out} stored={led.stored} "
                f"grid={grid}")

    def snapshot_text(self) -> str:
        """Height field as a plain-text grid, one row per line."""
        return "\n".join(" ".join(str(v) for v in row)
                         for row in self.heights.tolist()) + "\n"

    def dump_text(self, fp: IO[str] | str):
        if isinstance(fp, str):
            with open(fp, "w") as fh:
                fh.write(self.snapshot_text())
        else:
            fp.write(self.snapshot_text())


def new_lattice(side: int, threshold: int = 4,
                boundaries: Boundaries = Boundaries.all_open(),
                backend: str | None = None) -> Lattice:
    """Fresh all-zero lattice with a zeroed ledger."""
    return Lattice(side, threshold, boundaries, backend)


def closed_corner_cell(lattice: Lattice) -> tuple[int, int]:
    """Cell at the corner formed by two adjacent closed sides."""
    b = lattice.boundaries
    last = lattice.side - 1
    closed = Boundary.CLOSED
    if b.north is closed and b.west is closed:
        return (0, 0)
    if b.north is closed and b.east is closed:
        return (0, last)
    if b.south is closed and b.west is closed:
        return (last, 0)
    if b.south is closed and b.east is closed:
        return (last, last)
    raise ConfigError(
        "corner drive requires two adjacent closed sides, boundaries are "
        f"{b.as_text()!r}")


def _drive_block(lattice: Lattice, spec: DriveSpec):
    """(row0, col0, extent, site_draws) for the drive-site choice."""
    if spec.site_policy == "uniform":
        return 0, 0, lattice.side, 1
    corner = closed_corner_cell(lattice)
    if spec.site_policy == "corner":
        return corner[0], corner[1], 1, 0
    extent = spec.region_extent
    if extent > lattice.side:
        raise ConfigError(
            f"region_extent {extent} exceeds lattice side {lattice.side}")
    r0 = 0 if corner[0] == 0 else lattice.side - extent
    c0 = 0 if corner[1] == 0 else lattice.side - extent
    return r0, c0, extent, 1


def drive(lattice: Lattice, spec: DriveSpec,
          rng: SplitMix64) -> Optional[tuple[int, int]]:
    """Maybe add grains_per_event grains at one site; returns it, or None
    when no drive event occurred this timestep."""
    if spec.event_probability < 1.0:
        if not (rng.next_unit() < spec.event_probability):
            return None
    r0, c0, extent, draws = _drive_block(lattice, spec)
    if draws:
        r = r0 + min(int(rng.next_unit() * extent), extent - 1)
        c = c0 + min(int(rng.next_unit() * extent), extent - 1)
    else:
        r, c = r0, c0
    lattice.heights[r, c] += spec.grains_per_event
    lattice.ledger.grains_in += spec.grains_per_event
    lattice.ledger.stored += spec.grains_per_event
    return (r, c)


def _relax_from(lattice: Lattice, rows, cols) -> tuple[int, int, int, int]:
    size, area, duration, dissipated = lattice._kern.relax(
        lattice.heights, lattice.threshold, *lattice.boundaries.open_flags(),
        np.ascontiguousarray(rows, dtype=np.int32),
        np.ascontiguousarray(cols, dtype=np.int32),
        lattice.max_sweeps)
    lattice.ledger.grains_out += dissipated
    lattice.ledger.stored -= dissipated
    return size, area, duration, dissipated


def relax(lattice: Lattice) -> AvalancheRecord:
    """Relax any starting configuration to all-below-threshold."""
    rows, cols = np.nonzero(lattice.heights >= lattice.threshold)
    size, area, duration, dissipated = _relax_from(lattice, rows, cols)
    return AvalancheRecord(size_s=size, area=area, duration=duration,
                           dissipated=dissipated, trigger_site=None,
                           timestep=lattice.ledger.timesteps)


def step(lattice: Lattice, spec: DriveSpec,
         rng: SplitMix64) -> Optional[AvalancheRecord]:
    """One timestep: drive, then relax to completion."""
    lattice.ledger.timesteps += 1
    site = drive(lattice, spec, rng)
    if site is None:
        return None
    size, area, duration, dissipated = _relax_from(
        lattice, [site[0]], [site[1]])
    return AvalancheRecord(size_s=size, area=area, duration=duration,
                           dissipated=dissipated, trigger_site=site,
                           timestep=lattice.ledger.timesteps)


def run(lattice: Lattice, spec: DriveSpec, rng: SplitMix64, n_steps: int,
        audit: bool = False) -> ChunkResult:
    """Hot path: n_steps of drive-then-relax in one kernel call.

    Equivalent to calling step() n_steps times with the same rng, but the
    whole loop runs inside the selected kernel.  With audit=True the kernel
    re-sums the height field after every timestep and counts any
    disagreement with the running ledger (exact integer identity).
    """
    if n_steps < 0:
        raise ConfigError("n_steps must be >= 0")
    r0, c0, extent, draws = _drive_block(lattice, spec)
    n = int(n_steps)
    rec_timestep = np.empty(n, dtype=np.int64)
    rec_size = np.empty(n, dtype=np.int64)
    rec_area = np.empty(n, dtype=np.int64)
    rec_duration = np.empty(n, dtype=np.int64)
    rec_dissipated = np.empty(n, dtype=np.int64)
    rec_row = np.empty(n, dtype=np.int32)
    rec_col = np.empty(n, dtype=np.int32)
    stored_series = np.empty(n, dtype=np.int64)
    (n_rec, grains_in, grains_out, rng.counter,
     violations) = lattice._kern.run_chunk(
        lattice.heights, lattice.threshold, *lattice.boundaries.open_flags(),
        draws, r0, c0, extent, spec.grains_per_event, spec.event_probability,
        rng.seed, rng.counter, n, lattice.ledger.timesteps,
        lattice.max_sweeps, int(audit),
        rec_timestep, rec_size, rec_area, rec_duration, rec_dissipated,
        rec_row, rec_col, stored_series)
    led = lattice.ledger
    led.timesteps += n
    led.grains_in += int(grains_in)
    led.grains_out += int(grains_out)
    led.stored = lattice.stored_grains()
    if not led.balanced():
        raise RunError(
            f"conservation violated after chunk: grains_in={led.grains_in} "
            f"grains_out={led.grains_out} stored={led.stored}")
    records = RecordBatch(rec_timestep[:n_rec], rec_size[:n_rec],
                          rec_area[:n_rec], rec_duration[:n_rec],
                          rec_dissipated[:n_rec], rec_row[:n_rec],
                          rec_col[:n_rec])
    return ChunkResult(records=records, stored_series=stored_series,
                       grains_in=int(grains_in), grains_out=int(grains_out),
                       audit_violations=int(violations))


def write_avalanche_csv(path, batch: RecordBatch, append: bool = False):
    """Append avalanche records to a CSV stream."""
    mode = "a" if append else "w"
    with open(path, mode) as fh:
        if not append:
            fh.write(CSV_HEADER + "\n")
        cols = (batch.timestep, batch.size_s, batch.area, batch.duration,
                batch.dissipated, batch.trigger_row, batch.trigger_col)
        for row in zip(*(c.tolist() for c in cols)):
            fh.write(",".join(str(v) for v in row) + "\n")


def read_avalanche_sizes(path) -> np.ndarray:
    """size_S column of an avalanche CSV (for re-analysis)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        try:
            idx = header.index("size_S")
        except ValueError:
            raise ConfigError(
                f"{path}: no size_S column in header {header}") from None
        sizes = [int(line.split(",")[idx]) for line in fh if line.strip()]
    return np.asarray(sizes, dtype=np.int64)
