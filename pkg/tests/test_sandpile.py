import numpy as np
import pytest

from oracle import sequential_relax
from sandlab.errors import ConfigError, RelaxationOverflow
from sandlab.rng import SplitMix64
from sandlab.sandpile import (Boundaries, Boundary, DriveSpec, Lattice,
                              RecordBatch, closed_corner_cell, drive,
                              new_lattice, read_avalanche_sizes, relax, run,
                              step, write_avalanche_csv)

OPEN = Boundary.OPEN
CLOSED = Boundary.CLOSED


class TestNewLattice:
    def test_fig_geometry(self, fig_boundaries):
        lat = new_lattice(100, 4, fig_boundaries)
        assert lat.heights.sum() == 0
        assert lat.ledger.grains_in == 0
        assert lat.is_relaxed()

    def test_minimal(self, all_open):
        lat = new_lattice(2, 1, all_open)
        assert lat.side == 2

    def test_side_too_small(self):
        with pytest.raises(ConfigError):
            new_lattice(1)

    def test_threshold_too_small(self):
        with pytest.raises(ConfigError):
            new_lattice(8, 0)


class TestDriveSpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            DriveSpec(grains_per_event=0)
        with pytest.raises(ConfigError):
            DriveSpec(site_policy="nope")
        with pytest.raises(ConfigError):
            DriveSpec(event_probability=0.0)
        with pytest.raises(ConfigError):
            DriveSpec(event_probability=1.5)


class TestCorner:
    def test_nw_corner(self, fig_boundaries):
        assert closed_corner_cell(new_lattice(10, 4, fig_boundaries)) == (0, 0)

    def test_se_corner(self):
        b = Boundaries(north=OPEN, east=CLOSED, south=CLOSED, west=OPEN)
        assert closed_corner_cell(new_lattice(10, 4, b)) == (9, 9)

    def test_no_corner(self, all_open):
        with pytest.raises(ConfigError, match="two adjacent closed sides"):
            closed_corner_cell(new_lattice(10, 4, all_open))


class TestDrive:
    def test_corner_always_hits_closed_corner(self, fig_boundaries):
        lat = new_lattice(16, 4, fig_boundaries)
        rng = SplitMix64(5)
        spec = DriveSpec(grains_per_event=4, site_policy="corner")
        for _ in range(50):
            assert drive(lat, spec, rng) == (0, 0)
            relax(lat)

    def test_ledger_counts_grains(self, fig_boundaries):
        lat = new_lattice(16, 4, fig_boundaries)
        rng = SplitMix64(5)
        spec = DriveSpec(grains_per_event=4)
        for i in range(1, 11):
            step(lat, spec, rng)
            assert lat.ledger.grains_in == 4 * i
            assert lat.ledger.timesteps == i

    def test_event_probability(self, fig_boundaries):
        lat = new_lattice(16, 4, fig_boundaries)
        rng = SplitMix64(5)
        spec = DriveSpec(grains_per_event=1, event_probability=0.25)
        events = sum(step(lat, spec, rng) is not None for _ in range(4000))
        assert abs(events - 1000) < 4 * np.sqrt(4000 * 0.25 * 0.75)

    def test_top_region_stays_in_block(self, fig_boundaries):
        lat = new_lattice(16, 4, fig_boundaries)
        rng = SplitMix64(5)
        spec = DriveSpec(grains_per_event=1, site_policy="top_region",
                         region_extent=3)
        for _ in range(200):
            r, c = drive(lat, spec, rng)
            assert 0 <= r < 3 and 0 <= c < 3
            relax(lat)

    def test_region_extent_validation(self, fig_boundaries):
        lat = new_lattice(4, 4, fig_boundaries)
        spec = DriveSpec(site_policy="top_region", region_extent=9)
        with pytest.raises(ConfigError, match="region_extent"):
            drive(lat, spec, SplitMix64(1))

    def test_uniform_hits_are_uniform(self, all_open):
        # binomial 4-sigma bound on per-cell trigger counts over 1e6 steps
        lat = new_lattice(10, 4, all_open)
        spec = DriveSpec(grains_per_event=4, site_policy="uniform")
        out = run(lat, spec, SplitMix64(12345), 1_000_000)
        flat = (out.records.trigger_row.astype(np.int64) * 10
                + out.records.trigger_col)
        counts = np.bincount(flat, minlength=100)
        n, p = 1_000_000, 1 / 100
        sigma = np.sqrt(n * p * (1 - p))
        assert counts.sum() == n
        assert np.abs(counts - n * p).max() < 4 * sigma


class TestRelax:
    def test_already_relaxed_is_noop(self, all_open):
        lat = new_lattice(5, 4, all_open)
        lat.heights[:] = 3
        lat.ledger.stored = lat.stored_grains()
        lat.ledger.grains_in = lat.ledger.stored
        before = lat.heights.copy()
        rec = relax(lat)
        assert rec.size_s == 0 and rec.area == 0 and rec.duration == 0
        assert rec.dissipated == 0
        assert np.array_equal(lat.heights, before)

    def test_single_corner_topple_2x2(self, all_open):
        lat = new_lattice(2, 4, all_open)
        lat.heights[0, 0] = 4
        lat.ledger.grains_in = 4
        lat.ledger.stored = 4
        rec = relax(lat)
        assert rec.size_s == 1
        assert rec.dissipated == 2  # north and west grains leave
        assert lat.heights[0, 1] == 1 and lat.heights[1, 0] == 1
        assert lat.heights[0, 0] == 0

    def test_center_drop_matches_oracle_3x3(self, all_open):
        lat = new_lattice(3, 4, all_open)
        lat.heights[:] = 3
        lat.heights[1, 1] += 1
        start = lat.heights.copy()
        lat.ledger.grains_in = int(start.sum())
        lat.ledger.stored = int(start.sum())
        rec = relax(lat)
        expect_h, expect_s, expect_d, toppled = sequential_relax(
            start, 4, 1, 1, 1, 1)
        assert np.array_equal(lat.heights, expect_h)
        assert rec.size_s == expect_s
        assert rec.dissipated == expect_d
        assert rec.area == len(toppled)
        assert lat.is_relaxed()

    def test_closed_box_overflows(self):
        closed = Boundaries(north=CLOSED, east=CLOSED, south=CLOSED,
                            west=CLOSED)
        lat = new_lattice(4, 1, closed)
        lat.max_sweeps = 50
        lat.heights[2, 2] = 1
        with pytest.raises(RelaxationOverflow):
            relax(lat)


@pytest.mark.parametrize("backend", ["compiled", "python"])
def test_abelian_oracle_equivalence(backend):
    # random small lattices, random boundaries with at least one open side,
    # sub-threshold heights plus one over-threshold cell
    rng = np.random.Generator(np.random.PCG64(77))
    n_cases = 120 if backend == "compiled" else 40
    for _ in range(n_cases):
        side = int(rng.integers(2, 6))
        flags = rng.integers(0, 2, size=4)
        if not flags.any():
            flags[rng.integers(0, 4)] = 1
        b = Boundaries(*(OPEN if f else CLOSED for f in flags))
        lat = new_lattice(side, 4, b, backend=backend)
        lat.heights[:] = rng.integers(0, 4, size=(side, side))
        r, c = (int(rng.integers(0, side)) for _ in range(2))
        lat.heights[r, c] += int(rng.integers(4, 9))
        start = lat.heights.copy()
        lat.ledger.grains_in = int(start.sum())
        lat.ledger.stored = int(start.sum())
        rec = relax(lat)
        expect_h, expect_s, expect_d, toppled = sequential_relax(
            start, 4, *b.open_flags())
        assert np.array_equal(lat.heights, expect_h)
        assert rec.size_s == expect_s
        assert rec.dissipated == expect_d
        assert rec.area == len(toppled)
        lat.verify_conservation()


@pytest.mark.parametrize("threshold", [1, 2, 3, 5, 7, 9])
def test_general_threshold_matches_oracle(threshold, all_open):
    rng = np.random.Generator(np.random.PCG64(threshold))
    for _ in range(30):
        side = int(rng.integers(2, 6))
        lat = new_lattice(side, threshold, all_open)
        lat.heights[:] = rng.integers(0, threshold, size=(side, side))
        r, c = (int(rng.integers(0, side)) for _ in range(2))
        lat.heights[r, c] += int(rng.integers(threshold, 2 * threshold + 1))
        start = lat.heights.copy()
        lat.ledger.grains_in = int(start.sum())
        lat.ledger.stored = int(start.sum())
        rec = relax(lat)
        expect_h, expect_s, expect_d, _ = sequential_relax(
            start, threshold, 1, 1, 1, 1)
        assert np.array_equal(lat.heights, expect_h)
        assert rec.size_s == expect_s
        assert rec.dissipated == expect_d


class TestStepAndRun:
    def test_one_record_per_step_at_p1(self, fig_boundaries):
        lat = new_lattice(8, 4, fig_boundaries)
        rng = SplitMix64(3)
        spec = DriveSpec(grains_per_event=4)
        recs = [step(lat, spec, rng) for _ in range(100)]
        assert all(r is not None for r in recs)
        assert [r.timestep for r in recs] == list(range(1, 101))

    def test_relaxed_after_every_step(self, fig_boundaries):
        lat = new_lattice(8, 4, fig_boundaries)
        rng = SplitMix64(3)
        spec = DriveSpec(grains_per_event=7)
        for _ in range(200):
            step(lat, spec, rng)
            assert lat.heights.max() < lat.threshold

    def test_conservation_every_step(self, fig_boundaries):
        lat = new_lattice(12, 4, fig_boundaries)
        rng = SplitMix64(3)
        spec = DriveSpec(grains_per_event=4)
        for _ in range(500):
            step(lat, spec, rng)
            lat.verify_conservation()

    def test_step_sequence_deterministic(self, fig_boundaries):
        spec = DriveSpec(grains_per_event=4, site_policy="top_region",
                         region_extent=2, event_probability=0.8)

        def collect():
            lat = new_lattice(10, 4, fig_boundaries)
            rng = SplitMix64(99)
            return [step(lat, spec, rng) for _ in range(300)]

        assert collect() == collect()

    @pytest.mark.parametrize("backend", ["compiled", "python"])
    def test_run_equals_step_loop(self, fig_boundaries, backend):
        spec = DriveSpec(grains_per_event=5, site_policy="uniform",
                         event_probability=0.7)
        lat1 = new_lattice(9, 4, fig_boundaries, backend=backend)
        rng1 = SplitMix64(42)
        recs = [r for _ in range(200) if (r := step(lat1, spec, rng1))]

        lat2 = new_lattice(9, 4, fig_boundaries, backend=backend)
        rng2 = SplitMix64(42)
        out = run(lat2, spec, rng2, 200)
        assert np.array_equal(lat1.heights, lat2.heights)
        assert lat1.ledger == lat2.ledger
        assert rng1.counter == rng2.counter
        assert len(out.records) == len(recs)
        assert out.records.size_s.tolist() == [r.size_s for r in recs]
        assert out.records.timestep.tolist() == [r.timestep for r in recs]
        assert out.records.area.tolist() == [r.area for r in recs]

    def test_run_audit_clean(self, fig_boundaries):
        lat = new_lattice(16, 4, fig_boundaries)
        out = run(lat, DriveSpec(grains_per_event=4), SplitMix64(1),
                  10_000, audit=True)
        assert out.audit_violations == 0
        assert lat.ledger.balanced()
        assert (lat.ledger.grains_in
                == lat.ledger.grains_out + lat.stored_grains())

    def test_stored_series_tracks_ledger(self, fig_boundaries):
        lat = new_lattice(10, 4, fig_boundaries)
        out = run(lat, DriveSpec(grains_per_event=4), SplitMix64(1), 2000)
        assert out.stored_series[-1] == lat.ledger.stored
        assert (out.stored_series >= 0).all()


def test_snapshot_text(all_open):
    lat = new_lattice(3, 4, all_open)
    lat.heights[0, 1] = 2
    assert lat.snapshot_text() == "0 2 0\n0 0 0\n0 0 0\n"


def test_avalanche_csv_round_trip(tmp_path, fig_boundaries):
    lat = new_lattice(10, 4, fig_boundaries)
    out = run(lat, DriveSpec(grains_per_event=4), SplitMix64(8), 500)
    keep = out.records.size_s >= 1
    batch = out.records[keep]
    path = tmp_path / "avalanches.csv"
    write_avalanche_csv(path, batch)
    header = path.read_text().splitlines()[0]
    assert header == ("timestep,size_S,area,duration,dissipated,"
                      "trigger_row,trigger_col")
    sizes = read_avalanche_sizes(path)
    assert np.array_equal(sizes, batch.size_s)


def test_record_batch_concat_empty():
    assert len(RecordBatch.concat([])) == 0


def test_record_invariants(fig_boundaries):
    lat = new_lattice(12, 4, fig_boundaries)
    out = run(lat, DriveSpec(grains_per_event=4), SplitMix64(4), 3000)
    b = out.records
    assert (b.size_s >= b.area).all()
    assert (b.area >= 0).all()
    nz = b.size_s > 0
    assert (b.duration[nz] >= 1).all()
    assert (b.size_s[~nz] == 0).all()
    assert (b.area[~nz] == 0).all()
    assert (b.duration[~nz] == 0).all()
    assert (b.dissipated[~nz] == 0).all()
