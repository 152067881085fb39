"""Pure-Python sandpile kernels.

Reference implementation of the two hot entry points, `relax` and
`run_chunk`.  The compiled backend (`sandlab._kernels_cy`) implements the
identical contract, including the splitmix64 draw protocol, so both produce
bit-identical heights, ledgers and avalanche records for the same seed.
This backend is selected automatically when the extension is missing (or
when SANDLAB_KERNELS=python); it is orders of magnitude slower and meant
for tests, small lattices and cross-checking, not production sweeps.
"""

from __future__ import annotations

import numpy as np

from .errors import RelaxationOverflow
from .rng import MASK64, draw_u64, u64_to_unit

BACKEND_NAME = "python"


def _quanta(threshold):
    """Grains sent to (N, E, S, W) per toppling; remainder dealt N,E,S,W."""
    q, r = divmod(int(threshold), 4)
    return (q + (r >= 1), q + (r >= 2), q + (r >= 3), q)


def relax(heights, threshold, open_n, open_e, open_s, open_w,
          cand_rows, cand_cols, max_sweeps):
    """Synchronous relaxation: every cell at/above threshold topples once
    per sweep until the whole lattice is below threshold.

    `cand_rows/cand_cols` are the only cells that may be unstable on entry
    (duplicates allowed).  Returns (size, area, duration, dissipated);
    mutates `heights` in place.
    """
    side = heights.shape[0]
    g = int(threshold)
    qn, qe, qs, qw = _quanta(g)
    flat = heights.reshape(-1)
    cand = (np.asarray(cand_rows, dtype=np.int64) * side
            + np.asarray(cand_cols, dtype=np.int64))
    toppled = np.zeros(side * side, dtype=bool)
    size = 0
    area = 0
    duration = 0
    dissipated = 0
    sweeps = 0
    while cand.size:
        unstable = np.unique(cand[flat[cand] >= g])
        if unstable.size == 0:
            break
        sweeps += 1
        if sweeps > max_sweeps:
            raise RelaxationOverflow(
                f"relaxation exceeded {max_sweeps} sweeps; "
                "lattice cannot shed grains")
        duration += 1
        size += int(unstable.size)
        newly = unstable[~toppled[unstable]]
        toppled[newly] = True
        area += int(newly.size)
        flat[unstable] -= g
        r = unstable // side
        c = unstable % side
        at_n = r == 0
        at_e = c == side - 1
        at_s = r == side - 1
        at_w = c == 0
        if qn:
            np.add.at(flat, unstable[~at_n] - side, qn)
            edge = unstable[at_n]
            if open_n:
                dissipated += qn * int(edge.size)
            else:
                np.add.at(flat, edge, qn)
        if qe:
            np.add.at(flat, unstable[~at_e] + 1, qe)
            edge = unstable[at_e]
            if open_e:
                dissipated += qe * int(edge.size)
            else:
                np.add.at(flat, edge, qe)
        if qs:
            np.add.at(flat, unstable[~at_s] + side, qs)
            edge = unstable[at_s]
            if open_s:
                dissipated += qs * int(edge.size)
            else:
                np.add.at(flat, edge, qs)
        if qw:
            np.add.at(flat, unstable[~at_w] - 1, qw)
            edge = unstable[at_w]
            if open_w:
                dissipated += qw * int(edge.size)
            else:
                np.add.at(flat, edge, qw)
        cand = np.concatenate([
            unstable,
            unstable[~at_n] - side,
            unstable[~at_e] + 1,
            unstable[~at_s] + side,
            unstable[~at_w] - 1,
        ])
    return size, area, duration, dissipated


def run_chunk(heights, threshold, open_n, open_e, open_s, open_w,
              site_draws, r0, c0, extent, grains_per_event, event_prob,
              seed, draw_counter, n_steps, timestep_base, max_sweeps, audit,
              rec_timestep, rec_size, rec_area, rec_duration, rec_dissipated,
              rec_row, rec_col, stored_series):
    """Drive-then-relax for `n_steps` timesteps.

    One Bernoulli(event_prob) drive event per timestep at most; the site is
    fixed at (r0, c0) when site_draws == 0, else drawn uniformly from the
    extent x extent block anchored there (two draws, row then column).
    Emits one record per drive event and the per-timestep stored-grain
    series.  Returns (n_records, grains_in, grains_out, draw_counter,
    audit_violations).
    """
    stored = int(heights.sum())
    seed = int(seed) & MASK64
    k = int(draw_counter)
    grains_in = 0
    grains_out = 0
    n_rec = 0
    violations = 0
    one_r = np.empty(1, dtype=np.int32)
    one_c = np.empty(1, dtype=np.int32)
    for i in range(int(n_steps)):
        event = True
        if event_prob < 1.0:
            k += 1
            event = u64_to_unit(draw_u64(seed, k)) < event_prob
        if event:
            if site_draws:
                k += 1
                rr = r0 + min(int(u64_to_unit(draw_u64(seed, k)) * extent),
                              extent - 1)
                k += 1
                cc = c0 + min(int(u64_to_unit(draw_u64(seed, k)) * extent),
                              extent - 1)
            else:
                rr, cc = r0, c0
            heights[rr, cc] += grains_per_event
            grains_in += grains_per_event
            stored += grains_per_event
            one_r[0] = rr
            one_c[0] = cc
            size, area, dur, diss = relax(
                heights, threshold, open_n, open_e, open_s, open_w,
                one_r, one_c, max_sweeps)
            grains_out += diss
            stored -= diss
            rec_timestep[n_rec] = timestep_base + i + 1
            rec_size[n_rec] = size
            rec_area[n_rec] = area
            rec_duration[n_rec] = dur
            rec_dissipated[n_rec] = diss
            rec_row[n_rec] = rr
            rec_col[n_rec] = cc
            n_rec += 1
        stored_series[i] = stored
        if audit and int(heights.sum()) != stored:
            violations += 1
    return n_rec, grains_in, grains_out, k, violations
