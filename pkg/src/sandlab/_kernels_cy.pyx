# cython: boundscheck=False, wraparound=False, nonecheck=False, cdivision=True
"""Compiled sandpile kernels.

Same contract as sandlab._kernels_py (the pure-Python reference); see that
module's docstrings.  The relaxation sweep keeps a frontier of unstable
cells and builds the next frontier during grain distribution by detecting
threshold crossings, so cost scales with topplings, not lattice area.
Heights are copied into 32-bit working storage when provably safe (the
common case); a 64-bit instantiation of the same core covers the rest.
"""

import numpy as np

from .errors import RelaxationOverflow

cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint64_t

BACKEND_NAME = "compiled"

# above this, heights / threshold / drive size take the 64-bit kernel
# path; below it the 32-bit path cannot overflow
INT32_SAFE_LIMIT = 1 << 27

cdef uint64_t GAMMA = 0x9E3779B97F4A7C15u
cdef double INV_2_53 = 1.0 / 9007199254740992.0

cdef int32_t STAMP_RESET_AT = 0x7FFFFF00


cdef inline uint64_t _mix64(uint64_t z) noexcept:
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9u
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBu
    return z ^ (z >> 31)


cdef inline double _unit(uint64_t seed, int64_t k) noexcept:
    return <double>(_mix64(seed + GAMMA * <uint64_t>k) >> 11) * INV_2_53


ctypedef fused height_t:
    int32_t
    int64_t


cdef struct RelaxOut:
    int64_t size
    int64_t area
    int64_t duration
    int64_t dissipated
    int overflow


cdef RelaxOut _relax_core(
        height_t[:, ::1] H, int64_t g64,
        int open_n, int open_e, int open_s, int open_w,
        int32_t[::1] cand_r, int32_t[::1] cand_c, Py_ssize_t n_cand,
        int32_t[:, ::1] stamp, int32_t aid,
        int64_t max_sweeps,
        int32_t[::1] fa_r, int32_t[::1] fa_c,
        int32_t[::1] fb_r, int32_t[::1] fb_c) noexcept:
    cdef Py_ssize_t L = H.shape[0]
    cdef height_t g = <height_t>g64
    cdef height_t q = <height_t>(g64 >> 2)
    cdef int64_t rem = g64 & 3
    cdef height_t qn = q + (1 if rem >= 1 else 0)
    cdef height_t qe = q + (1 if rem >= 2 else 0)
    cdef height_t qs = q + (1 if rem >= 3 else 0)
    cdef height_t qw = q
    cdef int32_t[::1] cur_r = fa_r
    cdef int32_t[::1] cur_c = fa_c
    cdef int32_t[::1] nxt_r = fb_r
    cdef int32_t[::1] nxt_c = fb_c
    cdef int32_t[::1] tmp
    cdef Py_ssize_t n_cur = 0
    cdef Py_ssize_t n_nxt, i
    cdef int32_t r, c
    cdef int32_t queued = aid - 1
    cdef height_t hc, hb, hn
    cdef int64_t sweeps = 0
    cdef RelaxOut out
    out.size = 0
    out.area = 0
    out.duration = 0
    out.dissipated = 0
    out.overflow = 0

    # entry: validate candidates, dedup via the stamp grid ("queued" mark);
    # during sweeps the same grid carries the "toppled" mark for area
    for i in range(n_cand):
        r = cand_r[i]
        c = cand_c[i]
        if H[r, c] >= g and stamp[r, c] != queued:
            stamp[r, c] = queued
            cur_r[n_cur] = r
            cur_c[n_cur] = c
            n_cur += 1

    while n_cur > 0:
        sweeps += 1
        if sweeps > max_sweeps:
            out.overflow = 1
            break
        out.duration += 1
        out.size += n_cur
        n_nxt = 0
        for i in range(n_cur):
            r = cur_r[i]
            c = cur_c[i]
            hc = H[r, c] - g
            out.area += stamp[r, c] != aid
            stamp[r, c] = aid
            # still unstable after its own toppling (height >= 2g)
            nxt_r[n_nxt] = r
            nxt_c[n_nxt] = c
            n_nxt += hc >= g
            # distribute; a cell joins the next frontier exactly when it
            # crosses the threshold (heights only rise between topples)
            if r > 0:
                hb = H[r - 1, c]
                hn = hb + qn
                H[r - 1, c] = hn
                nxt_r[n_nxt] = r - 1
                nxt_c[n_nxt] = c
                n_nxt += (hb < g) & (hn >= g)
            elif open_n:
                out.dissipated += qn
            else:
                hb = hc
                hc = hb + qn
                nxt_r[n_nxt] = r
                nxt_c[n_nxt] = c
                n_nxt += (hb < g) & (hc >= g)
            if c < L - 1:
                hb = H[r, c + 1]
                hn = hb + qe
                H[r, c + 1] = hn
                nxt_r[n_nxt] = r
                nxt_c[n_nxt] = c + 1
                n_nxt += (hb < g) & (hn >= g)
            elif open_e:
                out.dissipated += qe
            else:
                hb = hc
                hc = hb + qe
                nxt_r[n_nxt] = r
                nxt_c[n_nxt] = c
                n_nxt += (hb < g) & (hc >= g)
            if r < L - 1:
                hb = H[r + 1, c]
                hn = hb + qs
                H[r + 1, c] = hn
                nxt_r[n_nxt] = r + 1
                nxt_c[n_nxt] = c
                n_nxt += (hb < g) & (hn >= g)
            elif open_s:
                out.dissipated += qs
            else:
                hb = hc
                hc = hb + qs
                nxt_r[n_nxt] = r
                nxt_c[n_nxt] = c
                n_nxt += (hb < g) & (hc >= g)
            if c > 0:
                hb = H[r, c - 1]
                hn = hb + qw
                H[r, c - 1] = hn
                nxt_r[n_nxt] = r
                nxt_c[n_nxt] = c - 1
                n_nxt += (hb < g) & (hn >= g)
            elif open_w:
                out.dissipated += qw
            else:
                hb = hc
                hc = hb + qw
                nxt_r[n_nxt] = r
                nxt_c[n_nxt] = c
                n_nxt += (hb < g) & (hc >= g)
            H[r, c] = hc
        tmp = cur_r
        cur_r = nxt_r
        nxt_r = tmp
        tmp = cur_c
        cur_c = nxt_c
        nxt_c = tmp
        n_cur = n_nxt

    return out


cdef inline int64_t _grid_sum(height_t[:, ::1] H) noexcept:
    cdef Py_ssize_t L = H.shape[0]
    cdef Py_ssize_t i, j
    cdef int64_t total = 0
    for i in range(L):
        for j in range(L):
            total += H[i, j]
    return total


cdef class _Scratch:
    """Frontier buffers plus the stamp grid, reused across one kernel call."""

    cdef object fa_r, fa_c, fb_r, fb_c, stamp_arr
    cdef int32_t counter

    def __init__(self, Py_ssize_t side):
        # +8: frontier pushes are branchless speculative writes one past
        # the occupied length
        n = side * side + 8
        self.fa_r = np.empty(n, dtype=np.int32)
        self.fa_c = np.empty(n, dtype=np.int32)
        self.fb_r = np.empty(n, dtype=np.int32)
        self.fb_c = np.empty(n, dtype=np.int32)
        self.stamp_arr = np.zeros((side, side), dtype=np.int32)
        self.counter = 0

    cdef int32_t next_stamp(self):
        if self.counter > STAMP_RESET_AT:
            self.stamp_arr[...] = 0
            self.counter = 0
        self.counter += 2
        return self.counter


def _use_int32(heights, threshold, grains_per_event=0):
    return (int(heights.max(initial=0)) < INT32_SAFE_LIMIT
            and int(threshold) < INT32_SAFE_LIMIT
            and int(grains_per_event) < INT32_SAFE_LIMIT)


def relax(heights, threshold, open_n, open_e, open_s, open_w,
          cand_rows, cand_cols, max_sweeps):
    """See sandlab._kernels_py.relax."""
    cdef Py_ssize_t L = heights.shape[0]
    cand_r = np.ascontiguousarray(cand_rows, dtype=np.int32)
    cand_c = np.ascontiguousarray(cand_cols, dtype=np.int32)
    cdef _Scratch sc = _Scratch(L)
    cdef RelaxOut out
    cdef int32_t aid = sc.next_stamp()
    cdef int32_t[:, ::1] h32
    cdef int64_t[:, ::1] h64
    if _use_int32(heights, threshold):
        work = heights.astype(np.int32)
        h32 = work
        try:
            out = _relax_core[int32_t](
                h32, threshold, open_n, open_e, open_s, open_w,
                cand_r, cand_c, cand_r.shape[0], sc.stamp_arr, aid,
                max_sweeps, sc.fa_r, sc.fa_c, sc.fb_r, sc.fb_c)
        finally:
            heights[...] = work
    else:
        h64 = heights
        out = _relax_core[int64_t](
            h64, threshold, open_n, open_e, open_s, open_w,
            cand_r, cand_c, cand_r.shape[0], sc.stamp_arr, aid,
            max_sweeps, sc.fa_r, sc.fa_c, sc.fb_r, sc.fb_c)
    if out.overflow:
        raise RelaxationOverflow(
            f"relaxation exceeded {max_sweeps} sweeps; "
            "lattice cannot shed grains")
    return out.size, out.area, out.duration, out.dissipated


def run_chunk(heights, threshold, open_n, open_e, open_s, open_w,
              site_draws, r0, c0, extent, grains_per_event, event_prob,
              seed, draw_counter, n_steps, timestep_base, max_sweeps, audit,
              rec_timestep, rec_size, rec_area, rec_duration, rec_dissipated,
              rec_row, rec_col, stored_series):
    """See sandlab._kernels_py.run_chunk."""
    if _use_int32(heights, threshold, grains_per_event):
        work = heights.astype(np.int32)
        try:
            result = _run_chunk_typed(
                work, threshold, open_n, open_e, open_s, open_w,
                site_draws, r0, c0, extent, grains_per_event, event_prob,
                seed, draw_counter, n_steps, timestep_base, max_sweeps,
                audit, rec_timestep, rec_size, rec_area, rec_duration,
                rec_dissipated, rec_row, rec_col, stored_series)
        finally:
            heights[...] = work
    else:
        result = _run_chunk_typed(
            heights, threshold, open_n, open_e, open_s, open_w,
            site_draws, r0, c0, extent, grains_per_event, event_prob,
            seed, draw_counter, n_steps, timestep_base, max_sweeps,
            audit, rec_timestep, rec_size, rec_area, rec_duration,
            rec_dissipated, rec_row, rec_col, stored_series)
    return result


def _run_chunk_typed(height_t[:, ::1] H, int64_t g,
                     int open_n, int open_e, int open_s, int open_w,
                     int site_draws, Py_ssize_t r0, Py_ssize_t c0,
                     Py_ssize_t extent, int64_t grains_per_event,
                     double event_prob, object seed, int64_t draw_counter,
                     Py_ssize_t n_steps, int64_t timestep_base,
                     int64_t max_sweeps, int audit,
                     int64_t[::1] rec_timestep, int64_t[::1] rec_size,
                     int64_t[::1] rec_area, int64_t[::1] rec_duration,
                     int64_t[::1] rec_dissipated,
                     int32_t[::1] rec_row, int32_t[::1] rec_col,
                     int64_t[::1] stored_series):
    cdef Py_ssize_t L = H.shape[0]
    cdef _Scratch sc = _Scratch(L)
    cdef int32_t[::1] fa_rv = sc.fa_r
    cdef int32_t[::1] fa_cv = sc.fa_c
    cdef int32_t[::1] fb_rv = sc.fb_r
    cdef int32_t[::1] fb_cv = sc.fb_c
    cdef int32_t[:, ::1] stamp = sc.stamp_arr
    one_r = np.empty(1, dtype=np.int32)
    one_c = np.empty(1, dtype=np.int32)
    cdef int32_t[::1] one_rv = one_r
    cdef int32_t[::1] one_cv = one_c

    cdef uint64_t s = <uint64_t>(seed & 0xFFFFFFFFFFFFFFFF)
    cdef int64_t k = draw_counter
    cdef double p = event_prob

    cdef int64_t stored = _grid_sum(H)
    cdef int64_t grains_in = 0
    cdef int64_t grains_out = 0
    cdef Py_ssize_t n_rec = 0
    cdef int64_t violations = 0
    cdef Py_ssize_t i, rr, cc, site
    cdef int event
    cdef int32_t aid
    cdef RelaxOut out

    for i in range(n_steps):
        event = 1
        if p < 1.0:
            k += 1
            event = 1 if _unit(s, k) < p else 0
        if event:
            if site_draws:
                k += 1
                site = <Py_ssize_t>(_unit(s, k) * extent)
                if site >= extent:
                    site = extent - 1
                rr = r0 + site
                k += 1
                site = <Py_ssize_t>(_unit(s, k) * extent)
                if site >= extent:
                    site = extent - 1
                cc = c0 + site
            else:
                rr = r0
                cc = c0
            H[rr, cc] += <height_t>grains_per_event
            grains_in += grains_per_event
            stored += grains_per_event
            one_rv[0] = <int32_t>rr
            one_cv[0] = <int32_t>cc
            aid = sc.next_stamp()
            out = _relax_core(H, g, open_n, open_e, open_s, open_w,
                              one_rv, one_cv, 1, stamp, aid, max_sweeps,
                              fa_rv, fa_cv, fb_rv, fb_cv)
            if out.overflow:
                raise RelaxationOverflow(
                    f"relaxation exceeded {max_sweeps} sweeps; "
                    "lattice cannot shed grains")
            grains_out += out.dissipated
            stored -= out.dissipated
            rec_timestep[n_rec] = timestep_base + i + 1
            rec_size[n_rec] = out.size
            rec_area[n_rec] = out.area
            rec_duration[n_rec] = out.duration
            rec_dissipated[n_rec] = out.dissipated
            rec_row[n_rec] = <int32_t>rr
            rec_col[n_rec] = <int32_t>cc
            n_rec += 1
        stored_series[i] = stored
        if audit and _grid_sum(H) != stored:
            violations += 1
    return n_rec, grains_in, grains_out, k, violations
