"""Hand-rolled reference implementations the package modules are checked
against.  Everything here favors obviousness over speed: flat loops and
sets, no code shared with the modules under test."""

from __future__ import annotations

import math


def touched_data_counts(g, n, m, c, e, f, r, s, u):
    """Distinct operand indices touched by the full eight-deep MAC nest."""
    iacts, weights, psums = set(), set(), set()
    for gi in range(g):
        for ni in range(n):
            for mi in range(m):
                for ci in range(c):
                    for ei in range(e):
                        for fi in range(f):
                            for ri in range(r):
                                for si in range(s):
                                    iacts.add((gi, ni, ci, ei * u + ri, fi * u + si))
                                    weights.add((gi, mi, ci, ri, si))
                                    psums.add((gi, ni, mi, ei, fi))
    return len(iacts), len(weights), len(psums)


def conv1d_ref(stream, rows, window, slide, nw):
    """Sliding-window dot products, the schoolbook way."""
    out = []
    for row in rows:
        out.append([
            sum(row[j] * stream[w * slide + j] for j in range(window))
            for w in range(nw)
        ])
    return out


def sparse_work_cycles_ref(stream, weight_rows, slide, nw):
    """Issue-slot count for skip-mode processing of dense operands.

    Assumes the encoder stores exactly the non-zero weights of each column
    (true whenever no column has a zero run longer than the count field,
    e.g. any column of <= 16 rows).
    """
    window = len(weight_rows[0])
    nnz_col = [sum(1 for row in weight_rows if row[j] != 0) for j in range(window)]
    cycles = 0
    for w in range(nw):
        for j in range(window):
            if stream[w * slide + j] != 0:
                cycles += math.ceil(nnz_col[j] / 2)
    return cycles


def csc_stream_size_bits_ref(values, segment_len, count_bits):
    """Compressed size of a stream, recomputed from scratch."""
    cmax = 2 ** count_bits - 1
    nseg = max(1, math.ceil(len(values) / segment_len))
    padded = list(values) + [0] * (nseg * segment_len - len(values))
    pairs = 0
    for k in range(nseg):
        run = 0
        for v in padded[k * segment_len : (k + 1) * segment_len]:
            if v == 0:
                run += 1
            else:
                while run > cmax:
                    pairs += 1
                    run -= cmax + 1
                pairs += 1
                run = 0
    addr_width = max(1, pairs.bit_length())
    return (8 + count_bits) * pairs + addr_width * (nseg + 1)


def handshake_ref(route_pairs, enables, readies):
    """Router handshake evaluated straight from an explicit (src, dst)
    pair list.  Returns (dst_enables, src_readies, select, conflict)."""
    num_src, num_dst = len(enables), len(readies)
    dst_en = [False] * num_dst
    select = [None] * num_dst
    conflict = False
    for d in range(num_dst):
        drivers = [s for (s, dd) in route_pairs if dd == d and enables[s]]
        if len(drivers) > 1:
            conflict = True
        if drivers:
            dst_en[d] = True
            select[d] = drivers[0]
    src_rdy = []
    for s in range(num_src):
        dsts = [d for (ss, d) in route_pairs if ss == s]
        src_rdy.append(all(readies[d] for d in dsts))
    return dst_en, src_rdy, select, conflict


def fragmentation_pass_sim(work_v, work_h, rows, cols):
    """Average active PEs when a work_v x work_h grid is tiled onto a
    rows x cols array, simulated tile by tile."""
    active_per_pass = []
    for v0 in range(0, work_v, rows):
        for h0 in range(0, work_h, cols):
            tile_v = min(rows, work_v - v0)
            tile_h = min(cols, work_h - h0)
            active_per_pass.append(tile_v * tile_h)
    return sum(active_per_pass) / len(active_per_pass)


def passes_average_ref(work, num_pes):
    """Average parallelism when `work` units run on num_pes PEs."""
    schedule = []
    remaining = work
    while remaining > 0:
        batch = min(num_pes, remaining)
        schedule.append(batch)
        remaining -= batch
    return sum(schedule) / len(schedule)


def mapping_space_ref(g, n, m, c, h, w, r, s, u):
    """Every legal factor tuple (m0, c0, s, r_sp, c_sp, g_v, e_sp, m_sp, g_h)
    for the default 24x8 array, built by direct nested iteration with the
    constraints restated as literal numbers."""
    e = (h - r) // u + 1
    f = (w - s) // u + 1

    def pool(dim, cap):
        vals = {d for d in range(1, dim + 1) if dim % d == 0}
        vals |= {math.ceil(dim / k) for k in range(1, dim + 1)}
        return sorted(v for v in vals if v <= cap)

    out = set()
    if s > 15:
        return out
    for m0 in pool(m, min(m, 32)):
        if m0 * f > 3072:
            continue
        c0_cap = min(c, 15 // s, 16 // u)
        if c0_cap < 1:
            continue
        for c0 in pool(c, c0_cap):
            if c0 * w * 3 > 4608:
                continue
            c_super = math.ceil(c / c0)
            m_super = math.ceil(m / m0)
            for r_sp in pool(r, min(r, 24)):
                for c_sp in pool(c_super, min(c_super, 24 // r_sp)):
                    for g_v in pool(g, min(g, 24 // (r_sp * c_sp))):
                        for e_sp in pool(e, min(e, 8)):
                            for m_sp in pool(m_super, min(m_super, 8 // e_sp)):
                                gh_cap = min(math.ceil(g / g_v),
                                             8 // (e_sp * m_sp))
                                if gh_cap < 1:
                                    continue
                                for g_h in pool(math.ceil(g / g_v), gh_cap):
                                    if g_v * g_h > g:
                                        continue
                                    out.add((m0, c0, s, r_sp, c_sp, g_v,
                                             e_sp, m_sp, g_h))
    return out


def array_timing_ref(shape, tensors, mapping, variant):
    """Event-driven re-simulation of one layer on the cluster array.

    Cuts every (pass, PE) tile out of zero-padded operands with flat
    loops, runs each tile through the single-PE machine (itself checked
    against dense oracles elsewhere), and folds per-pass maxima into
    array cycles.  Everything the array engine adds on top of the PE --
    the partition, the pass schedule, the slowest-PE rule, the fill
    charge -- is recomputed here independently.
    """
    import itertools

    import numpy as np

    from eyesim.csc import encode_iact_stream, encode_weight_matrix
    from eyesim.engine import ArchVariant
    from eyesim.pe import PeMapping, PeMode, SpadConfig, run_pe

    variant = ArchVariant(variant)
    pe = mapping.pe
    m0, c0, s0, u = pe.m0, pe.c0, pe.s0, pe.u
    # columns never span a count-field overflow, so stored pairs == nonzeros
    assert m0 <= 16
    t = mapping.temporal
    g_v, g_h = mapping.groups_vertical, mapping.groups_horizontal
    m_sp, c_sp = mapping.out_ch_spatial, mapping.in_ch_spatial
    r_sp, e_sp = mapping.filt_rows_spatial, mapping.out_rows_spatial
    f, n = shape.f, shape.n

    g_cov = t["g"] * g_v * g_h
    m_cov = t["m"] * m_sp * m0
    c_cov = t["c"] * c_sp * c0
    r_cov = t["r"] * r_sp
    e_cov = t["e"] * e_sp
    h_need = (e_cov - 1) * u + r_cov
    w_need = (f - 1) * u + s0

    ip = np.zeros((g_cov, n, c_cov, h_need, w_need), dtype=np.int64)
    hl, wl = min(shape.h, h_need), min(shape.w, w_need)
    ip[:shape.g, :, :shape.c, :hl, :wl] = \
        np.asarray(tensors.iacts)[:, :, :, :hl, :wl]
    wpad = np.zeros((g_cov, m_cov, c_cov, r_cov, s0), dtype=np.int64)
    wpad[:shape.g, :shape.m, :shape.c, :shape.r, :] = tensors.weights

    roomy = SpadConfig(iact_addr_entries=10**6, iact_data_entries=10**6,
                       weight_addr_entries=10**6, weight_data_entries=10**6,
                       psum_entries=32)
    mode = {ArchVariant.V2: PeMode.SPARSE_SKIP,
            ArchVariant.V15: PeMode.DENSE_GATE,
            ArchVariant.V1: PeMode.DENSE_GATE_IACT_ONLY}[variant]
    dw_bypass = shape.kind == "dw"

    out = np.zeros((g_cov, n, m_cov, e_cov, f), dtype=np.int64)
    compute = 0
    fill_total = 0
    switched = 0
    gated = 0
    pe_tuples = list(itertools.product(range(g_v), range(g_h), range(m_sp),
                                       range(c_sp), range(r_sp), range(e_sp)))
    for nn, gt, mt, ct, rt, et in itertools.product(
            range(n), range(t["g"]), range(t["m"]), range(t["c"]),
            range(t["r"]), range(t["e"])):
        works = []
        for gv, gh, msp, csp, rsp, esp in pe_tuples:
            g_idx = (gt * g_v + gv) * g_h + gh
            m_base = (mt * m_sp + msp) * m0
            c_base = (ct * c_sp + csp) * c0
            r_idx = rt * r_sp + rsp
            e_idx = et * e_sp + esp
            if e_idx >= shape.e:
                works.append(0)       # slack output rows get no work
                continue
            h_row = e_idx * u + r_idx
            if variant is ArchVariant.V2:
                stream = [int(ip[g_idx, nn, c_base + cc, h_row, x])
                          for x in range(w_need) for cc in range(c0)]
                wmat = [[int(wpad[g_idx, m_base + mi, c_base + (j % c0),
                                  r_idx, j // c0])
                         for j in range(c0 * s0)] for mi in range(m0)]
                res = run_pe(stream if dw_bypass
                             else encode_iact_stream(stream, c0 * u),
                             encode_weight_matrix(wmat),
                             PeMapping(m0, c0, s0, u), mode=mode,
                             spads=roomy, num_windows=f)
            else:
                m_real = min(m0, shape.m - m_base)
                c_real = min(c0, shape.c - c_base)
                if (g_idx >= shape.g or r_idx >= shape.r
                        or h_row >= shape.h or m_real <= 0 or c_real <= 0):
                    works.append(0)   # fully padded tile
                    continue
                stream = [int(ip[g_idx, nn, c_base + cc, h_row, x])
                          for x in range(w_need) for cc in range(c_real)]
                wmat = [[int(wpad[g_idx, m_base + mi, c_base + (j % c_real),
                                  r_idx, j // c_real])
                         for j in range(c_real * s0)] for mi in range(m_real)]
                res = run_pe(stream, wmat, PeMapping(m_real, c_real, s0, u),
                             mode=mode, spads=roomy, num_windows=f)
            works.append(res.work_cycles)
            switched += res.macs_executed
            gated += res.gated_macs
            rows = np.array(res.psums, dtype=np.int64)
            out[g_idx, nn, m_base:m_base + rows.shape[0], e_idx, :] += rows
        mx = max(works)
        compute += mx
        if mx > 0:
            fill_total += variant.pipeline_fill
    return {
        "compute_cycles": compute + fill_total,
        "fill_cycles": fill_total,
        "switched": switched,
        "gated": gated,
        "psums": out[:shape.g, :, :shape.m, :shape.e, :],
    }


def weight_stream_words_ref(shape, weights, mapping):
    """24-bit words in one full-array compressed weight load, tile by
    tile through the codec (tiles keyed by group, m-block, c-block and
    filter row; pairs pack two to a word within a tile)."""
    import numpy as np

    from eyesim.csc import encode_weight_matrix

    pe = mapping.pe
    t = mapping.temporal
    m_tiles = t["m"] * mapping.out_ch_spatial
    c_tiles = t["c"] * mapping.in_ch_spatial
    g_cov = t["g"] * mapping.groups_vertical * mapping.groups_horizontal
    r_cov = t["r"] * mapping.filt_rows_spatial
    wpad = np.zeros((g_cov, m_tiles * pe.m0, c_tiles * pe.c0, r_cov, pe.s0),
                    dtype=np.int64)
    wpad[:shape.g, :shape.m, :shape.c, :shape.r, :] = weights
    words = 0
    for gi in range(g_cov):
        for mt in range(m_tiles):
            for ct in range(c_tiles):
                for ri in range(r_cov):
                    wmat = [[int(wpad[gi, mt * pe.m0 + mi,
                                      ct * pe.c0 + (j % pe.c0),
                                      ri, j // pe.c0])
                             for j in range(pe.c0 * pe.s0)]
                            for mi in range(pe.m0)]
                    enc = encode_weight_matrix(wmat)
                    words += (len(enc.data) + 1) // 2
    return words
