"""Search for row-pairing mappings of one layer onto the cluster array.

A mapping splits each layer dimension into a per-PE factor, a spatial
factor across the physical array, and temporal passes for whatever is
left (always a ceiling, with the slack charged as idle work).  Vertical
placement carries the accumulating dimensions (filter rows, input
channels, plus spread-out groups); horizontal placement carries the
independent ones (output rows, output channels, groups).  Filter
columns live entirely inside a PE and output columns stream through it,
so neither is ever split.

Enumeration walks divisor-based factors plus ceiling variants, prunes
by scratchpad and buffer capacity, and scores candidates with a closed
form pass schedule; the best candidate minimizes predicted cycles with
deterministic tie-breaking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping as MappingT, NamedTuple, Optional, Sequence, Tuple

from .csc import CscTensor
from .noc import (
    ClusterArrayConfig,
    DEFAULT_ARRAY,
    ModeAssignment,
    NocMode,
    Operand,
    RoutingConfig,
    Source,
)
from .pe import DEFAULT_SPADS, PSUM_BITS, CapacityError, PeMapping, SpadConfig
from .workload import LayerShape, mac_count, data_counts


class MappingError(ValueError):
    """No legal mapping, or a mapping that violates its constraints."""


class PeTile(NamedTuple):
    layer: str
    m0: int
    c0: int
    s: int
    nominal_weights: int
    max_compressed: int


# Per-PE weight tiles of the pruned eight-layer reference network, kept
# as regression constants.  nominal = m0*c0*s; max_compressed is the
# worst per-PE entry count actually observed for the pruned weights and
# must respect the 96-word (192-entry) weight data SPad.
SPARSE_ALEXNET_PE_TABLE = (
    PeTile("CONV1", 12, 1, 11, 132, 64),
    PeTile("CONV2", 32, 2, 5, 320, 86),
    PeTile("CONV3", 32, 5, 3, 480, 126),
    PeTile("CONV4", 24, 4, 3, 288, 100),
    PeTile("CONV5", 32, 4, 3, 384, 174),
    PeTile("FC6", 32, 2, 6, 384, 92),
    PeTile("FC7", 32, 15, 1, 480, 84),
    PeTile("FC8", 32, 15, 1, 480, 170),
)


def factor_candidates(dim: int, cap: int) -> Tuple[int, ...]:
    """Useful factor values for one dimension: its divisors and every
    distinct ceiling split, clipped to cap."""
    if dim < 1 or cap < 1:
        raise ValueError("dimension and cap must be at least 1")
    vals = {d for d in range(1, dim + 1) if dim % d == 0}
    vals.update(-(-dim // k) for k in range(1, dim + 1))
    return tuple(sorted(v for v in vals if v <= cap))


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class Mapping:
    """One placement of a layer onto the array.

    Spatial fields count physical PE rows/columns claimed per dimension;
    everything not covered by pe * spatial runs as temporal passes.
    """

    shape: LayerShape
    pe: PeMapping
    filt_rows_spatial: int = 1     # vertical: filter rows
    in_ch_spatial: int = 1         # vertical: input-channel stacks beyond c0
    groups_vertical: int = 1       # vertical: channel groups
    out_rows_spatial: int = 1      # horizontal: output rows
    out_ch_spatial: int = 1        # horizontal: output-channel stacks beyond m0
    groups_horizontal: int = 1     # horizontal: channel groups
    noc: Optional[RoutingConfig] = None

    def __post_init__(self) -> None:
        for name in ("filt_rows_spatial", "in_ch_spatial", "groups_vertical",
                     "out_rows_spatial", "out_ch_spatial", "groups_horizontal"):
            if getattr(self, name) < 1:
                raise MappingError(f"{name} must be at least 1")
        if self.pe.s0 != self.shape.s:
            raise MappingError("filter columns are never split: s0 must equal s")
        if self.pe.u != self.shape.u:
            raise MappingError("PE stride must match the layer stride")
        if self.filt_rows_spatial > self.shape.r:
            raise MappingError("more filter-row positions than filter rows")
        if self.out_rows_spatial > self.shape.e:
            raise MappingError("more output-row positions than output rows")
        if self.groups_vertical * self.groups_horizontal > self.shape.g:
            raise MappingError("more group positions than groups")
        if self.noc is None:
            object.__setattr__(self, "noc", derive_routing(self))

    # -------------------------------------------------- geometry

    @property
    def rows_used(self) -> int:
        return self.filt_rows_spatial * self.in_ch_spatial * self.groups_vertical

    @property
    def cols_used(self) -> int:
        return self.out_rows_spatial * self.out_ch_spatial * self.groups_horizontal

    @property
    def active_pes(self) -> int:
        return self.rows_used * self.cols_used

    # -------------------------------------------------- coverage

    @property
    def temporal(self) -> dict:
        """Pass counts per dimension (always the covering ceiling)."""
        shp, pe = self.shape, self.pe
        return {
            "m": _ceil_div(shp.m, pe.m0 * self.out_ch_spatial),
            "c": _ceil_div(shp.c, pe.c0 * self.in_ch_spatial),
            "r": _ceil_div(shp.r, self.filt_rows_spatial),
            "e": _ceil_div(shp.e, self.out_rows_spatial),
            "g": _ceil_div(shp.g, self.groups_vertical * self.groups_horizontal),
            "n": shp.n,
        }

    @property
    def total_passes(self) -> int:
        prod = 1
        for v in self.temporal.values():
            prod *= v
        return prod

    def coverage(self) -> dict:
        """pe * spatial * temporal product per dimension (>= the dim)."""
        t = self.temporal
        shp, pe = self.shape, self.pe
        return {
            "m": pe.m0 * self.out_ch_spatial * t["m"],
            "c": pe.c0 * self.in_ch_spatial * t["c"],
            "r": self.filt_rows_spatial * t["r"],
            "e": self.out_rows_spatial * t["e"],
            "g": self.groups_vertical * self.groups_horizontal * t["g"],
            "n": shp.n,
            "f": shp.f,
            "s": pe.s0,
        }

    def slack(self) -> dict:
        cov = self.coverage()
        shp = self.shape
        dims = {"m": shp.m, "c": shp.c, "r": shp.r, "e": shp.e,
                "g": shp.g, "n": shp.n, "f": shp.f, "s": shp.s}
        return {k: cov[k] - dims[k] for k in dims}

    @property
    def cycles_per_pass(self) -> int:
        pe = self.pe
        return pe.m0 * pe.c0 * pe.s0 * self.shape.f

    @property
    def padded_macs(self) -> int:
        """Scheduled MAC slots including ceiling slack; the useful part
        is exactly the layer's mac count."""
        return self.total_passes * self.active_pes * self.cycles_per_pass

    @property
    def idle_macs(self) -> int:
        return self.padded_macs - mac_count(self.shape)

    def factor_tuple(self) -> Tuple[int, ...]:
        return (self.pe.m0, self.pe.c0, self.pe.s0,
                self.filt_rows_spatial, self.in_ch_spatial,
                self.groups_vertical, self.out_rows_spatial,
                self.out_ch_spatial, self.groups_horizontal)

    # -------------------------------------------------- placement

    def active_pe_ids(self, arr: ClusterArrayConfig = DEFAULT_ARRAY) -> frozenset:
        """Physical PE ids switched on: the top-left rows_used x cols_used
        block of the flattened PE grid."""
        ids = set()
        for row in range(self.rows_used):
            cr, pr = divmod(row, arr.pe_rows)
            for col in range(self.cols_used):
                cc, pc = divmod(col, arr.pe_cols)
                ids.add(arr.pe_id(cr, cc, pr, pc))
        return frozenset(ids)

    def validate(self, arr: ClusterArrayConfig = DEFAULT_ARRAY,
                 spads: SpadConfig = DEFAULT_SPADS,
                 sparse: bool = True) -> None:
        """Raise MappingError for any violated placement constraint."""
        shp, pe = self.shape, self.pe
        total_rows = arr.cluster_rows * arr.pe_rows
        total_cols = arr.cluster_cols * arr.pe_cols
        if self.rows_used > total_rows:
            raise MappingError(
                f"{self.rows_used} PE rows requested, array has {total_rows}")
        if self.cols_used > total_cols:
            raise MappingError(
                f"{self.cols_used} PE columns requested, array has {total_cols}")
        k = pe.c0 * pe.s0
        if k + 1 > spads.weight_addr_entries:
            raise MappingError(
                f"window of {k} weight columns needs {k + 1} address entries, "
                f"SPad holds {spads.weight_addr_entries}")
        if not sparse:
            words = k * _ceil_div(pe.m0, 2)
            if words > spads.weight_data_entries:
                raise MappingError(
                    f"dense weight tile needs {words} words, SPad holds "
                    f"{spads.weight_data_entries}")
        psum_glb = arr.psum_banks * arr.psum_bank_bytes * 8 // PSUM_BITS
        if pe.m0 * shp.f > psum_glb:
            raise MappingError(
                f"output-row tile holds {pe.m0 * shp.f} live psums per "
                f"cluster, GLB psum space holds {psum_glb}")
        iact_glb_values = arr.iact_banks * arr.iact_bank_bytes
        if pe.c0 * shp.w * arr.pe_rows > iact_glb_values:
            raise MappingError(
                f"input-row tile holds {pe.c0 * shp.w * arr.pe_rows} iact "
                f"values per cluster, GLB iact space holds {iact_glb_values}")

    # -------------------------------------------------- serialization

    def to_json_dict(self) -> dict:
        shp = self.shape
        return {
            "shape": {"g": shp.g, "n": shp.n, "m": shp.m, "c": shp.c,
                      "h": shp.h, "w": shp.w, "r": shp.r, "s": shp.s,
                      "u": shp.u, "kind": shp.kind},
            "pe": {"m0": self.pe.m0, "c0": self.pe.c0,
                   "s0": self.pe.s0, "u": self.pe.u},
            "spatial": {"rows": {"r": self.filt_rows_spatial,
                                 "c": self.in_ch_spatial,
                                 "g": self.groups_vertical},
                        "cols": {"e": self.out_rows_spatial,
                                 "m": self.out_ch_spatial,
                                 "g": self.groups_horizontal}},
            "temporal": self.temporal,
            "noc": self.noc.to_json_dict(),
        }

    @classmethod
    def from_json_dict(cls, obj: MappingT) -> "Mapping":
        shape = LayerShape(**obj["shape"])
        pe = PeMapping(**obj["pe"])
        rows = obj["spatial"]["rows"]
        cols = obj["spatial"]["cols"]
        noc = RoutingConfig.from_json_dict(obj["noc"]) if "noc" in obj else None
        return cls(shape=shape, pe=pe,
                   filt_rows_spatial=rows["r"], in_ch_spatial=rows["c"],
                   groups_vertical=rows["g"], out_rows_spatial=cols["e"],
                   out_ch_spatial=cols["m"], groups_horizontal=cols["g"],
                   noc=noc)


def derive_routing(mapping: Mapping) -> RoutingConfig:
    """Deterministic mode choice from the spatial reuse pattern.

    Psums accumulate over the vertically stacked filter rows and input
    channels, so any vertical stacking turns on vertical multicast.
    Weights are shared by the output-row columns only when those are the
    sole horizontal dimension (other horizontal dims need different
    weights).  Iacts are shared across output-channel columns, and also
    across filter rows when those overlap; spread-out groups force
    per-cluster streams because their inputs are disjoint.
    """
    group_spread = mapping.groups_vertical * mapping.groups_horizontal
    if group_spread > 1:
        iact = NocMode.UNICAST
    elif mapping.out_ch_spatial > 1 and mapping.filt_rows_spatial > 1:
        iact = NocMode.BROADCAST
    elif mapping.out_ch_spatial > 1:
        iact = NocMode.HORIZONTAL_MULTICAST
    else:
        iact = NocMode.UNICAST
    pure_output_cols = (mapping.out_ch_spatial == 1
                       and mapping.groups_horizontal == 1)
    if mapping.out_rows_spatial > 1 and pure_output_cols:
        weight = NocMode.HORIZONTAL_MULTICAST
    else:
        weight = NocMode.UNICAST
    if mapping.filt_rows_spatial * mapping.in_ch_spatial > 1:
        psum = NocMode.VERTICAL_MULTICAST
    else:
        psum = NocMode.UNICAST
    return RoutingConfig(iact=ModeAssignment(iact),
                         weight=ModeAssignment(weight),
                         psum=ModeAssignment(psum))


def mapping_sources(mapping: Mapping,
                    arr: ClusterArrayConfig = DEFAULT_ARRAY) -> dict:
    """Source lists per operand realizing the mapping's routing modes,
    for delivery validation."""
    clusters_v = _ceil_div(mapping.rows_used, arr.pe_rows)
    clusters_h = _ceil_div(mapping.cols_used, arr.pe_cols)
    lanes_r = min(arr.pe_rows, mapping.rows_used)
    lanes_c = min(arr.pe_cols, mapping.cols_used)

    def per_cluster(port, lanes):
        return [Source(cr, cc, ln, port)
                for cr in range(clusters_v) for cc in range(clusters_h)
                for ln in range(lanes)]

    def per_cluster_row(port, lanes):
        return [Source(cr, 0, ln, port)
                for cr in range(clusters_v) for ln in range(lanes)]

    out = {}
    mode = mapping.noc.iact.mode
    if mode is NocMode.BROADCAST:
        out[Operand.IACT] = [Source(0, 0, 0)]
    elif mode is NocMode.HORIZONTAL_MULTICAST:
        out[Operand.IACT] = per_cluster_row("glb", lanes_r)
    else:
        out[Operand.IACT] = per_cluster("glb", lanes_r)
    if mapping.noc.weight.mode is NocMode.HORIZONTAL_MULTICAST:
        out[Operand.WEIGHT] = per_cluster_row("offchip", lanes_r)
    else:
        out[Operand.WEIGHT] = per_cluster("offchip", lanes_r)
    if mapping.noc.psum.mode is NocMode.VERTICAL_MULTICAST:
        out[Operand.PSUM] = [Source(0, cc, ln)
                             for cc in range(clusters_h)
                             for ln in range(lanes_c)]
    else:
        out[Operand.PSUM] = per_cluster("glb", lanes_c)
    return out


@dataclass(frozen=True)
class MappingScore:
    predicted_cycles: int
    active_pes: int
    active_util: Fraction
    dram_traffic: int
    noc_bound: MappingT

    def to_json_dict(self) -> dict:
        return {"predicted_cycles": self.predicted_cycles,
                "active_pes": self.active_pes,
                "active_util": float(self.active_util),
                "dram_traffic": self.dram_traffic,
                "noc_bound": {Operand(k).value: bool(v)
                              for k, v in self.noc_bound.items()}}


def _stream_estimate(mode: NocMode, clusters_v: int, clusters_h: int,
                     lanes: int) -> int:
    if mode is NocMode.BROADCAST:
        return 1
    if mode is NocMode.HORIZONTAL_MULTICAST:
        return clusters_v * lanes
    if mode is NocMode.VERTICAL_MULTICAST:
        return clusters_h * lanes
    return clusters_v * clusters_h * lanes


def score_mapping(mapping: Mapping,
                  arr: ClusterArrayConfig = DEFAULT_ARRAY) -> MappingScore:
    """Closed-form schedule score: dense-equivalent cycles, utilization,
    a deterministic DRAM-traffic estimate for tie-breaking, and coarse
    per-operand flags for streams that outrun the router fabric."""
    shp = mapping.shape
    useful = mac_count(shp)
    cycles = mapping.total_passes * mapping.cycles_per_pass
    active = mapping.active_pes
    util = Fraction(useful, mapping.padded_macs)

    counts = data_counts(shp)
    t = mapping.temporal
    # iacts re-stream per output-channel pass; weights re-stream per
    # output-row pass and batch element; psums take one spill/refill
    # round trip per extra accumulation pass plus the final writeout
    dram = (counts.iacts * t["m"]
            + counts.weights * t["e"] * shp.n
            + counts.psums * (2 * (t["c"] * t["r"] - 1) + 1))

    clusters_v = _ceil_div(mapping.rows_used, arr.pe_rows)
    clusters_h = _ceil_div(mapping.cols_used, arr.pe_cols)
    lanes_r = min(arr.pe_rows, mapping.rows_used)
    lanes_c = min(arr.pe_cols, mapping.cols_used)
    iact_reuse = mapping.out_ch_spatial * (
        mapping.filt_rows_spatial
        if mapping.noc.iact.mode is NocMode.BROADCAST else 1)
    weight_reuse = (mapping.out_rows_spatial
                    if mapping.noc.weight.mode is NocMode.HORIZONTAL_MULTICAST
                    else 1)
    psum_share = mapping.filt_rows_spatial * mapping.in_ch_spatial
    demand = {
        Operand.IACT: Fraction(active, iact_reuse),
        Operand.WEIGHT: Fraction(active, weight_reuse),
        # one finished psum per chain per window of accumulation
        Operand.PSUM: Fraction(active,
                               psum_share * mapping.pe.c0 * mapping.pe.s0),
    }
    delivered = {
        Operand.IACT: 3 * _stream_estimate(mapping.noc.iact.mode,
                                           clusters_v, clusters_h, lanes_r),
        Operand.WEIGHT: 2 * _stream_estimate(mapping.noc.weight.mode,
                                             clusters_v, clusters_h, lanes_r),
        Operand.PSUM: 2 * _stream_estimate(mapping.noc.psum.mode,
                                           clusters_v, clusters_h, lanes_c),
    }
    flags = {op: demand[op] > delivered[op] for op in Operand}
    return MappingScore(predicted_cycles=cycles, active_pes=active,
                        active_util=util, dram_traffic=dram, noc_bound=flags)


def enumerate_mappings(shape: LayerShape,
                       arr: ClusterArrayConfig = DEFAULT_ARRAY,
                       spads: SpadConfig = DEFAULT_SPADS,
                       sparse: bool = True) -> Iterator[Mapping]:
    """All placements satisfying the capacity and dimension constraints.

    With sparse=True the weight data SPad check is deferred to
    sparse_fit (compressed weights are what must fit); dense mode
    requires the nominal tile to fit outright.
    """
    total_rows = arr.cluster_rows * arr.pe_rows
    total_cols = arr.cluster_cols * arr.pe_cols
    psum_glb = arr.psum_banks * arr.psum_bank_bytes * 8 // PSUM_BITS
    iact_glb_values = arr.iact_banks * arr.iact_bank_bytes

    s0 = shape.s
    u = shape.u
    k_cap = spads.weight_addr_entries - 1
    c0_cap = min(shape.c, k_cap // s0 if s0 <= k_cap else 0,
                 spads.iact_data_entries // u)
    if c0_cap < 1:
        return
    m0_cap = min(shape.m, spads.psum_entries)
    m0_pool = factor_candidates(shape.m, m0_cap)
    c0_pool = factor_candidates(shape.c, c0_cap)
    r_pool = factor_candidates(shape.r, min(shape.r, total_rows))
    e_pool = factor_candidates(shape.e, min(shape.e, total_cols))

    for m0 in m0_pool:
        if m0 * shape.f > psum_glb:
            continue
        for c0 in c0_pool:
            if c0 * shape.w * arr.pe_rows > iact_glb_values:
                continue
            if not sparse:
                words = c0 * s0 * _ceil_div(m0, 2)
                if words > spads.weight_data_entries:
                    continue
            try:
                pe = PeMapping(m0=m0, c0=c0, s0=s0, u=u)
            except CapacityError:
                continue
            c_super = _ceil_div(shape.c, c0)
            m_super = _ceil_div(shape.m, m0)
            for r_sp in r_pool:
                c_sp_pool = factor_candidates(
                    c_super, min(c_super, total_rows // r_sp))
                for c_sp in c_sp_pool:
                    g_v_pool = factor_candidates(
                        shape.g, min(shape.g, total_rows // (r_sp * c_sp)))
                    for g_v in g_v_pool:
                        for e_sp in e_pool:
                            m_sp_pool = factor_candidates(
                                m_super, min(m_super, total_cols // e_sp))
                            for m_sp in m_sp_pool:
                                g_h_cap = min(_ceil_div(shape.g, g_v),
                                              total_cols // (e_sp * m_sp))
                                if g_h_cap < 1:
                                    continue
                                g_h_pool = factor_candidates(
                                    _ceil_div(shape.g, g_v), g_h_cap)
                                for g_h in g_h_pool:
                                    if g_v * g_h > shape.g:
                                        continue
                                    yield Mapping(
                                        shape=shape, pe=pe,
                                        filt_rows_spatial=r_sp,
                                        in_ch_spatial=c_sp,
                                        groups_vertical=g_v,
                                        out_rows_spatial=e_sp,
                                        out_ch_spatial=m_sp,
                                        groups_horizontal=g_h,
                                    )


def select_best(shape: LayerShape,
                arr: ClusterArrayConfig = DEFAULT_ARRAY,
                spads: SpadConfig = DEFAULT_SPADS,
                candidates: Optional[Iterable[Mapping]] = None,
                sparse: bool = True) -> Tuple[Mapping, MappingScore]:
    """Minimum predicted cycles; ties go to more active PEs, then less
    DRAM traffic, then the lexicographically smallest factor tuple."""
    if candidates is None:
        candidates = enumerate_mappings(shape, arr, spads, sparse=sparse)
    best = None
    best_key = None
    for mapping in candidates:
        cycles = mapping.total_passes * mapping.cycles_per_pass
        if best_key is not None and cycles > best_key[0]:
            continue
        score = score_mapping(mapping, arr)
        key = (score.predicted_cycles, -score.active_pes,
               score.dram_traffic, mapping.factor_tuple())
        if best_key is None or key < best_key:
            best, best_key = (mapping, score), key
    if best is None:
        raise MappingError("no legal mapping for this layer and array")
    return best


@dataclass(frozen=True)
class SparseFitReport:
    fits: bool
    nominal_entries: int
    word_limit: int
    per_pe_words: Tuple[int, ...]
    worst_pe: int
    worst_words: int
    offenders: Tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {"fits": self.fits,
                "nominal_entries": self.nominal_entries,
                "word_limit": self.word_limit,
                "worst_pe": self.worst_pe,
                "worst_words": self.worst_words,
                "offenders": list(self.offenders)}


def sparse_fit(mapping: Mapping, pe_weights: Sequence[CscTensor],
               spads: SpadConfig = DEFAULT_SPADS) -> SparseFitReport:
    """Check each PE's compressed weight tile against the weight data
    SPad.  Tensors must be shaped as the mapping's tile: one segment per
    window column, one row per output channel."""
    if not pe_weights:
        raise MappingError("no per-PE weight tensors supplied")
    k = mapping.pe.c0 * mapping.pe.s0
    words = []
    for idx, tensor in enumerate(pe_weights):
        if tensor.num_segments != k:
            raise MappingError(
                f"PE {idx}: tensor has {tensor.num_segments} window "
                f"columns, mapping expects {k}")
        if tensor.segment_len != mapping.pe.m0:
            raise MappingError(
                f"PE {idx}: tensor rows {tensor.segment_len} do not match "
                f"the {mapping.pe.m0}-channel tile")
        words.append(_ceil_div(tensor.num_entries, 2))
    limit = spads.weight_data_entries
    offenders = tuple(i for i, w in enumerate(words) if w > limit)
    worst_pe = max(range(len(words)), key=words.__getitem__)
    return SparseFitReport(
        fits=not offenders,
        nominal_entries=mapping.pe.m0 * k,
        word_limit=limit,
        per_pe_words=tuple(words),
        worst_pe=worst_pe,
        worst_words=words[worst_pe],
        offenders=offenders,
    )
