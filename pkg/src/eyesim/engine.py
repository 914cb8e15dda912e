"""Layer and model simulation across the three architecture variants.

Cycle accounting follows the mapping's padded pass schedule.  Within a
pass every PE issues its slot count (sparse-skip arithmetic for the
SIMD machine, one pair per cycle for the gated dense machines) and the
array advances at the slowest PE; delivery over the mesh fabric and the
external memory interface bound the whole layer from below.  Partial
sums are produced by straight tensor arithmetic, so functional output
never depends on the timing model.

Energy is pure event counting times a configurable cost table; the
default unit costs are round numbers for relative comparison, not
silicon measurements.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Dict, Iterable, Mapping as MappingT, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import tomllib
except ModuleNotFoundError:           # 3.10 and older
    import tomli as tomllib

from .eyexam import Dataflow, ExamConfig, analyze
from .mapper import Mapping, select_best
from .noc import ClusterArrayConfig, DEFAULT_ARRAY, Operand, delivered_bandwidth, router_spec
from .pe import (
    DEFAULT_SPADS,
    DENSE_PIPELINE_FILL,
    PSUM_BITS,
    SPARSE_PIPELINE_FILL,
    PeMode,
    SpadConfig,
)
from .workload import DnnModel, LayerShape, data_counts, mac_count

CLOCK_HZ = 200_000_000
RESULT_SCHEMA = 1

# bit widths of the five scratchpad arrays, keyed like SpadConfig fields
SPAD_BITS = {
    "iact_addr": 4,
    "iact_data": 12,
    "weight_addr": 7,
    "weight_data": 24,
    "psum": PSUM_BITS,
}


class EngineError(RuntimeError):
    """Simulation input or internal consistency failure."""


class ArchVariant(str, enum.Enum):
    """The three silicon generations being compared.

    All share the PE count, GLB capacity, and 8b/20b precisions; they
    differ in the network fabric and the PE's sparsity handling.
    """

    V1 = "v1"       # single-stream multicast network, gates zero iacts
    V15 = "v15"     # hierarchical mesh, gates either zero operand
    V2 = "v2"       # hierarchical mesh, skips zeros with SIMD-2 issue

    @property
    def simd_width(self) -> int:
        return 2 if self is ArchVariant.V2 else 1

    @property
    def pipeline_fill(self) -> int:
        return (SPARSE_PIPELINE_FILL if self is ArchVariant.V2
                else DENSE_PIPELINE_FILL)

    @property
    def hierarchical_noc(self) -> bool:
        return self is not ArchVariant.V1

    @property
    def pe_mode(self) -> PeMode:
        if self is ArchVariant.V2:
            return PeMode.SPARSE_SKIP
        if self is ArchVariant.V15:
            return PeMode.DENSE_GATE
        return PeMode.DENSE_GATE_IACT_ONLY


@dataclass(frozen=True)
class ArchConfig:
    variant: ArchVariant = ArchVariant.V2
    arr: ClusterArrayConfig = DEFAULT_ARRAY
    spads: SpadConfig = DEFAULT_SPADS
    clock_hz: int = CLOCK_HZ

    @property
    def num_pes(self) -> int:
        return self.arr.num_pes

    @property
    def macs_per_cycle(self) -> int:
        return self.num_pes * self.variant.simd_width

    @property
    def peak_ops_per_sec(self) -> int:
        # one MAC counts as two ops (multiply and add)
        return self.macs_per_cycle * self.clock_hz * 2

    def spad_bytes(self) -> Dict[str, float]:
        ent = self.spads
        sizes = {
            "iact_addr": ent.iact_addr_entries,
            "iact_data": ent.iact_data_entries,
            "weight_addr": ent.weight_addr_entries,
            "weight_data": ent.weight_data_entries,
            "psum": ent.psum_entries,
        }
        return {k: sizes[k] * SPAD_BITS[k] / 8 for k in sizes}


def arch_report(cfg: ArchConfig = ArchConfig()) -> dict:
    """Headline capacity and throughput identities for one variant."""
    arr = cfg.arr
    return {
        "variant": cfg.variant.value,
        "num_pes": cfg.num_pes,
        "clusters": arr.num_clusters,
        "cluster_grid": [arr.cluster_rows, arr.cluster_cols],
        "pe_grid": [arr.pe_rows, arr.pe_cols],
        "macs_per_cycle": cfg.macs_per_cycle,
        "clock_hz": cfg.clock_hz,
        "peak_gops": cfg.peak_ops_per_sec / 1e9,
        "glb_bytes": arr.glb_bytes,
        "glb_kib": arr.glb_bytes / 1024,
        "glb_bytes_per_cluster": arr.glb_bytes_per_cluster,
        "spad_bytes": cfg.spad_bytes(),
    }


# ---------------------------------------------------------------- tensors


@dataclass(frozen=True)
class LayerTensors:
    """Dense operand arrays: iacts (g, n, c, h, w), weights (g, m, c, r, s)."""

    iacts: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        if self.iacts.ndim != 5 or self.weights.ndim != 5:
            raise EngineError("iacts must be 5-D (g,n,c,h,w) and weights 5-D (g,m,c,r,s)")


def validate_tensors(shape: LayerShape, tensors: LayerTensors) -> None:
    want_i = (shape.g, shape.n, shape.c, shape.h, shape.w)
    want_w = (shape.g, shape.m, shape.c, shape.r, shape.s)
    if tuple(tensors.iacts.shape) != want_i:
        raise EngineError(
            f"iact tensor shape {tuple(tensors.iacts.shape)} does not match layer {want_i}")
    if tuple(tensors.weights.shape) != want_w:
        raise EngineError(
            f"weight tensor shape {tuple(tensors.weights.shape)} does not match layer {want_w}")


def synthetic_tensors(shape: LayerShape, seed: int = 0,
                      iact_density: float = 0.5,
                      weight_density: float = 1.0,
                      magnitude: int = 7) -> LayerTensors:
    """Seeded random operands with independent Bernoulli sparsity masks.

    Values are small signed integers so deep accumulations stay far from
    the 20b psum rails.
    """
    if not (0.0 <= iact_density <= 1.0 and 0.0 <= weight_density <= 1.0):
        raise EngineError("densities must lie in [0, 1]")
    rng = np.random.default_rng(seed)

    def draw(shape_t, density):
        vals = rng.integers(1, magnitude + 1, size=shape_t, dtype=np.int64)
        vals *= rng.choice((-1, 1), size=shape_t)
        mask = rng.random(size=shape_t) < density
        return vals * mask

    iacts = draw((shape.g, shape.n, shape.c, shape.h, shape.w), iact_density)
    weights = draw((shape.g, shape.m, shape.c, shape.r, shape.s), weight_density)
    return LayerTensors(iacts=iacts, weights=weights)


# Per-layer pruned weight densities for the eight-layer reference
# network, from the compressed/nominal per-PE tile ratios.
ALEXNET_WEIGHT_DENSITY = {
    "CONV1": 64 / 132, "CONV2": 86 / 320, "CONV3": 126 / 480,
    "CONV4": 100 / 288, "CONV5": 174 / 384, "FC6": 92 / 384,
    "FC7": 84 / 480, "FC8": 170 / 480,
}


def density_profile(model: DnnModel) -> Tuple[Tuple[float, float], ...]:
    """(iact_density, weight_density) per layer.

    The first layer sees the raw input image (dense); later layers get
    the post-activation 0.5 default.  Pruned weights apply only to the
    reference network whose labels appear in the density table; compact
    depthwise models run with dense weights.
    """
    out = []
    for idx, (label, _shape) in enumerate(model.layers):
        iact = 1.0 if idx == 0 else 0.5
        weight = ALEXNET_WEIGHT_DENSITY.get(label.upper(), 1.0)
        out.append((iact, weight))
    return tuple(out)


def synthetic_model_tensors(model: DnnModel, seed: int = 0) -> Dict[str, LayerTensors]:
    profile = density_profile(model)
    out = {}
    for idx, (label, shape) in enumerate(model.layers):
        iact_d, weight_d = profile[idx]
        out[label] = synthetic_tensors(shape, seed=seed + idx,
                                       iact_density=iact_d,
                                       weight_density=weight_d)
    return out


# ---------------------------------------------------------------- results


@dataclass(frozen=True)
class LayerResult:
    label: str
    variant: ArchVariant
    cycles: int
    passes: int
    active_pes: int
    active_util: Fraction
    macs_nominal: int
    macs_executed: int
    compute_cycles: int
    fill_cycles: int
    noc_cycles: Dict[str, int]
    dram_cycles: int
    bound_by: str
    dram_bytes: Dict[str, int]
    glb_bytes: Dict[str, int]
    energy_events: Dict[str, int]
    bound_check: Dict[str, int]
    psums: Optional[np.ndarray] = None

    def to_json_dict(self) -> dict:
        return {
            "schema": RESULT_SCHEMA,
            "label": self.label,
            "variant": self.variant.value,
            "cycles": self.cycles,
            "passes": self.passes,
            "active_pes": self.active_pes,
            "active_util": float(self.active_util),
            "macs_nominal": self.macs_nominal,
            "macs_executed": self.macs_executed,
            "compute_cycles": self.compute_cycles,
            "fill_cycles": self.fill_cycles,
            "noc_cycles": dict(self.noc_cycles),
            "dram_cycles": self.dram_cycles,
            "bound_by": self.bound_by,
            "dram_bytes": dict(self.dram_bytes),
            "glb_bytes": dict(self.glb_bytes),
            "energy_events": dict(self.energy_events),
            "bound_check": dict(self.bound_check),
        }


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def _pad_to(arr: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    out = np.zeros(shape, dtype=arr.dtype)
    out[tuple(slice(0, min(a, b)) for a, b in zip(arr.shape, shape))] = \
        arr[tuple(slice(0, min(a, b)) for a, b in zip(arr.shape, shape))]
    return out


def _window_view(ind: np.ndarray, r_cov: int, s: int, u: int,
                 e_cov: int, f: int) -> np.ndarray:
    """(g, n, c, e, f, r, s) window tensor over padded (g, n, c, h, w)."""
    view = sliding_window_view(ind, (r_cov, s), axis=(3, 4))
    # copy: the strided view is read-only and the mask below writes into it
    return view[:, :, :, ::u, ::u][:, :, :, :e_cov, :f].copy()


# einsum axis labels for the pass/PE work contraction
_B_AXES = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12]
_S_AXES = [0, 1, 2, 13, 14, 4, 5, 6, 10, 11, 12]
_OUT_AXES = [3, 0, 13, 4, 10, 7, 1, 2, 14, 5, 11, 8]


class _LayerWork:
    """Padded-schedule work tensors for one (layer, mapping) pair."""

    def __init__(self, shape: LayerShape, mapping: Mapping,
                 tensors: LayerTensors) -> None:
        pe = mapping.pe
        t = mapping.temporal
        self.t = t
        m0, c0, s0, u = pe.m0, pe.c0, pe.s0, pe.u
        g_t, g_v, g_h = t["g"], mapping.groups_vertical, mapping.groups_horizontal
        m_t, m_sp = t["m"], mapping.out_ch_spatial
        c_t, c_sp = t["c"], mapping.in_ch_spatial
        r_t, r_sp = t["r"], mapping.filt_rows_spatial
        e_t, e_sp = t["e"], mapping.out_rows_spatial
        n, f = shape.n, shape.f

        g_cov = g_t * g_v * g_h
        m_cov = m_t * m_sp * m0
        c_cov = c_t * c_sp * c0
        r_cov = r_t * r_sp
        e_cov = e_t * e_sp
        h_pad = (e_cov - 1) * u + r_cov
        w_pad = (f - 1) * u + s0

        wp = _pad_to(tensors.weights, (g_cov, m_cov, c_cov, r_cov, s0))
        w_nnz = (wp != 0).astype(np.int64)
        w_real = np.zeros_like(w_nnz)
        w_real[:shape.g, :shape.m, :shape.c, :shape.r, :] = 1
        m_tiles = m_t * m_sp
        self.col_nnz = w_nnz.reshape(
            g_cov, m_tiles, m0, c_cov, r_cov, s0).sum(axis=2)
        self.col_real = w_real.reshape(
            g_cov, m_tiles, m0, c_cov, r_cov, s0).sum(axis=2)

        ip = _pad_to(tensors.iacts, (g_cov, n, c_cov, h_pad, w_pad))
        i_real = np.zeros_like(ip)
        i_real[:shape.g, :, :shape.c, :min(shape.h, h_pad), :min(shape.w, w_pad)] = 1
        self.b_nnz = _window_view((ip != 0).astype(np.int64),
                                  r_cov, s0, u, e_cov, f)
        self.b_real = _window_view(i_real.astype(np.int64),
                                   r_cov, s0, u, e_cov, f)
        # slack output rows have no assigned PE work even when their
        # windows graze real input rows
        self.b_nnz[:, :, :, shape.e:] = 0
        self.b_real[:, :, :, shape.e:] = 0

        self._b_shape = (g_t, g_v, g_h, n, c_t, c_sp, c0, e_t, e_sp, f, r_t, r_sp, s0)
        self._s_shape = (g_t, g_v, g_h, m_t, m_sp, c_t, c_sp, c0, r_t, r_sp, s0)
        self.passes = n * g_t * m_t * c_t * r_t * e_t
        self.active = mapping.active_pes
        self._ip, self._wp = ip, wp
        self._geom = (r_cov, s0, u, e_cov, f)

    def work_matrix(self, b: np.ndarray, slots: np.ndarray) -> np.ndarray:
        """Per-(pass, PE) slot counts."""
        out = np.einsum(b.reshape(self._b_shape), _B_AXES,
                        slots.reshape(self._s_shape), _S_AXES, _OUT_AXES)
        return out.reshape(self.passes, self.active)

    def pair_total(self, b: np.ndarray, cols: np.ndarray) -> int:
        return int(np.einsum(b.reshape(self._b_shape), _B_AXES,
                             cols.reshape(self._s_shape), _S_AXES, []))

    def padded_psums(self, shape: LayerShape) -> np.ndarray:
        """Outputs recomputed from the padded operands the schedule
        actually streams, cropped back to the real layer."""
        win = _window_view(self._ip.astype(np.int64), *self._geom)
        out = np.einsum("gncefrs,gmcrs->gnmef",
                        win, self._wp.astype(np.int64))
        return out[:shape.g, :, :shape.m, :shape.e, :shape.f]


def compute_psums(shape: LayerShape, tensors: LayerTensors) -> np.ndarray:
    """Exact layer outputs (g, n, m, e, f) by direct sliding-window
    contraction; the reference every timing variant must reproduce."""
    validate_tensors(shape, tensors)
    it = tensors.iacts.astype(np.int64)
    wt = tensors.weights.astype(np.int64)
    view = sliding_window_view(it, (shape.r, shape.s), axis=(3, 4))
    view = view[:, :, :, ::shape.u, ::shape.u][:, :, :, :shape.e, :shape.f]
    return np.einsum("gncefrs,gmcrs->gnmef", view, wt)


def run_layer(shape: LayerShape, tensors: LayerTensors,
              mapping: Optional[Mapping] = None,
              variant: ArchVariant = ArchVariant.V2,
              bw_bytes_per_cycle: Optional[float] = None,
              arr: ClusterArrayConfig = DEFAULT_ARRAY,
              spads: SpadConfig = DEFAULT_SPADS,
              label: str = "",
              want_psums: bool = False) -> LayerResult:
    """Simulate one layer under one mapping on one variant.

    The compressed sparse path drives the SIMD machine; depthwise layers
    bypass iact compression (their single-channel windows leave nothing
    to skip), which is exactly why they see no sparse speedup.
    """
    variant = ArchVariant(variant)
    validate_tensors(shape, tensors)
    if mapping is None:
        mapping, _ = select_best(shape, arr, spads)
    if mapping.shape != shape:
        raise EngineError("mapping was built for a different layer shape")
    # feasibility is an array property shared by all variants; the dense
    # machines are timing/fabric models of the same silicon floorplan
    mapping.validate(arr, spads, sparse=True)

    work_t = _LayerWork(shape, mapping, tensors)
    t = mapping.temporal
    counts = data_counts(shape)
    nominal = mac_count(shape)

    iact_bypass = shape.kind == "dw"
    sparse = variant is ArchVariant.V2
    if sparse:
        slots = (work_t.col_nnz + 1) // 2
        b = work_t.b_real if iact_bypass else work_t.b_nnz
    else:
        slots = work_t.col_real
        b = work_t.b_real
    work = work_t.work_matrix(b, slots)
    per_pass = work.max(axis=1)
    live = per_pass > 0
    fill_cycles = int(live.sum()) * variant.pipeline_fill
    compute_cycles = int(per_pass.sum()) + fill_cycles

    # event counts from the same window tensors
    pairs_real = work_t.pair_total(work_t.b_real, work_t.col_real)
    if pairs_real != nominal:
        raise EngineError(
            f"padded schedule covers {pairs_real} pairs, layer has {nominal}")
    mac_pairs = work_t.pair_total(work_t.b_nnz, work_t.col_nnz)
    pairs_iact_nz = work_t.pair_total(work_t.b_nnz, work_t.col_real)
    lanes = int(work.sum()) * variant.simd_width
    if variant is ArchVariant.V1:
        switched = pairs_iact_nz
        gated = pairs_real - pairs_iact_nz
    elif variant is ArchVariant.V15:
        switched = mac_pairs
        gated = pairs_real - mac_pairs
    else:
        switched = mac_pairs
        gated = lanes - mac_pairs

    # traffic: iacts refetch per output-channel pass, weights re-stream
    # per output-row pass and batch element (never parked in the GLB),
    # psums spill to the GLB between accumulation passes and final
    # outputs go straight off-chip
    nnz_iacts = int(np.count_nonzero(tensors.iacts))
    nnz_weights = int(np.count_nonzero(tensors.weights))
    acc_passes = t["c"] * t["r"]
    spills = counts.psums * (acc_passes - 1)
    iact_fetches = t["m"]
    weight_fetches = t["e"] * shape.n

    if sparse:
        c_tiles = t["c"] * mapping.in_ch_spatial
        tile_nnz = work_t.col_nnz.reshape(
            work_t.col_nnz.shape[0], work_t.col_nnz.shape[1],
            c_tiles, mapping.pe.c0, work_t.col_nnz.shape[3],
            mapping.pe.s0).sum(axis=(3, 5))
        weight_words = int(((tile_nnz + 1) // 2).sum())
        weight_bytes_once = 3 * weight_words
        iact_bytes_once = (nnz_iacts * 12 + 7) // 8
        iact_units = nnz_iacts            # run-data pairs on the wire
        weight_units = nnz_weights
    else:
        weight_bytes_once = counts.weights
        iact_bytes_once = counts.iacts
        iact_units = counts.iacts
        weight_units = counts.weights

    dram_bytes = {
        "iact_read": iact_bytes_once * iact_fetches,
        "weight_read": weight_bytes_once * weight_fetches,
        "ofmap_write": counts.psums,
    }
    glb_bytes = {
        "iact_write": iact_bytes_once * iact_fetches,
        "iact_read": iact_bytes_once * iact_fetches,
        "psum_write": spills * PSUM_BITS // 8,
        "psum_read": spills * PSUM_BITS // 8,
    }

    active_ids = mapping.active_pe_ids(arr)
    noc_cycles = {}
    psum_units = 2 * spills + counts.psums
    volumes = {
        Operand.IACT: iact_units * iact_fetches,
        Operand.WEIGHT: weight_units * weight_fetches,
        Operand.PSUM: psum_units,
    }
    for op in Operand:
        if variant.hierarchical_noc:
            compressed = sparse and op is not Operand.PSUM and not (
                op is Operand.IACT and iact_bypass)
            bw = delivered_bandwidth(mapping.noc, op, active_ids, arr,
                                     compressed=compressed)
        else:
            bw = router_spec(op).values_per_cycle(compressed=False)
        noc_cycles[op.value] = _ceil_div(volumes[op], bw) if bw else 0

    total_dram = sum(dram_bytes.values())
    dram_cycles = (math.ceil(total_dram / bw_bytes_per_cycle)
                   if bw_bytes_per_cycle else 0)

    candidates = [("compute", compute_cycles)]
    candidates += [(op.value, noc_cycles[op.value]) for op in Operand]
    candidates.append(("dram", dram_cycles))
    bound_by, cycles = max(candidates, key=lambda kv: kv[1])
    if cycles == compute_cycles:
        bound_by = "compute"          # prefer the compute tag on ties
    cycles = int(cycles)

    hop_events = (volumes[Operand.IACT] + volumes[Operand.WEIGHT]
                  + volumes[Operand.PSUM])
    energy_events = {
        "mac": switched,
        "gated": gated,
        # issue capacity nobody used: stalled or shorter-than-max PEs
        "idle": mapping.active_pes * cycles * variant.simd_width
                - switched - gated,
        "spad_r": 3 * switched,
        "spad_w": switched,
        "glb_r": glb_bytes["iact_read"] + glb_bytes["psum_read"],
        "glb_w": glb_bytes["iact_write"] + glb_bytes["psum_write"],
        "noc_hop": hop_events,
        "dram_r": dram_bytes["iact_read"] + dram_bytes["weight_read"],
        "dram_w": dram_bytes["ofmap_write"],
    }

    # the executed-MAC rate can never beat the switched-on datapaths;
    # the nominal rate can, when zeros are skipped
    implied_min = _ceil_div(mac_pairs, mapping.active_pes * variant.simd_width)
    if dram_cycles:
        implied_min = max(implied_min, dram_cycles)
    if cycles < implied_min:
        raise EngineError(
            f"simulated {cycles} cycles beat the {implied_min}-cycle bound")
    bound_check = {"implied_min_cycles": implied_min, "cycles": cycles}

    psums = work_t.padded_psums(shape) if want_psums else None
    return LayerResult(
        label=label,
        variant=variant,
        cycles=cycles,
        passes=work_t.passes,
        active_pes=mapping.active_pes,
        active_util=Fraction(nominal, cycles * mapping.active_pes)
        if cycles else Fraction(0),
        macs_nominal=nominal,
        macs_executed=mac_pairs,
        compute_cycles=compute_cycles,
        fill_cycles=fill_cycles,
        noc_cycles=noc_cycles,
        dram_cycles=dram_cycles,
        bound_by=bound_by,
        dram_bytes=dram_bytes,
        glb_bytes=glb_bytes,
        energy_events=energy_events,
        bound_check=bound_check,
        psums=psums,
    )


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class ModelResult:
    model: str
    variant: ArchVariant
    layers: Tuple[LayerResult, ...]
    clock_hz: int = CLOCK_HZ

    @property
    def total_cycles(self) -> int:
        return sum(r.cycles for r in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(r.macs_nominal for r in self.layers)

    @property
    def inferences_per_sec(self) -> float:
        return self.clock_hz / self.total_cycles if self.total_cycles else 0.0

    def to_json_dict(self) -> dict:
        return {
            "schema": RESULT_SCHEMA,
            "model": self.model,
            "variant": self.variant.value,
            "clock_hz": self.clock_hz,
            "total_cycles": self.total_cycles,
            "total_macs": self.total_macs,
            "inferences_per_sec": self.inferences_per_sec,
            "layers": [r.to_json_dict() for r in self.layers],
        }


_MAPPING_CACHE: Dict[Tuple, Tuple[Mapping, object]] = {}


def best_mapping(shape: LayerShape,
                 arr: ClusterArrayConfig = DEFAULT_ARRAY,
                 spads: SpadConfig = DEFAULT_SPADS) -> Mapping:
    """Memoized mapping search; variants share one mapping per layer."""
    key = (shape, arr, spads)
    if key not in _MAPPING_CACHE:
        _MAPPING_CACHE[key] = select_best(shape, arr, spads)
    return _MAPPING_CACHE[key][0]


def run_model(model: DnnModel,
              tensors: Optional[MappingT] = None,
              variant: ArchVariant = ArchVariant.V2,
              bw_bytes_per_cycle: Optional[float] = None,
              seed: int = 0,
              arr: ClusterArrayConfig = DEFAULT_ARRAY,
              spads: SpadConfig = DEFAULT_SPADS) -> ModelResult:
    """One layer at a time over the whole network; totals are sums."""
    variant = ArchVariant(variant)
    if tensors is None:
        tensors = synthetic_model_tensors(model, seed=seed)
    results = []
    for label, shape in model.layers:
        if label not in tensors:
            raise EngineError(f"no tensors supplied for layer {label}")
        mapping = best_mapping(shape, arr, spads)
        results.append(run_layer(shape, tensors[label], mapping, variant,
                                 bw_bytes_per_cycle, arr, spads, label=label))
    return ModelResult(model=model.name, variant=variant,
                       layers=tuple(results))


# ---------------------------------------------------------------- scaling


# analytical sweep stream rates for the single-network baseline: one
# stream per datatype at the router's raw word rate
_V1_RATES = {
    Operand.IACT: router_spec(Operand.IACT).values_per_cycle(),
    Operand.WEIGHT: router_spec(Operand.WEIGHT).values_per_cycle(),
    Operand.PSUM: router_spec(Operand.PSUM).values_per_cycle(),
}


@dataclass(frozen=True)
class SweepPoint:
    pes: int
    cycles: Fraction
    normalized: Fraction
    per_layer: Tuple[Tuple[str, Fraction], ...]

    def to_json_dict(self) -> dict:
        return {"pes": self.pes,
                "cycles": float(self.cycles),
                "normalized": float(self.normalized),
                "per_layer": {k: float(v) for k, v in self.per_layer}}


@dataclass(frozen=True)
class SweepResult:
    model: str
    variant: ArchVariant
    points: Tuple[SweepPoint, ...]

    def to_json_dict(self) -> dict:
        return {"schema": RESULT_SCHEMA, "model": self.model,
                "variant": self.variant.value,
                "points": [p.to_json_dict() for p in self.points]}

    def csv_lines(self) -> list:
        out = ["model,variant,pes,cycles,normalized"]
        for p in self.points:
            out.append(f"{self.model},{self.variant.value},{p.pes},"
                       f"{float(p.cycles):.6g},{float(p.normalized):.6g}")
        return out


def _sweep_layer_cycles(shape: LayerShape, rows: int, cols: int,
                        variant: ArchVariant) -> Fraction:
    active = analyze(shape, ExamConfig(array_rows=rows, array_cols=cols),
                     Dataflow.RS).active_pes
    compute = Fraction(mac_count(shape)) / active
    if variant.hierarchical_noc:
        return compute
    counts = data_counts(shape)
    return max(compute,
               Fraction(counts.iacts, _V1_RATES[Operand.IACT]),
               Fraction(counts.weights, _V1_RATES[Operand.WEIGHT]),
               Fraction(counts.psums, _V1_RATES[Operand.PSUM]))


def scalability_sweep(model: DnnModel,
                      scales: Sequence[int] = (256, 1024, 16384),
                      variant: ArchVariant = ArchVariant.V2) -> SweepResult:
    """Analytical scaling study: square PE grids, one dense MAC per PE
    per cycle, unlimited external memory.

    The mesh fabric scales its stream count with the cluster grid, so
    the hierarchical variants are compute-bound here; the single-network
    baseline keeps one stream per datatype at every scale, which is what
    flattens its low-reuse layers.
    """
    variant = ArchVariant(variant)
    if not scales:
        raise EngineError("need at least one scale")
    points = []
    base_cycles = None
    base_pes = None
    for pes in scales:
        side = math.isqrt(pes)
        if side * side != pes:
            raise EngineError(f"scale {pes} is not a square PE grid")
        per_layer = []
        total = Fraction(0)
        for label, shape in model.layers:
            cyc = _sweep_layer_cycles(shape, side, side, variant)
            per_layer.append((label, cyc))
            total += cyc
        if base_cycles is None:
            base_cycles, base_pes = total, pes
        speedup = base_cycles / total
        linear = Fraction(pes, base_pes)
        points.append(SweepPoint(pes=pes, cycles=total,
                                 normalized=speedup / linear,
                                 per_layer=tuple(per_layer)))
    return SweepResult(model=model.name, variant=variant,
                       points=tuple(points))


# ---------------------------------------------------------------- energy


@dataclass(frozen=True)
class EnergyCostTable:
    """Abstract per-event unit costs.  The defaults are round relative
    numbers for comparing configurations, not measured silicon values."""

    mac: float = 1.0
    gated: float = 0.1
    idle: float = 0.05
    spad_r: float = 1.0
    spad_w: float = 1.0
    glb_r: float = 2.0
    glb_w: float = 2.0
    noc_hop: float = 0.5
    dram_r: float = 64.0
    dram_w: float = 64.0

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise EngineError(f"cost {f.name} must be non-negative")

    @classmethod
    def from_toml(cls, path) -> "EnergyCostTable":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise EngineError(f"unknown cost entries: {sorted(unknown)}")
        return cls(**doc)

    def table_hash(self) -> str:
        blob = json.dumps({f.name: getattr(self, f.name)
                           for f in fields(self)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


DEFAULT_COSTS = EnergyCostTable()


def energy_report(results: Union[LayerResult, ModelResult, Iterable[LayerResult]],
                  table: EnergyCostTable = DEFAULT_COSTS) -> dict:
    """Event totals times unit costs, with per-class shares."""
    if isinstance(results, LayerResult):
        layer_list = [results]
    elif isinstance(results, ModelResult):
        layer_list = list(results.layers)
    else:
        layer_list = list(results)
    events: Dict[str, int] = {}
    for r in layer_list:
        for k, v in r.energy_events.items():
            events[k] = events.get(k, 0) + v
    per_class = {k: v * getattr(table, k) for k, v in events.items()}
    total = sum(per_class.values())
    shares = {k: (v / total if total else 0.0) for k, v in per_class.items()}
    return {
        "schema": RESULT_SCHEMA,
        "total": total,
        "events": events,
        "per_class": per_class,
        "shares": shares,
        "cost_table_hash": table.table_hash(),
    }
