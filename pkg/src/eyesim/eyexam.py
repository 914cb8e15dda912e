"""Layered performance-bound analysis for dataflow accelerators.

Seven successive caps tighten a layer's attainable MACs/cycle, each one
charging a distinct loss source: finite workload size, dataflow
parallelism, PE count fragmentation, array shape fragmentation, storage
capacity, per-operand bandwidth rooflines, and ramp-up overhead.  Every
bound is an exact Fraction so the chain can be checked to equality, and
the final number factors exactly into active PEs times utilization of
the active PEs.

A one-dimensional convolution (single output row, single filter row)
serves as the worked example throughout the tests; it embeds into the
general layer shape with all other dimensions set to one.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Mapping, Optional, Sequence, Tuple, Union

from .noc import ClusterArrayConfig, Operand
from .pe import PSUM_BITS
from .workload import LayerShape, mac_count, reuse_profile


class Dataflow(str, enum.Enum):
    WS = "ws"   # weights pinned in the array
    OS = "os"   # outputs pinned
    IS = "is"   # inputs pinned
    RS = "rs"   # filter rows paired with output rows per PE


class LossReason(str, enum.Enum):
    WORKLOAD_SIZE = "workload_size"
    DATAFLOW_PARALLELISM = "dataflow_parallelism"
    PE_COUNT_FRAGMENTATION = "pe_count_fragmentation"
    ARRAY_SHAPE_FRAGMENTATION = "array_shape_fragmentation"
    STORAGE_CAPACITY = "storage_capacity"
    BANDWIDTH = "bandwidth"
    RAMP_UP = "ramp_up"


_STEP_REASONS = {
    1: LossReason.WORKLOAD_SIZE,
    2: LossReason.DATAFLOW_PARALLELISM,
    3: LossReason.PE_COUNT_FRAGMENTATION,
    4: LossReason.ARRAY_SHAPE_FRAGMENTATION,
    5: LossReason.STORAGE_CAPACITY,
    6: LossReason.BANDWIDTH,
    7: LossReason.RAMP_UP,
}


@dataclass(frozen=True)
class StepBound:
    step: int
    bound: Fraction
    loss_reason: LossReason
    note: str = ""

    def __post_init__(self) -> None:
        if not 1 <= self.step <= 7:
            raise ValueError(f"step {self.step} outside 1..7")
        object.__setattr__(self, "bound", Fraction(self.bound))
        if self.bound < 0:
            raise ValueError("a performance bound cannot be negative")

    def to_json_dict(self) -> dict:
        return {"step": self.step,
                "bound": str(self.bound),
                "bound_float": float(self.bound),
                "loss_reason": self.loss_reason.value,
                "note": self.note}


@dataclass(frozen=True)
class Roofline:
    """One operand's compute ceiling against its delivery bandwidth."""

    operand: Operand
    peak: Fraction          # MACs/cycle when compute-bound
    bw: Fraction            # operand values/cycle actually deliverable
    intensity: Fraction     # MACs per unique operand value

    def __post_init__(self) -> None:
        object.__setattr__(self, "operand", Operand(self.operand))
        object.__setattr__(self, "peak", Fraction(self.peak))
        object.__setattr__(self, "bw", Fraction(self.bw))
        object.__setattr__(self, "intensity", Fraction(self.intensity))
        if self.peak <= 0 or self.bw <= 0 or self.intensity < 0:
            raise ValueError("roofline needs peak > 0, bw > 0, intensity >= 0")

    def bound(self, intensity: Optional[Fraction] = None) -> Fraction:
        x = self.intensity if intensity is None else Fraction(intensity)
        return min(self.peak, self.bw * x)

    @property
    def inflection(self) -> Fraction:
        return self.peak / self.bw

    def to_json_dict(self) -> dict:
        return {"operand": self.operand.value,
                "peak": float(self.peak),
                "bw": float(self.bw),
                "intensity": float(self.intensity),
                "bound": float(self.bound()),
                "inflection": float(self.inflection)}


@dataclass(frozen=True)
class LoopNest1D:
    """Three-level tiling of the 1D convolution's two loops.

    Each loop splits into inner (temporal, per PE), spatial (across the
    array), and outer (temporal passes).  Products must cover the loop
    extents; the slack properties report over-provisioning.
    """

    out_len: int
    filt_len: int
    out_inner: int = 1
    out_spatial: int = 1
    out_outer: int = 1
    filt_inner: int = 1
    filt_spatial: int = 1
    filt_outer: int = 1

    def __post_init__(self) -> None:
        for name in ("out_len", "filt_len", "out_inner", "out_spatial",
                     "out_outer", "filt_inner", "filt_spatial", "filt_outer"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.out_coverage < self.out_len:
            raise ValueError("output loop levels do not cover the output length")
        if self.filt_coverage < self.filt_len:
            raise ValueError("filter loop levels do not cover the filter length")

    @property
    def out_coverage(self) -> int:
        return self.out_inner * self.out_spatial * self.out_outer

    @property
    def filt_coverage(self) -> int:
        return self.filt_inner * self.filt_spatial * self.filt_outer

    @property
    def out_slack(self) -> int:
        return self.out_coverage - self.out_len

    @property
    def filt_slack(self) -> int:
        return self.filt_coverage - self.filt_len

    @property
    def spatial_parallelism(self) -> int:
        return self.out_spatial * self.filt_spatial


def ws_loop_nest(out_len: int, filt_len: int, array_size: int) -> LoopNest1D:
    """Weight-stationary tiling of the 1D example: the whole filter sits
    across the array (folded if it does not fit) while outputs stream
    temporally."""
    spatial = min(filt_len, array_size)
    return LoopNest1D(
        out_len=out_len, filt_len=filt_len,
        out_inner=out_len,
        filt_spatial=spatial,
        filt_outer=math.ceil(filt_len / spatial),
    )


def conv1d_shape(out_len: int, filt_len: int) -> LayerShape:
    """Embed the 1D worked example into the general layer shape."""
    return LayerShape(m=1, c=1, h=out_len + filt_len - 1, w=1,
                     r=filt_len, s=1)


# Spatial dimension bindings per dataflow.  The vertical axis maps to
# array rows, the horizontal axis to columns.  RS is handled separately
# because its unit of spatial mapping is a (filter row x output row) PE
# set replicated across independent accumulation planes.
_AXIS_DIMS = {
    Dataflow.WS: (("m",), ("c", "r", "s")),
    Dataflow.OS: (("e", "f"), ("m",)),
    Dataflow.IS: (("c",), ("h", "w")),
}


def _dims_product(shape: LayerShape, names: Sequence[str]) -> int:
    prod = 1
    for name in names:
        prod *= getattr(shape, name)
    return prod


def _bound_of(prev: Union[StepBound, Rational, int]) -> Fraction:
    if isinstance(prev, StepBound):
        return prev.bound
    return Fraction(prev)


def step1_workload(shape: LayerShape) -> StepBound:
    """Cap 1: no more MACs per cycle than the workload holds in total."""
    return StepBound(1, Fraction(mac_count(shape)), LossReason.WORKLOAD_SIZE)


def step2_dataflow(shape: LayerShape, df: Dataflow,
                   rs_group_planes: bool = True) -> StepBound:
    """Cap 2: the dataflow only parallelizes its spatially mapped dims."""
    df = Dataflow(df)
    if df is Dataflow.RS:
        planes = shape.n * shape.m * shape.c * (shape.g if rs_group_planes else 1)
        raw = planes * shape.r * shape.e
    else:
        v_dims, h_dims = _AXIS_DIMS[df]
        raw = _dims_product(shape, v_dims) * _dims_product(shape, h_dims)
    bound = min(Fraction(raw), Fraction(mac_count(shape)))
    return StepBound(2, bound, LossReason.DATAFLOW_PARALLELISM)


def step3_num_pes(bound2: Union[StepBound, int], num_pes: int) -> StepBound:
    """Cap 3: average parallelism once the spatial work folds onto a
    finite PE count.  Work W over P PEs takes ceil(W/P) passes, so the
    average is W / ceil(W/P)."""
    if num_pes < 1:
        raise ValueError("need at least one PE")
    work = _bound_of(bound2)
    if work.denominator != 1:
        raise ValueError("spatial work must be an integer count")
    w = work.numerator
    if w == 0:
        return StepBound(3, Fraction(0), LossReason.PE_COUNT_FRAGMENTATION)
    passes = math.ceil(Fraction(w, num_pes))
    return StepBound(3, Fraction(w, passes), LossReason.PE_COUNT_FRAGMENTATION)


def _axis_fragment(work: int, axis: int) -> Fraction:
    # average occupied extent along one physical axis
    return Fraction(work, math.ceil(Fraction(work, axis)))


def _rs_active_pes(shape: LayerShape, rows: int, cols: int,
                   rs_group_planes: bool = True) -> Fraction:
    """Average active PEs for the row-pairing dataflow.

    A PE set spans min(r, rows) rows by min(e, cols) columns; oversize
    filters or output columns fold with the usual ceiling loss.  Whole
    sets replicate across the independent accumulation planes (groups,
    batch, output channels, input channels), again with ceiling loss on
    the last pass.
    """
    v_eff = _axis_fragment(shape.r, rows)
    h_eff = _axis_fragment(shape.e, cols)
    sets_cap = (rows // min(shape.r, rows)) * (cols // min(shape.e, cols))
    planes = shape.n * shape.m * shape.c * (shape.g if rs_group_planes else 1)
    active_sets = Fraction(planes, math.ceil(Fraction(planes, sets_cap)))
    return active_sets * v_eff * h_eff


def step4_physical_dims(bound3: Union[StepBound, int], shape: LayerShape,
                        df: Dataflow, array_rows: int, array_cols: int,
                        rs_group_planes: bool = True) -> StepBound:
    """Cap 4: fragmentation charged per physical axis instead of against
    the flat PE count."""
    df = Dataflow(df)
    if array_rows < 1 or array_cols < 1:
        raise ValueError("array axes must be at least 1")
    prev = _bound_of(bound3)
    if df is Dataflow.RS:
        active = _rs_active_pes(shape, array_rows, array_cols, rs_group_planes)
    else:
        v_dims, h_dims = _AXIS_DIMS[df]
        active = (_axis_fragment(_dims_product(shape, v_dims), array_rows)
                  * _axis_fragment(_dims_product(shape, h_dims), array_cols))
    return StepBound(4, min(prev, active), LossReason.ARRAY_SHAPE_FRAGMENTATION)


def psum_glb_entries(arr: ClusterArrayConfig) -> int:
    """Live partial sums one cluster's GLB psum banks can hold."""
    return arr.psum_banks * arr.psum_bank_bytes * 8 // PSUM_BITS


def step5_storage(bound4: Union[StepBound, int],
                  live_psums: Optional[int] = None,
                  psum_capacity: Optional[int] = None,
                  m0_requested: Optional[int] = None,
                  m0_limit: int = 32) -> StepBound:
    """Cap 5: clip the spatial bound when live state outgrows storage.

    Two multiplicative clips: live psums against the GLB psum space, and
    the per-PE output-channel tile against its accumulator SPad.  A None
    capacity (or demand) means that resource is not limiting.
    """
    prev = _bound_of(bound4)
    factor = Fraction(1)
    notes = []
    if live_psums is not None and psum_capacity is not None and live_psums > psum_capacity:
        factor *= Fraction(psum_capacity, live_psums)
        notes.append(f"{live_psums} live psums exceed {psum_capacity}")
    if m0_requested is not None and m0_requested > m0_limit:
        factor *= Fraction(m0_limit, m0_requested)
        notes.append(f"output-channel tile {m0_requested} exceeds SPad limit {m0_limit}")
    return StepBound(5, prev * factor, LossReason.STORAGE_CAPACITY,
                     note="; ".join(notes))


def step6_bandwidth(bound5: Union[StepBound, int],
                    rooflines: Sequence[Roofline]) -> StepBound:
    """Cap 6: the worst per-operand roofline wins."""
    prev = _bound_of(bound5)
    bound = prev
    binding = ""
    for rl in rooflines:
        b = min(rl.peak, rl.bw * rl.intensity)
        if b < bound:
            bound = b
            binding = f"{rl.operand.value} roofline binds"
    return StepBound(6, bound, LossReason.BANDWIDTH, note=binding)


def step7_access_pattern(bound6: Union[StepBound, int],
                         ramp_fraction: Union[Fraction, float] = 0,
                         ramp_bw_deficit: Union[Fraction, float] = 0) -> StepBound:
    """Cap 7: two-phase model of ramp-up against steady state.

    For a fraction f of the run the delivered bandwidth falls short by a
    factor d, stretching the runtime to (1 + f*d) of ideal.
    """
    f = Fraction(ramp_fraction)
    d = Fraction(ramp_bw_deficit)
    if not 0 <= f <= 1:
        raise ValueError("ramp fraction must lie in [0, 1]")
    if d < 0:
        raise ValueError("bandwidth deficit cannot be negative")
    prev = _bound_of(bound6)
    return StepBound(7, prev / (1 + f * d), LossReason.RAMP_UP)


@dataclass(frozen=True)
class ExamConfig:
    """Array and resource parameters the seven caps are evaluated against.

    Defaults describe the 192-PE machine flattened to its 24x8 PE grid.
    psum_entries is the total live-psum capacity (None = unlimited);
    bw maps operands to deliverable values/cycle (absent = unlimited);
    the ramp pair feeds the final cap.
    """

    array_rows: int = 24
    array_cols: int = 8
    psum_entries: Optional[int] = None
    bw: Optional[Mapping] = None
    ramp_fraction: Fraction = Fraction(0)
    ramp_deficit: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        if self.array_rows < 1 or self.array_cols < 1:
            raise ValueError("array axes must be at least 1")

    @property
    def num_pes(self) -> int:
        return self.array_rows * self.array_cols


# spatial dims of each dataflow that index partial sums; used to size the
# live-psum footprint for the storage cap
_PSUM_SPATIAL = {
    Dataflow.WS: ("m",),
    Dataflow.OS: ("m", "e", "f"),
    Dataflow.IS: (),
}


def _live_psum_footprint(shape: LayerShape, df: Dataflow,
                         rs_group_planes: bool) -> int:
    if df is Dataflow.RS:
        planes = shape.n * shape.m * (shape.g if rs_group_planes else 1)
        return planes * shape.e
    return _dims_product(shape, _PSUM_SPATIAL[df])


@dataclass(frozen=True)
class EyexamReport:
    dataflow: Dataflow
    steps: Tuple[StepBound, ...]
    rooflines: Tuple[Roofline, ...]
    num_pes: int

    def __post_init__(self) -> None:
        if len(self.steps) != 7:
            raise ValueError("a full report carries all seven bounds")

    @property
    def bound(self) -> Fraction:
        return self.steps[-1].bound

    @property
    def active_pes(self) -> Fraction:
        """Average PEs doing work, i.e. the bound after the spatial caps."""
        return self.steps[4].bound

    @property
    def active_util(self) -> Fraction:
        if self.active_pes == 0:
            return Fraction(0)
        return self.bound / self.active_pes

    @property
    def utilization(self) -> Fraction:
        """Overall MACs/cycle; factors exactly as active_pes * active_util."""
        return self.bound

    @property
    def active_fraction(self) -> Fraction:
        return self.active_pes / self.num_pes

    def losses(self) -> Tuple[Tuple[LossReason, Fraction], ...]:
        """Per-step drop in the bound, in MACs/cycle."""
        out = []
        prev = None
        for sb in self.steps:
            drop = Fraction(0) if prev is None else prev - sb.bound
            out.append((sb.loss_reason, drop))
            prev = sb.bound
        return tuple(out)

    def to_json_dict(self) -> dict:
        return {
            "dataflow": self.dataflow.value,
            "num_pes": self.num_pes,
            "steps": [sb.to_json_dict() for sb in self.steps],
            "rooflines": [rl.to_json_dict() for rl in self.rooflines],
            "active_pes": float(self.active_pes),
            "active_util": float(self.active_util),
            "utilization": float(self.utilization),
            "active_fraction": float(self.active_fraction),
        }


def analyze(shape: LayerShape, cfg: ExamConfig, df: Dataflow,
            rs_group_planes: bool = True) -> EyexamReport:
    """Run all seven caps for one layer on one array."""
    df = Dataflow(df)
    b1 = step1_workload(shape)
    b2 = StepBound(2, min(b1.bound, step2_dataflow(shape, df, rs_group_planes).bound),
                   LossReason.DATAFLOW_PARALLELISM)
    b3 = step3_num_pes(b2, cfg.num_pes)
    b4 = step4_physical_dims(b3, shape, df, cfg.array_rows, cfg.array_cols,
                             rs_group_planes)
    live = _live_psum_footprint(shape, df, rs_group_planes)
    b5 = step5_storage(b4, live_psums=live, psum_capacity=cfg.psum_entries)
    profile = reuse_profile(shape)
    intensities = {
        Operand.IACT: profile.iact_reuse,
        Operand.WEIGHT: profile.weight_reuse,
        Operand.PSUM: profile.psum_reuse,
    }
    rooflines = []
    if cfg.bw:
        for key, bw in cfg.bw.items():
            op = Operand(key)
            rooflines.append(Roofline(op, peak=b5.bound, bw=Fraction(bw),
                                      intensity=intensities[op]))
    b6 = step6_bandwidth(b5, rooflines)
    b7 = step7_access_pattern(b6, cfg.ramp_fraction, cfg.ramp_deficit)
    return EyexamReport(dataflow=df, steps=(b1, b2, b3, b4, b5, b6, b7),
                       rooflines=tuple(rooflines), num_pes=cfg.num_pes)


def bounds_csv(reports: Mapping[str, EyexamReport]) -> str:
    """Flatten labeled reports to CSV rows for plotting."""
    lines = ["label,dataflow,step,bound,loss_reason"]
    for label, rep in reports.items():
        for sb in rep.steps:
            lines.append(f"{label},{rep.dataflow.value},{sb.step},"
                         f"{float(sb.bound)!r},{sb.loss_reason.value}")
    return "\n".join(lines) + "\n"
