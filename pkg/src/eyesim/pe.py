"""Single processing-element model: sliding-window 1D convolution with
zero-skipping, SIMD-paired weight issue, and scratchpad capacity checks.

A PE owns five scratchpads and processes one configured pass at a time:
a window of c0*s0 input activations slides by c0*u values per step, and
every resident activation is multiplied into a column of m0 weights.  In
sparse mode zero activations are skipped outright (they are never even read
when the input arrives compressed) and weight columns issue as 2-wide SIMD
slots of stored pairs; a half-filled final slot still costs its cycle but
the unused multiplier is clock-gated.  The dense-gate modes model earlier
PE generations: every nominal operand pair costs one cycle, and gating only
saves energy, never time.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence, Union

from .csc import CscFormatError, CscTensor, column_slice, decode

PSUM_BITS = 20
PSUM_MIN = -(1 << (PSUM_BITS - 1))
PSUM_MAX = (1 << (PSUM_BITS - 1)) - 1

SIMD_WIDTH = 2
SPARSE_PIPELINE_FILL = 7   # seven-stage pipeline, charged once per pass
DENSE_PIPELINE_FILL = 3    # shallower pre-SIMD pipeline


class CapacityError(ValueError):
    """A mapping does not fit a scratchpad; the message names which one."""


class PsumOverflowError(ArithmeticError):
    """An accumulator left the signed 20-bit range (detected, not wrapped)."""


class PeMode(enum.Enum):
    SPARSE_SKIP = "sparse_skip"                  # skip zeros, SIMD pairs
    DENSE_GATE = "dense_gate"                    # gate on either zero operand
    DENSE_GATE_IACT_ONLY = "dense_gate_iact_only"  # gate on zero iacts only


@dataclass(frozen=True)
class SpadConfig:
    """Per-PE scratchpad capacities, in entries (defaults match the device)."""

    iact_addr_entries: int = 9     # 4b each
    iact_data_entries: int = 16    # 12b pairs
    weight_addr_entries: int = 16  # 7b each
    weight_data_entries: int = 96  # 24b words (two pairs per word)
    psum_entries: int = 32         # 20b each

    IACT_ADDR_BITS = 4
    IACT_DATA_BITS = 12
    WEIGHT_ADDR_BITS = 7
    WEIGHT_DATA_BITS = 24
    PSUM_BITS = PSUM_BITS

    def byte_sizes(self) -> dict[str, float]:
        return {
            "iact_addr": self.iact_addr_entries * self.IACT_ADDR_BITS / 8,
            "iact_data": self.iact_data_entries * self.IACT_DATA_BITS / 8,
            "weight_addr": self.weight_addr_entries * self.WEIGHT_ADDR_BITS / 8,
            "weight_data": self.weight_data_entries * self.WEIGHT_DATA_BITS / 8,
            "psum": self.psum_entries * self.PSUM_BITS / 8,
        }


DEFAULT_SPADS = SpadConfig()


@dataclass(frozen=True)
class PeMapping:
    """Per-PE tile: m0 output channels, c0 input channels, filter width s0,
    stride u.  The window holds c0*s0 activations and slides by c0*u."""

    m0: int
    c0: int
    s0: int
    u: int = 1

    def __post_init__(self) -> None:
        for name in ("m0", "c0", "s0", "u"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.m0 > DEFAULT_SPADS.psum_entries:
            raise CapacityError(
                f"m0={self.m0} exceeds the {DEFAULT_SPADS.psum_entries}-entry psum SPad"
            )
        if self.window_len > DEFAULT_SPADS.iact_data_entries:
            raise CapacityError(
                f"window step c0*u={self.window_len} exceeds the "
                f"{DEFAULT_SPADS.iact_data_entries}-entry iact data SPad"
            )

    @property
    def window_len(self) -> int:
        """Values replaced per slide: c0*u."""
        return self.c0 * self.u

    @property
    def window_size(self) -> int:
        """Values resident per window: c0*s0."""
        return self.c0 * self.s0

    def num_windows(self, stream_len: int) -> int:
        if stream_len < self.window_size:
            raise ValueError(
                f"stream of {stream_len} values shorter than one window "
                f"({self.window_size})"
            )
        return (stream_len - self.window_size) // self.window_len + 1


@dataclass(frozen=True)
class WindowState:
    """Sliding-window bookkeeping for one PE pass."""

    values: tuple[int, ...]
    slide: int
    window_index: int = 0


def initial_window(stream: Sequence[int], mapping: PeMapping) -> WindowState:
    if len(stream) < mapping.window_size:
        raise ValueError("stream shorter than one window")
    return WindowState(tuple(stream[: mapping.window_size]), mapping.window_len, 0)


def sliding_window_step(state: WindowState, new_segment: Sequence[int]) -> WindowState:
    """Advance one window: drop the oldest slide-worth, append the new segment."""
    seg = tuple(new_segment)
    if len(seg) != state.slide:
        raise ValueError(f"segment must hold {state.slide} values, got {len(seg)}")
    kept = state.values[state.slide:]
    return WindowState(kept + seg, state.slide, state.window_index + 1)


def simd_pair_schedule(entries: Sequence) -> list[tuple]:
    """Pack entries into 2-wide issue slots; an odd tail slot carries None."""
    slots = []
    for i in range(0, len(entries) - 1, 2):
        slots.append((entries[i], entries[i + 1]))
    if len(entries) % 2:
        slots.append((entries[-1], None))
    return slots


@dataclass
class PeRunResult:
    cycles: int
    work_cycles: int
    fill_cycles: int
    macs_executed: int
    gated_macs: int
    psums: list[list[int]]          # [m0][num_windows]
    spad_occupancy: dict[str, int]
    energy_events: dict[str, int]
    iact_spad_reads: int = 0
    weight_spad_reads: int = 0
    psum_spad_reads: int = 0
    psum_spad_writes: int = 0
    num_windows: int = 0
    mode: PeMode = PeMode.SPARSE_SKIP
    trace: list[tuple] = field(default_factory=list)


def _accumulate(acc: int, product: int, where: str) -> int:
    acc += product
    if not PSUM_MIN <= acc <= PSUM_MAX:
        raise PsumOverflowError(
            f"psum {where} reached {acc}, outside signed {PSUM_BITS}-bit range"
        )
    return acc


def _seed_psums(psums_in, m0: int, nw: int) -> list[list[int]]:
    if psums_in is None:
        return [[0] * nw for _ in range(m0)]
    rows = [list(r) for r in psums_in]
    if len(rows) != m0 or any(len(r) != nw for r in rows):
        raise ValueError(f"psums_in must be {m0} x {nw}")
    for r in rows:
        for v in r:
            if not PSUM_MIN <= v <= PSUM_MAX:
                raise PsumOverflowError(f"seed psum {v} outside signed {PSUM_BITS}-bit range")
    return rows


class _Column:
    """One weight column, pre-chewed for issue: stored entries with their
    reconstructed row indices, plus slot/nonzero tallies."""

    __slots__ = ("entries", "nonzeros", "slots")

    def __init__(self, entries: list[tuple[int, int]]):
        self.entries = entries                       # (m_index, value), stored order
        self.nonzeros = sum(1 for _, v in entries if v != 0)
        self.slots = (len(entries) + 1) // 2


def _weight_columns(
    weights: Union[CscTensor, Sequence[Sequence[int]]],
    mapping: PeMapping,
) -> tuple[list[_Column], bool]:
    k = mapping.window_size
    if isinstance(weights, CscTensor):
        if weights.segment_len != mapping.m0:
            raise ValueError(
                f"weight segments decode to {weights.segment_len} values, mapping needs m0={mapping.m0}"
            )
        if weights.num_segments != k:
            raise ValueError(
                f"weight tensor has {weights.num_segments} columns, window needs {k}"
            )
        cols = []
        for j in range(k):
            entries = []
            idx = -1
            for v, cnt in column_slice(weights, j):
                idx += cnt + 1
                entries.append((idx, v))
            cols.append(_Column(entries))
        return cols, True
    rows = [list(r) for r in weights]
    if len(rows) != mapping.m0 or any(len(r) != k for r in rows):
        raise ValueError(f"dense weights must be m0 x c0*s0 = {mapping.m0} x {k}")
    cols = [_Column([(i, rows[i][j]) for i in range(mapping.m0)]) for j in range(k)]
    return cols, False


def run_pe(
    iacts: Union[CscTensor, Sequence[int]],
    weights: Union[CscTensor, Sequence[Sequence[int]]],
    mapping: PeMapping,
    mode: PeMode = PeMode.SPARSE_SKIP,
    spads: SpadConfig = DEFAULT_SPADS,
    num_windows: int | None = None,
    psums_in: Sequence[Sequence[int]] | None = None,
    trace: bool = False,
) -> PeRunResult:
    """Execute one configured pass and account every cycle and access.

    iacts may be compressed (required for actual zero-skipping) or a plain
    value stream; a plain stream in SPARSE_SKIP mode models the uncompressed
    bypass, which walks every value and gains nothing from sparsity.  Dense
    weights are accepted in any mode.  psums_in seeds the accumulators for
    multi-pass accumulation.  Raises CapacityError when the tile does not
    fit the scratchpads and PsumOverflowError when an accumulator leaves the
    20-bit range.
    """
    k = mapping.window_size
    ell = mapping.window_len

    if isinstance(iacts, CscTensor):
        if iacts.segment_len != ell:
            raise ValueError(
                f"iact segment_len {iacts.segment_len} != window step c0*u = {ell}"
            )
        stream = decode(iacts)
        iacts_compressed = True
    else:
        stream = [int(v) for v in iacts]
        iacts_compressed = False

    cols, weights_compressed = _weight_columns(weights, mapping)

    # ---- capacity checks (errors name the offending scratchpad)
    if mapping.m0 > spads.psum_entries:
        raise CapacityError(f"m0={mapping.m0} exceeds the {spads.psum_entries}-entry psum SPad")
    if k > spads.iact_data_entries:
        raise CapacityError(
            f"window of {k} iacts exceeds the {spads.iact_data_entries}-entry iact data SPad"
        )
    if k + 1 > spads.weight_addr_entries:
        raise CapacityError(
            f"{k} weight columns need {k + 1} address entries, exceeding the "
            f"{spads.weight_addr_entries}-entry weight address SPad"
        )
    weight_words = sum((len(c.entries) + 1) // 2 for c in cols)
    if weight_words > spads.weight_data_entries:
        raise CapacityError(
            f"{weight_words} weight words exceed the "
            f"{spads.weight_data_entries}-word weight data SPad"
        )
    seg_per_window = -(-mapping.s0 // mapping.u)
    if iacts_compressed and seg_per_window + 1 > spads.iact_addr_entries:
        raise CapacityError(
            f"window spans {seg_per_window} segments, needing {seg_per_window + 1} "
            f"address entries, exceeding the {spads.iact_addr_entries}-entry iact address SPad"
        )

    nw = mapping.num_windows(len(stream)) if num_windows is None else num_windows
    if nw < 1 or (nw - 1) * ell + k > len(stream):
        raise ValueError(f"cannot cut {nw} windows from {len(stream)} values")

    sparse = mode is PeMode.SPARSE_SKIP
    psums = _seed_psums(psums_in, mapping.m0, nw)
    work = 0
    macs = 0
    gated = 0
    ia_reads = 0
    w_reads = 0
    ps_reads = 0
    ps_writes = 0
    rows_trace: list[tuple] = []
    max_resident = 0

    for w in range(nw):
        base = w * ell
        resident = 0
        for j in range(k):
            v = stream[base + j]
            if v != 0:
                resident += 1
            col = cols[j]
            if sparse:
                if v == 0:
                    if not iacts_compressed:
                        # uncompressed bypass: no skip machinery, the column
                        # issues anyway with every multiplier gated
                        ia_reads += 1
                        if trace:
                            for t, (s0_, s1_) in enumerate(simd_pair_schedule(col.entries)):
                                rows_trace.append(
                                    (work + t + 1, base + j, s0_[0], s1_[0] if s1_ else None, True)
                                )
                        work += col.slots
                        gated += 2 * col.slots
                    continue
                ia_reads += 1
                if trace:
                    for t, (s0_, s1_) in enumerate(simd_pair_schedule(col.entries)):
                        half = s1_ is None or s1_[1] == 0 or s0_[1] == 0
                        rows_trace.append(
                            (work + t + 1, base + j, s0_[0], s1_[0] if s1_ else None, half)
                        )
                work += col.slots
                w_reads += col.slots
                macs += col.nonzeros
                gated += 2 * col.slots - col.nonzeros
                ps_reads += col.nonzeros
                ps_writes += col.nonzeros
                for m_idx, wv in col.entries:
                    if wv != 0:
                        psums[m_idx][w] = _accumulate(
                            psums[m_idx][w], wv * v, f"[{m_idx}][{w}]"
                        )
            else:
                # dense-gate pipeline: one nominal pair per cycle, all of them
                ia_reads += 1
                for m_idx in range(mapping.m0):
                    wv = rows_value(cols, j, m_idx)
                    work += 1
                    if mode is PeMode.DENSE_GATE:
                        executed = v != 0 and wv != 0
                    else:
                        executed = v != 0
                    if executed:
                        macs += 1
                        w_reads += 1
                        ps_reads += 1
                        ps_writes += 1
                        if wv != 0:
                            psums[m_idx][w] = _accumulate(
                                psums[m_idx][w], wv * v, f"[{m_idx}][{w}]"
                            )
                    else:
                        gated += 1
                    if trace:
                        rows_trace.append((work, base + j, m_idx, None, not executed))
        max_resident = max(max_resident, resident if iacts_compressed else k)

    fill = SPARSE_PIPELINE_FILL if sparse else DENSE_PIPELINE_FILL
    occupancy = {
        "iact_addr": (seg_per_window + 1) if iacts_compressed else 0,
        "iact_data": max_resident,
        "weight_addr": k + 1,
        "weight_data": weight_words,
        "psum": mapping.m0,
    }
    events = {
        "mac": macs,
        "spad_read": ia_reads + w_reads + ps_reads,
        "spad_write": ps_writes,
        "gated_cycle": gated,
        "idle_cycle": 0,
    }
    return PeRunResult(
        cycles=fill + work,
        work_cycles=work,
        fill_cycles=fill,
        macs_executed=macs,
        gated_macs=gated,
        psums=psums,
        spad_occupancy=occupancy,
        energy_events=events,
        iact_spad_reads=ia_reads,
        weight_spad_reads=w_reads,
        psum_spad_reads=ps_reads,
        psum_spad_writes=ps_writes,
        num_windows=nw,
        mode=mode,
        trace=rows_trace,
    )


def rows_value(cols: list[_Column], j: int, m_idx: int) -> int:
    """Dense view of a stored column (absent rows are zeros)."""
    for idx, v in cols[j].entries:
        if idx == m_idx:
            return v
    return 0


def dense_oracle(
    iacts: Sequence[int],
    weights: Sequence[Sequence[int]],
    mapping: PeMapping,
    num_windows: int | None = None,
    psums_in: Sequence[Sequence[int]] | None = None,
) -> list[list[int]]:
    """Reference multi-channel 1D convolution, naively computed.

    Same overflow contract as run_pe so the two stay bit-comparable.
    """
    stream = [int(v) for v in iacts]
    rows = [list(r) for r in weights]
    k = mapping.window_size
    nw = mapping.num_windows(len(stream)) if num_windows is None else num_windows
    psums = _seed_psums(psums_in, mapping.m0, nw)
    for w in range(nw):
        for j in range(k):
            x = stream[w * mapping.window_len + j]
            if x == 0:
                continue
            for m in range(mapping.m0):
                if rows[m][j] != 0:
                    psums[m][w] = _accumulate(psums[m][w], rows[m][j] * x, f"[{m}][{w}]")
    return psums


def trace_csv(result: PeRunResult) -> str:
    """Debug dump: one issue slot per line."""
    lines = ["cycle,iact_idx,weight_idx0,weight_idx1,gated"]
    for cyc, ia, w0, w1, g in result.trace:
        lines.append(f"{cyc},{ia},{w0},{'' if w1 is None else w1},{int(g)}")
    return "\n".join(lines) + "\n"
