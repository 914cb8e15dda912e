"""Hierarchical mesh network model for the cluster array.

Three router families move operands between per-cluster buffers and the
PEs.  Input activations ride 24b ports that can fan out to any PE in a
destination cluster; weights ride 24b ports pinned to one PE row each
and never hop vertically; partial sums ride 40b ports along one PE
column each and never hop horizontally.  Routing is circuit-switched: a
static per-layer mode fixes the source-to-destination pattern, and a
two-wire enable/ready handshake moves one transfer per cycle across
each configured hop.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Tuple, Union

from .pe import PSUM_BITS, PSUM_MAX, PSUM_MIN, PsumOverflowError

# every router hop is registered; one cycle each is an assumption, the
# hardware reference gives no hop timing
HOP_LATENCY_CYCLES = 1


class NocConfigError(ValueError):
    """The static routing configuration cannot express the request."""


class Operand(str, enum.Enum):
    IACT = "iact"
    WEIGHT = "weight"
    PSUM = "psum"


class NocMode(str, enum.Enum):
    UNICAST = "unicast"
    HORIZONTAL_MULTICAST = "horizontal_multicast"
    VERTICAL_MULTICAST = "vertical_multicast"
    BROADCAST = "broadcast"
    GROUPED_MULTICAST = "grouped_multicast"
    INTERLEAVED_MULTICAST = "interleaved_multicast"


#: modes a single router implements directly; grouped/interleaved exist
#: only at the array level, composed from these four
ROUTER_LEVEL_MODES = frozenset({
    NocMode.UNICAST,
    NocMode.HORIZONTAL_MULTICAST,
    NocMode.VERTICAL_MULTICAST,
    NocMode.BROADCAST,
})

_GROUPED_MODES = frozenset({
    NocMode.GROUPED_MULTICAST,
    NocMode.INTERLEAVED_MULTICAST,
})


@dataclass(frozen=True)
class RouterSpec:
    """Port counts and width for one router family."""

    operand: Operand
    src_ports: int
    dst_ports: int
    port_bits: int

    def values_per_cycle(self, compressed: bool = False) -> int:
        """Operand values one port moves per cycle.

        A 24b port carries three 8b raw values or two 12b run-data
        pairs; a 40b port carries two 20b partial sums either way.
        """
        if self.operand is Operand.PSUM:
            return self.port_bits // 20
        return self.port_bits // 12 if compressed else self.port_bits // 8


IACT_ROUTER = RouterSpec(Operand.IACT, src_ports=4, dst_ports=4, port_bits=24)
WEIGHT_ROUTER = RouterSpec(Operand.WEIGHT, src_ports=2, dst_ports=2, port_bits=24)
PSUM_ROUTER = RouterSpec(Operand.PSUM, src_ports=3, dst_ports=3, port_bits=40)

_ROUTER_SPECS = {
    Operand.IACT: IACT_ROUTER,
    Operand.WEIGHT: WEIGHT_ROUTER,
    Operand.PSUM: PSUM_ROUTER,
}


def router_spec(operand: Union[Operand, str]) -> RouterSpec:
    return _ROUTER_SPECS[Operand(operand)]


@dataclass(frozen=True)
class ClusterArrayConfig:
    """Geometry of the PE/GLB/router cluster grid.

    Defaults give the 8x2 grid of 3x4-PE clusters (192 PEs) with one
    iact and one weight router per PE row and one psum router per PE
    column.  GLB storage per cluster: 3 iact banks of 1.5 kB plus 4
    psum banks of 1.875 kB.
    """

    cluster_rows: int = 8
    cluster_cols: int = 2
    pe_rows: int = 3
    pe_cols: int = 4
    iact_banks: int = 3
    iact_bank_bytes: int = 1536
    psum_banks: int = 4
    psum_bank_bytes: int = 1920

    def __post_init__(self) -> None:
        for name in ("cluster_rows", "cluster_cols", "pe_rows", "pe_cols",
                     "iact_banks", "iact_bank_bytes", "psum_banks",
                     "psum_bank_bytes"):
            if getattr(self, name) < 1:
                raise NocConfigError(f"{name} must be at least 1")

    @property
    def num_clusters(self) -> int:
        return self.cluster_rows * self.cluster_cols

    @property
    def pes_per_cluster(self) -> int:
        return self.pe_rows * self.pe_cols

    @property
    def num_pes(self) -> int:
        return self.num_clusters * self.pes_per_cluster

    @property
    def iact_routers_per_cluster(self) -> int:
        return self.pe_rows

    @property
    def weight_routers_per_cluster(self) -> int:
        return self.pe_rows

    @property
    def psum_routers_per_cluster(self) -> int:
        return self.pe_cols

    @property
    def glb_bytes_per_cluster(self) -> int:
        return (self.iact_banks * self.iact_bank_bytes
                + self.psum_banks * self.psum_bank_bytes)

    @property
    def glb_bytes(self) -> int:
        return self.num_clusters * self.glb_bytes_per_cluster

    def lanes_for(self, operand: Union[Operand, str]) -> int:
        # iact and weight routers partition by PE row, psum by PE column
        if Operand(operand) is Operand.PSUM:
            return self.pe_cols
        return self.pe_rows

    def cluster_index(self, cluster_row: int, cluster_col: int) -> int:
        self._check_cluster(cluster_row, cluster_col)
        return cluster_row * self.cluster_cols + cluster_col

    def pe_id(self, cluster_row: int, cluster_col: int,
              pe_row: int, pe_col: int) -> int:
        if not (0 <= pe_row < self.pe_rows and 0 <= pe_col < self.pe_cols):
            raise NocConfigError(
                f"PE ({pe_row},{pe_col}) outside the "
                f"{self.pe_rows}x{self.pe_cols} cluster"
            )
        base = self.cluster_index(cluster_row, cluster_col) * self.pes_per_cluster
        return base + pe_row * self.pe_cols + pe_col

    def cluster_pes(self, cluster_row: int, cluster_col: int) -> Tuple[int, ...]:
        base = self.cluster_index(cluster_row, cluster_col) * self.pes_per_cluster
        return tuple(range(base, base + self.pes_per_cluster))

    def row_pes(self, cluster_row: int, cluster_col: int,
                pe_row: int) -> Tuple[int, ...]:
        return tuple(self.pe_id(cluster_row, cluster_col, pe_row, pc)
                     for pc in range(self.pe_cols))

    def col_pes(self, cluster_row: int, cluster_col: int,
                pe_col: int) -> Tuple[int, ...]:
        return tuple(self.pe_id(cluster_row, cluster_col, pr, pe_col)
                     for pr in range(self.pe_rows))

    def _check_cluster(self, cluster_row: int, cluster_col: int) -> None:
        if not (0 <= cluster_row < self.cluster_rows
                and 0 <= cluster_col < self.cluster_cols):
            raise NocConfigError(
                f"cluster ({cluster_row},{cluster_col}) outside the "
                f"{self.cluster_rows}x{self.cluster_cols} grid"
            )


DEFAULT_ARRAY = ClusterArrayConfig()


@dataclass(frozen=True)
class Source:
    """One stream origin: a GLB bank lane or an off-chip feed lane.

    The lane picks the within-cluster partition the stream lands on
    (PE row for iacts and weights, PE column for psums).
    """

    cluster_row: int
    cluster_col: int
    lane: int
    port: str = "glb"   # "glb" or "offchip"


@dataclass(frozen=True)
class ModeAssignment:
    mode: NocMode
    groups: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", NocMode(self.mode))
        if self.groups < 1:
            raise NocConfigError("group count must be at least 1")
        if self.groups != 1 and self.mode not in _GROUPED_MODES:
            raise NocConfigError(
                f"group count applies only to grouped/interleaved modes, "
                f"not {self.mode.value}"
            )

    def to_json_dict(self) -> dict:
        return {"mode": self.mode.value, "groups": self.groups}

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "ModeAssignment":
        return cls(mode=NocMode(obj["mode"]), groups=int(obj.get("groups", 1)))


@dataclass(frozen=True)
class RoutingConfig:
    """Static per-layer routing mode for each operand stream."""

    iact: ModeAssignment
    weight: ModeAssignment
    psum: ModeAssignment

    def __post_init__(self) -> None:
        if self.weight.mode is NocMode.VERTICAL_MULTICAST:
            raise NocConfigError("weight routers have no vertical links")
        if self.psum.mode not in (NocMode.UNICAST, NocMode.VERTICAL_MULTICAST):
            raise NocConfigError("psum routing is vertical-only")

    def for_operand(self, operand: Union[Operand, str]) -> ModeAssignment:
        return getattr(self, Operand(operand).value)

    def to_json_dict(self) -> dict:
        return {op.value: self.for_operand(op).to_json_dict() for op in Operand}

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "RoutingConfig":
        return cls(iact=ModeAssignment.from_json_dict(obj["iact"]),
                   weight=ModeAssignment.from_json_dict(obj["weight"]),
                   psum=ModeAssignment.from_json_dict(obj["psum"]))


def _cluster_classes(mode: NocMode, groups: int, num_clusters: int) -> list:
    """Partition flat cluster indices into multicast groups.

    Grouped mode takes contiguous row-major blocks; interleaved mode
    deals clusters round-robin so each group threads through the whole
    array.
    """
    if num_clusters % groups:
        raise NocConfigError(
            f"{groups} groups do not divide {num_clusters} clusters evenly"
        )
    if mode is NocMode.GROUPED_MULTICAST:
        size = num_clusters // groups
        return [list(range(g * size, (g + 1) * size)) for g in range(groups)]
    return [list(range(g, num_clusters, groups)) for g in range(groups)]


def _check_source(operand: Operand, source: Source,
                  arr: ClusterArrayConfig) -> None:
    arr._check_cluster(source.cluster_row, source.cluster_col)
    lanes = arr.lanes_for(operand)
    if not 0 <= source.lane < lanes:
        raise NocConfigError(
            f"lane {source.lane} out of range for {operand.value} "
            f"({lanes} lanes)"
        )
    if operand is Operand.WEIGHT:
        if source.port != "offchip":
            raise NocConfigError("weights stream from the off-chip port, "
                                 "not the GLB")
    elif source.port != "glb":
        raise NocConfigError(f"{operand.value} streams originate at GLB banks")


def _destination_clusters(assign: ModeAssignment, source: Source,
                          arr: ClusterArrayConfig) -> list:
    mode = assign.mode
    sr, sc = source.cluster_row, source.cluster_col
    if mode is NocMode.UNICAST:
        return [(sr, sc)]
    if mode is NocMode.HORIZONTAL_MULTICAST:
        return [(sr, cc) for cc in range(arr.cluster_cols)]
    if mode is NocMode.VERTICAL_MULTICAST:
        return [(cr, sc) for cr in range(arr.cluster_rows)]
    if mode is NocMode.BROADCAST:
        return [(cr, cc) for cr in range(arr.cluster_rows)
                for cc in range(arr.cluster_cols)]
    flat = sr * arr.cluster_cols + sc
    classes = _cluster_classes(mode, assign.groups, arr.num_clusters)
    mine = next(cls for cls in classes if flat in cls)
    return [divmod(i, arr.cluster_cols) for i in mine]


def destinations(cfg: RoutingConfig, operand: Union[Operand, str],
                 source: Source,
                 arr: ClusterArrayConfig = DEFAULT_ARRAY) -> frozenset:
    """PE ids one source reaches under the configured mode.

    Within each destination cluster the reach follows the router
    family: iacts land on the source's lane row, except broadcast where
    the crossbar spreads one stream over every PE; weights land on the
    lane row; psums feed the lane column's accumulation chain (entry at
    the column boundary, so the whole column is reported).

    Weight broadcast covers all cluster rows by replicating the stream
    at the off-chip feed of each row; no vertical router links are
    involved.
    """
    operand = Operand(operand)
    assign = cfg.for_operand(operand)
    _check_source(operand, source, arr)
    clusters = _destination_clusters(assign, source, arr)
    if operand is Operand.IACT and assign.mode is NocMode.BROADCAST:
        pes = [p for cr, cc in clusters for p in arr.cluster_pes(cr, cc)]
    elif operand is Operand.PSUM:
        pes = [p for cr, cc in clusters for p in arr.col_pes(cr, cc, source.lane)]
    else:
        pes = [p for cr, cc in clusters for p in arr.row_pes(cr, cc, source.lane)]
    return frozenset(pes)


# Router-level route tables.  Port orders:
#   4x4 (iact):   src [north, south, east-west, local]  dst [north, south, east-west, pe]
#   2x2 (weight): src [east-west, off-chip]             dst [east-west, pe]
#   3x3 (psum):   src [north, south, local]             dst [north, south, pe]
def route_matrix(mode: Union[NocMode, str], spec: RouterSpec) -> dict:
    mode = NocMode(mode)
    if mode not in ROUTER_LEVEL_MODES:
        raise NocConfigError(
            f"{mode.value} is an array-level pattern; a single router runs "
            f"unicast, multicast, or broadcast"
        )
    key = (spec.src_ports, spec.dst_ports)
    if key == (4, 4):
        table = {
            NocMode.UNICAST: {3: (3,)},
            NocMode.HORIZONTAL_MULTICAST: {3: (2, 3), 2: (3,)},
            NocMode.VERTICAL_MULTICAST: {3: (0, 1, 3), 0: (1, 3), 1: (0, 3)},
            NocMode.BROADCAST: {3: (0, 1, 2, 3), 0: (1, 2, 3),
                                1: (0, 2, 3), 2: (0, 1, 3)},
        }
    elif key == (2, 2):
        if mode is NocMode.VERTICAL_MULTICAST:
            raise NocConfigError("weight routers have no vertical links")
        table = {
            NocMode.UNICAST: {1: (1,)},
            NocMode.HORIZONTAL_MULTICAST: {1: (0, 1), 0: (1,)},
            # broadcast rides the same horizontal route; each cluster row's
            # off-chip feed replicates the stream
            NocMode.BROADCAST: {1: (0, 1), 0: (1,)},
        }
    elif key == (3, 3):
        if mode in (NocMode.HORIZONTAL_MULTICAST, NocMode.BROADCAST):
            raise NocConfigError("psum routing is vertical-only")
        table = {
            NocMode.UNICAST: {2: (2,)},
            NocMode.VERTICAL_MULTICAST: {2: (0, 1, 2), 0: (1, 2), 1: (0, 2)},
        }
    else:
        raise NocConfigError(
            f"no route table for a {spec.src_ports}x{spec.dst_ports} router"
        )
    return table[mode]


@dataclass(frozen=True)
class HandshakeResult:
    dst_enables: Tuple[bool, ...]
    src_readies: Tuple[bool, ...]
    data_select: Tuple[Optional[int], ...]


def handshake(enables: Sequence, readies: Sequence,
              mode: Union[NocMode, str],
              spec: RouterSpec = IACT_ROUTER) -> HandshakeResult:
    """One router's combinational handshake for a cycle.

    Each destination enable is the OR of the enables routed to it and
    each source ready is the AND of the readies of its destinations; a
    source with no route is vacuously ready.  Two sources driving the
    same destination is a configuration error, not arbitration.
    """
    enables = tuple(bool(e) for e in enables)
    readies = tuple(bool(r) for r in readies)
    if len(enables) != spec.src_ports:
        raise NocConfigError(
            f"expected {spec.src_ports} source enables, got {len(enables)}"
        )
    if len(readies) != spec.dst_ports:
        raise NocConfigError(
            f"expected {spec.dst_ports} destination readies, got {len(readies)}"
        )
    route = route_matrix(mode, spec)
    dst_en = [False] * spec.dst_ports
    select = [None] * spec.dst_ports
    for s in range(spec.src_ports):
        if not enables[s]:
            continue
        for d in route.get(s, ()):
            if dst_en[d]:
                raise NocConfigError(
                    f"sources {select[d]} and {s} both drive destination {d}"
                )
            dst_en[d] = True
            select[d] = s
    src_rdy = tuple(all(readies[d] for d in route.get(s, ()))
                    for s in range(spec.src_ports))
    return HandshakeResult(tuple(dst_en), src_rdy, tuple(select))


def _source_units(assign: ModeAssignment, arr: ClusterArrayConfig) -> list:
    """Flat cluster-index sets served by one independent stream source."""
    mode = assign.mode
    cols = arr.cluster_cols
    if mode is NocMode.UNICAST:
        return [[i] for i in range(arr.num_clusters)]
    if mode is NocMode.HORIZONTAL_MULTICAST:
        return [[r * cols + c for c in range(cols)]
                for r in range(arr.cluster_rows)]
    if mode is NocMode.VERTICAL_MULTICAST:
        return [[r * cols + c for r in range(arr.cluster_rows)]
                for c in range(cols)]
    if mode is NocMode.BROADCAST:
        return [list(range(arr.num_clusters))]
    return _cluster_classes(mode, assign.groups, arr.num_clusters)


def stream_count(cfg: RoutingConfig, operand: Union[Operand, str],
                 active_pes: Iterable[int],
                 arr: ClusterArrayConfig = DEFAULT_ARRAY) -> int:
    """Independently sourced streams feeding at least one active PE.

    A multicast stream counts once no matter how many PEs share it.
    Iact broadcast collapses to a single stream for the whole array;
    weight broadcast still needs one stream per active PE row because
    different rows hold different filter rows.
    """
    operand = Operand(operand)
    active = frozenset(active_pes)
    for p in active:
        if not 0 <= p < arr.num_pes:
            raise NocConfigError(f"PE id {p} outside the {arr.num_pes}-PE array")
    if not active:
        return 0
    assign = cfg.for_operand(operand)
    if operand is Operand.IACT and assign.mode is NocMode.BROADCAST:
        return 1
    count = 0
    for unit in _source_units(assign, arr):
        for lane in range(arr.lanes_for(operand)):
            for flat in unit:
                cr, cc = divmod(flat, arr.cluster_cols)
                part = (arr.col_pes(cr, cc, lane) if operand is Operand.PSUM
                        else arr.row_pes(cr, cc, lane))
                if any(p in active for p in part):
                    count += 1
                    break
    return count


def delivered_bandwidth(cfg: RoutingConfig, operand: Union[Operand, str],
                        active_pes: Iterable[int],
                        arr: ClusterArrayConfig = DEFAULT_ARRAY,
                        compressed: bool = False) -> int:
    """Unique operand values (or run-data pairs) per cycle into active PEs."""
    operand = Operand(operand)
    streams = stream_count(cfg, operand, active_pes, arr)
    return streams * router_spec(operand).values_per_cycle(compressed)


@dataclass(frozen=True)
class OperandDelivery:
    operand: Operand
    uncovered: Tuple[int, ...]
    overlapped: Tuple[int, ...]

    @property
    def ok(self) -> bool:
        return not self.uncovered and not self.overlapped

    def to_json_dict(self) -> dict:
        return {"ok": self.ok,
                "uncovered": list(self.uncovered),
                "overlapped": list(self.overlapped)}


@dataclass(frozen=True)
class DeliveryReport:
    per_operand: Tuple[OperandDelivery, ...]

    @property
    def ok(self) -> bool:
        return all(entry.ok for entry in self.per_operand)

    def for_operand(self, operand: Union[Operand, str]) -> OperandDelivery:
        operand = Operand(operand)
        for entry in self.per_operand:
            if entry.operand is operand:
                return entry
        raise KeyError(operand.value)

    def to_json_dict(self) -> dict:
        return {"ok": self.ok,
                "operands": {e.operand.value: e.to_json_dict()
                             for e in self.per_operand}}


def validate_delivery(cfg: RoutingConfig,
                      sources: Mapping,
                      active_pes: Iterable[int],
                      arr: ClusterArrayConfig = DEFAULT_ARRAY) -> DeliveryReport:
    """Check that every active PE gets each operand from exactly one source.

    `sources` maps operand to the Source list the mapping intends to
    drive.  Active PEs reached by no source are reported as uncovered;
    PEs reached by two or more are overlapped (circuit-switched routes
    cannot arbitrate).
    """
    active = frozenset(active_pes)
    entries = []
    for operand_key in sorted(sources, key=lambda k: Operand(k).value):
        operand = Operand(operand_key)
        hits = Counter()
        for src in sources[operand_key]:
            for p in destinations(cfg, operand, src, arr) & active:
                hits[p] += 1
        uncovered = tuple(sorted(active - hits.keys()))
        overlapped = tuple(sorted(p for p, n in hits.items() if n > 1))
        entries.append(OperandDelivery(operand, uncovered, overlapped))
    return DeliveryReport(tuple(entries))


def psum_chain_accumulate(partials: Sequence[Sequence[int]]) -> list:
    """Fold per-PE partial sums through a vertical accumulation chain.

    `partials[0]` enters at the column boundary; each later row adds its
    values one hop up the chain.  Every intermediate total must fit the
    signed psum width, mirroring the in-PE overflow rule.
    """
    rows = [list(int(v) for v in row) for row in partials]
    if not rows:
        raise ValueError("empty accumulation chain")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError("chain rows carry different psum counts")
    for row in rows:
        for v in row:
            if not PSUM_MIN <= v <= PSUM_MAX:
                raise PsumOverflowError(
                    f"psum {v} outside signed {PSUM_BITS}-bit range"
                )
    total = rows[0][:]
    for row in rows[1:]:
        for i, v in enumerate(row):
            s = total[i] + v
            if not PSUM_MIN <= s <= PSUM_MAX:
                raise PsumOverflowError(
                    f"chain total {s} outside signed {PSUM_BITS}-bit range"
                )
            total[i] = s
    return total
