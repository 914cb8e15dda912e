"""Run-length compressed sparse column codec for 8-bit tensors.

Non-zero values ride in (count, value) pairs: a 4-bit count of zeros skipped
since the previous stored value, then the 8-bit value itself.  A segment
address vector marks where each column (for weights) or each fixed-length
stream chunk (for input activations) begins, so the consumer can jump
straight to a segment without walking the whole stream.

Runs longer than the count field can hold are bridged with padding pairs:
a stored zero VALUE with a saturated count, which the decoder expands to
(max_count + 1) zeros.  Trailing zeros of a segment are never stored; the
decoder pads every segment out to segment_len.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

VALUE_BITS = 8
DEFAULT_COUNT_BITS = 4


class CscFormatError(ValueError):
    """Raised for structurally invalid compressed tensors."""


def _check_value(v: int) -> int:
    if not -(1 << (VALUE_BITS - 1)) <= v < (1 << (VALUE_BITS - 1)):
        raise CscFormatError(f"value {v} outside signed {VALUE_BITS}-bit range")
    return int(v)


@dataclass(frozen=True)
class CscTensor:
    """A compressed tensor: pairs plus the segment address vector.

    addresses has num_segments + 1 entries; segment k owns pair indices
    [addresses[k], addresses[k+1]).  An empty segment shows up as a repeated
    address.  segment_len is the decoded length of every segment.
    """

    data: tuple[int, ...]
    counts: tuple[int, ...]
    addresses: tuple[int, ...]
    segment_len: int
    count_bits: int = DEFAULT_COUNT_BITS

    def __post_init__(self) -> None:
        if self.segment_len < 1:
            raise CscFormatError("segment_len must be >= 1")
        if not 1 <= self.count_bits <= 8:
            raise CscFormatError("count_bits must be in 1..8")
        if len(self.data) != len(self.counts):
            raise CscFormatError("data and counts must have equal length")
        if len(self.addresses) < 2:
            raise CscFormatError("addresses needs at least 2 entries (one segment)")
        if self.addresses[0] != 0 or self.addresses[-1] != len(self.data):
            raise CscFormatError("addresses must start at 0 and end at len(data)")
        prev = 0
        for a in self.addresses:
            if a < prev:
                raise CscFormatError("addresses must be non-decreasing")
            prev = a
        cmax = self.max_count
        for cnt in self.counts:
            if not 0 <= cnt <= cmax:
                raise CscFormatError(f"count {cnt} outside 0..{cmax}")
        for v in self.data:
            _check_value(v)

    @property
    def max_count(self) -> int:
        return (1 << self.count_bits) - 1

    @property
    def num_segments(self) -> int:
        return len(self.addresses) - 1

    @property
    def num_entries(self) -> int:
        return len(self.data)


def _encode_segment(values: Sequence[int], count_bits: int) -> tuple[list[int], list[int]]:
    """Pair encoding of one segment; trailing zeros are dropped."""
    cmax = (1 << count_bits) - 1
    data: list[int] = []
    counts: list[int] = []
    run = 0
    for v in values:
        if v == 0:
            run += 1
            continue
        # a padding pair absorbs cmax skipped zeros plus its own zero value
        while run > cmax:
            data.append(0)
            counts.append(cmax)
            run -= cmax + 1
        data.append(_check_value(v))
        counts.append(run)
        run = 0
    return data, counts


def encode_iact_stream(
    stream: Sequence[int],
    segment_len: int,
    count_bits: int = DEFAULT_COUNT_BITS,
) -> CscTensor:
    """Compress a value stream into fixed-length, non-overlapping segments.

    The stream is zero-padded up to a whole number of segments; the final
    (possibly all-padding) segment is kept so num_segments is a function of
    the input length alone.
    """
    if segment_len < 1:
        raise CscFormatError("segment_len must be >= 1")
    values = [int(v) for v in stream]
    nseg = max(1, -(-len(values) // segment_len))
    values += [0] * (nseg * segment_len - len(values))
    data: list[int] = []
    counts: list[int] = []
    addresses = [0]
    for k in range(nseg):
        d, c = _encode_segment(values[k * segment_len : (k + 1) * segment_len], count_bits)
        data += d
        counts += c
        addresses.append(len(data))
    return CscTensor(tuple(data), tuple(counts), tuple(addresses), segment_len, count_bits)


def encode_weight_matrix(
    matrix: Sequence[Sequence[int]],
    count_bits: int = DEFAULT_COUNT_BITS,
) -> CscTensor:
    """Compress a rows x cols matrix column-major, one segment per column."""
    rows = [list(r) for r in matrix]
    if not rows or not rows[0]:
        raise CscFormatError("matrix must be non-empty")
    ncols = len(rows[0])
    if any(len(r) != ncols for r in rows):
        raise CscFormatError("matrix rows must have equal length")
    data: list[int] = []
    counts: list[int] = []
    addresses = [0]
    for j in range(ncols):
        d, c = _encode_segment([row[j] for row in rows], count_bits)
        data += d
        counts += c
        addresses.append(len(data))
    return CscTensor(tuple(data), tuple(counts), tuple(addresses), len(rows), count_bits)


def decode_segments(t: CscTensor) -> list[list[int]]:
    """Inverse transform, one dense list (of segment_len values) per segment."""
    out = []
    for k in range(t.num_segments):
        seg: list[int] = []
        for v, cnt in column_slice(t, k):
            seg.extend([0] * cnt)
            seg.append(v)
            if len(seg) > t.segment_len:
                raise CscFormatError(
                    f"segment {k} decodes past segment_len={t.segment_len}"
                )
        seg.extend([0] * (t.segment_len - len(seg)))
        out.append(seg)
    return out


def decode(t: CscTensor) -> list[int]:
    """Decode to the flat (zero-padded) stream the encoder saw."""
    flat: list[int] = []
    for seg in decode_segments(t):
        flat.extend(seg)
    return flat


def decode_matrix(t: CscTensor) -> list[list[int]]:
    """Inverse of encode_weight_matrix: segments become columns again."""
    cols = decode_segments(t)
    return [[cols[j][i] for j in range(len(cols))] for i in range(t.segment_len)]


def column_slice(t: CscTensor, col: int) -> Iterator[tuple[int, int]]:
    """Iterate (value, zero_run_count) pairs of one segment/column."""
    if not 0 <= col < t.num_segments:
        raise IndexError(f"segment {col} out of range 0..{t.num_segments - 1}")
    for i in range(t.addresses[col], t.addresses[col + 1]):
        yield t.data[i], t.counts[i]


def address_bits(t: CscTensor) -> int:
    """Width of one address entry: enough to index one past the last pair."""
    return max(1, t.num_entries.bit_length())


def compressed_size_bits(t: CscTensor) -> int:
    pair_bits = t.count_bits + VALUE_BITS
    return pair_bits * t.num_entries + address_bits(t) * len(t.addresses)


def dense_size_bits(t: CscTensor) -> int:
    return VALUE_BITS * t.segment_len * t.num_segments


def compression_ratio(t: CscTensor) -> float:
    """Dense bits over compressed bits; > 1 means the codec helped."""
    return dense_size_bits(t) / compressed_size_bits(t)


@dataclass(frozen=True)
class CscWordStream:
    """Wire format: packed (count | value) words plus the address words."""

    words: tuple[int, ...]
    address_words: tuple[int, ...]
    count_bits: int = DEFAULT_COUNT_BITS

    def __post_init__(self) -> None:
        limit = 1 << (self.count_bits + VALUE_BITS)
        for w in self.words:
            if not 0 <= w < limit:
                raise CscFormatError(f"packed word {w:#x} wider than a pair")

    @classmethod
    def from_tensor(cls, t: CscTensor) -> "CscWordStream":
        words = tuple((cnt << VALUE_BITS) | (val & 0xFF) for val, cnt in zip(t.data, t.counts))
        return cls(words=words, address_words=tuple(t.addresses), count_bits=t.count_bits)

    def unpack(self) -> list[tuple[int, int]]:
        """Back to (value, count) pairs with sign restored."""
        pairs = []
        for w in self.words:
            raw = w & 0xFF
            val = raw - 256 if raw >= 128 else raw
            pairs.append((val, w >> VALUE_BITS))
        return pairs


def to_json_dict(t: CscTensor) -> dict:
    """Dump format used by the CLI: data/counts/addresses/segment_len."""
    d = {
        "data": list(t.data),
        "counts": list(t.counts),
        "addresses": list(t.addresses),
        "segment_len": t.segment_len,
    }
    if t.count_bits != DEFAULT_COUNT_BITS:
        d["count_bits"] = t.count_bits
    return d


def from_json_dict(doc: dict) -> CscTensor:
    try:
        return CscTensor(
            data=tuple(int(v) for v in doc["data"]),
            counts=tuple(int(v) for v in doc["counts"]),
            addresses=tuple(int(v) for v in doc["addresses"]),
            segment_len=int(doc["segment_len"]),
            count_bits=int(doc.get("count_bits", DEFAULT_COUNT_BITS)),
        )
    except KeyError as exc:
        raise CscFormatError(f"dump missing field {exc.args[0]!r}") from None


# ---------------------------------------------------------------- files


TENSOR_MAGIC = b"EYT1"


def write_tensor_file(path, dims: Sequence[int], values: Sequence[int]) -> None:
    """Raw tensor container: the 4-byte magic, a u32 rank, one u32 per
    dimension, then row-major signed 8-bit values (all little-endian)."""
    import struct

    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise CscFormatError("tensor dims must be positive")
    total = 1
    for d in dims:
        total *= d
    vals = [_check_value(v) for v in values]
    if len(vals) != total:
        raise CscFormatError(f"dims {dims} call for {total} values, got {len(vals)}")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(struct.pack(f"<{total}b", *vals))


def read_tensor_file(path) -> tuple[tuple[int, ...], list[int]]:
    """Returns (dims, row-major values) or raises CscFormatError."""
    import struct

    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TENSOR_MAGIC:
        raise CscFormatError(f"{path}: not a tensor file (bad magic)")
    if len(blob) < 8:
        raise CscFormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", blob, 4)
    if rank < 1 or rank > 16:
        raise CscFormatError(f"{path}: implausible rank {rank}")
    need = 8 + 4 * rank
    if len(blob) < need:
        raise CscFormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", blob, 8)
    total = 1
    for d in dims:
        if d < 1:
            raise CscFormatError(f"{path}: non-positive dimension {d}")
        total *= d
    if len(blob) != need + total:
        raise CscFormatError(
            f"{path}: payload holds {len(blob) - need} values, dims call for {total}")
    values = list(struct.unpack_from(f"<{total}b", blob, need))
    return dims, values


# ---------------------------------------------------------------- widths


WIRE_WORD_BITS = 24


def packed_size_bits(t: CscTensor) -> int:
    """Bits occupied on the 24-bit wire and in the word-organized SPads.

    Pairs ride in fixed slots: two to a word while a pair fits 12 bits,
    one per word beyond that.  Narrower count fields therefore save
    nothing per pair but still pay their extra padding pairs; wider ones
    halve the packing density.  Address entries stay at their minimal
    per-entry width.
    """
    pair_bits = t.count_bits + VALUE_BITS
    per_word = max(1, WIRE_WORD_BITS // pair_bits)
    words = -(-t.num_entries // per_word)
    return WIRE_WORD_BITS * words + address_bits(t) * len(t.addresses)


def count_width_report(
    widths: Sequence[int] = (2, 3, 4, 5, 6),
    sparsities: Sequence[float] = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    trials: int = 30,
    stream_len: int = 256,
    segment_len: int = 16,
    seed: int = 0,
) -> dict:
    """Mean packed size by count-field width across sparsity levels.

    Seeded streams, so two runs of the same configuration agree bit for
    bit.  band_mean averages each width over the whole sparsity range;
    best_width is its argmin.
    """
    import random

    rng = random.Random(seed)
    mean_bits: dict[int, dict[float, float]] = {int(w): {} for w in widths}
    cases = {
        float(sp): [
            [0 if rng.random() < sp else rng.randrange(1, 128)
             for _ in range(stream_len)]
            for _ in range(trials)
        ]
        for sp in sparsities
    }
    for w in widths:
        for sp, streams in cases.items():
            sizes = [packed_size_bits(encode_iact_stream(s, segment_len, count_bits=w))
                     for s in streams]
            mean_bits[int(w)][sp] = sum(sizes) / len(sizes)
    band_mean = {w: sum(per.values()) / len(per) for w, per in mean_bits.items()}
    best = min(band_mean, key=band_mean.get)
    return {
        "widths": [int(w) for w in widths],
        "sparsities": [float(s) for s in sparsities],
        "trials": trials,
        "stream_len": stream_len,
        "segment_len": segment_len,
        "seed": seed,
        "mean_bits": mean_bits,
        "band_mean": band_mean,
        "best_width": best,
    }
