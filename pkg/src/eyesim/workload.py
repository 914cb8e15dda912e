"""Layer shapes, model descriptors, and the counting arithmetic built on them.

Every analysis in this package starts from an eight-dimensional convolution
nest: groups (g), batch (n), output channels (m), input channels (c), input
height/width (h, w), filter height/width (r, s), output height/width (e, f)
and stride (u).  Fully-connected layers are canonicalized into the same nest
(filter covers the whole input, 1x1 output); depth-wise layers carry their
channels in g with m = c = 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable

VALID_KINDS = ("conv", "dw", "pw", "fc")


class ModelFormatError(ValueError):
    """Raised for descriptors that fail shape or schema validation."""


def output_extent(inp: int, filt: int, stride: int) -> int:
    """Output size of a valid (no padding) strided slide: floor((in-f)/u)+1."""
    return (inp - filt) // stride + 1


@dataclass(frozen=True)
class LayerShape:
    """One layer of the nest.  All dimensions are >= 1 and self-consistent.

    h and w are the sizes actually convolved over.  Nets that use padding
    must describe the padded sizes here (and may state e, f explicitly in
    their descriptors as a cross-check); the shape invariant is always the
    valid-padding identity e = floor((h-r)/u)+1.
    """

    m: int
    c: int
    h: int
    w: int
    r: int
    s: int
    g: int = 1
    n: int = 1
    u: int = 1
    kind: str = "conv"

    def __post_init__(self) -> None:
        for name in ("g", "n", "m", "c", "h", "w", "r", "s", "u"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ModelFormatError(f"dimension {name!r} must be a positive integer, got {v!r}")
        if self.kind not in VALID_KINDS:
            raise ModelFormatError(f"unknown layer kind {self.kind!r}")
        if self.r > self.h or self.s > self.w:
            raise ModelFormatError(
                f"filter ({self.r}x{self.s}) larger than input ({self.h}x{self.w})"
            )
        if self.kind == "dw" and (self.m != 1 or self.c != 1):
            raise ModelFormatError("depth-wise layers carry channels in g and need m = c = 1")
        if self.kind == "pw" and (self.r != 1 or self.s != 1):
            raise ModelFormatError("point-wise layers need a 1x1 filter")
        if self.kind == "fc" and (self.r != self.h or self.s != self.w):
            raise ModelFormatError("fully-connected layers need r = h and s = w")

    @property
    def e(self) -> int:
        """Output height."""
        return output_extent(self.h, self.r, self.u)

    @property
    def f(self) -> int:
        """Output width."""
        return output_extent(self.w, self.s, self.u)


@dataclass(frozen=True)
class DataCounts:
    """Distinct operand values a layer touches, per datatype."""

    iacts: int
    weights: int
    psums: int


@dataclass(frozen=True)
class ReuseProfile:
    """MACs per distinct data value, kept exact as rationals.

    mac_count == count * reuse holds as an identity for each datatype.  For
    shapes with stride <= filter extent every value is >= 1; degenerate
    strides that leave input pixels untouched can push average iact reuse
    below one, and the profile reports that honestly rather than clamping.
    """

    iact_reuse: Fraction
    weight_reuse: Fraction
    psum_reuse: Fraction


def mac_count(shape: LayerShape) -> int:
    """Multiply-accumulate operations in the layer: g*n*m*c*e*f*r*s."""
    return shape.g * shape.n * shape.m * shape.c * shape.e * shape.f * shape.r * shape.s


def data_counts(shape: LayerShape) -> DataCounts:
    return DataCounts(
        iacts=shape.g * shape.n * shape.c * shape.h * shape.w,
        weights=shape.g * shape.m * shape.c * shape.r * shape.s,
        psums=shape.g * shape.n * shape.m * shape.e * shape.f,
    )

def reuse_profile(shape: LayerShape) -> ReuseProfile:
    macs = mac_count(shape)
    counts = data_counts(shape)
    return ReuseProfile(
        iact_reuse=Fraction(macs, counts.iacts),
        weight_reuse=Fraction(macs, counts.weights),
        psum_reuse=Fraction(macs, counts.psums),
    )


@dataclass(frozen=True)
class DnnModel:
    """An ordered list of labeled layers."""

    name: str
    layers: tuple[tuple[str, LayerShape], ...]

    def __iter__(self) -> Iterable[tuple[str, LayerShape]]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def shape(self, label: str) -> LayerShape:
        for lab, shp in self.layers:
            if lab == label:
                return shp
        raise KeyError(label)

    def total_macs(self) -> int:
        return sum(mac_count(shp) for _, shp in self.layers)


_REQUIRED_FIELDS = ("m", "c", "h", "w")
_DIM_FIELDS = ("g", "n", "m", "c", "h", "w", "r", "s", "u")


def _parse_layer(entry: dict, index: int) -> tuple[str, LayerShape]:
    label = entry.get("label", f"layer{index}")
    kind = entry.get("kind", "conv")

    def fail(msg: str) -> ModelFormatError:
        return ModelFormatError(f"layer {label!r}: {msg}")

    if kind not in VALID_KINDS:
        raise fail(f"field 'kind' must be one of {VALID_KINDS}, got {kind!r}")
    for fld in _REQUIRED_FIELDS:
        if fld not in entry:
            raise fail(f"missing field {fld!r}")
    dims = {}
    for fld in _DIM_FIELDS:
        if fld in entry:
            v = entry[fld]
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise fail(f"field {fld!r} must be a positive integer, got {v!r}")
            dims[fld] = v
    # fc filters span the input; pw filters are 1x1.  Fill the implied values
    # so descriptors can omit them, but never silently override a contradiction.
    if kind == "fc":
        dims.setdefault("r", dims["h"])
        dims.setdefault("s", dims["w"])
    elif kind == "pw":
        dims.setdefault("r", 1)
        dims.setdefault("s", 1)
    for fld in ("r", "s"):
        if fld not in dims:
            raise fail(f"missing field {fld!r}")
    try:
        shape = LayerShape(kind=kind, **dims)
    except ModelFormatError as exc:
        raise fail(str(exc)) from None
    for fld, actual in (("e", shape.e), ("f", shape.f)):
        if fld in entry and entry[fld] != actual:
            raise fail(
                f"field {fld!r} = {entry[fld]} contradicts the shape "
                f"(computed {actual}); padded nets must list padded h/w"
            )
    return str(label), shape


def parse_model(doc: dict) -> DnnModel:
    """Validate a descriptor dict (see load_model for the file format)."""
    if not isinstance(doc, dict) or "layers" not in doc:
        raise ModelFormatError("descriptor must be an object with a 'layers' array")
    name = doc.get("name", "unnamed")
    raw_layers = doc["layers"]
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ModelFormatError("'layers' must be a non-empty array")
    layers = []
    seen = set()
    for i, entry in enumerate(raw_layers):
        if not isinstance(entry, dict):
            raise ModelFormatError(f"layer {i} must be an object")
        label, shape = _parse_layer(entry, i)
        if label in seen:
            raise ModelFormatError(f"layer {label!r}: duplicate label")
        seen.add(label)
        layers.append((label, shape))
    return DnnModel(name=str(name), layers=tuple(layers))


def load_model(path: str | Path) -> DnnModel:
    """Load a model descriptor.

    Format: {"name": str, "layers": [{"label", "kind", "g", "n", "m", "c",
    "h", "w", "r", "s", "u", optionally "e", "f"}, ...]}.  kind is one of
    conv|dw|pw|fc; g, n, u default to 1.
    """
    try:
        with open(path, "rb") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    return parse_model(doc)


def bundled_model_path(name: str) -> Path:
    """Path of a descriptor shipped with the package (alexnet, googlenet, ...)."""
    p = Path(__file__).parent / "models" / f"{name}.json"
    if not p.exists():
        have = sorted(q.stem for q in p.parent.glob("*.json"))
        raise ModelFormatError(f"no bundled model {name!r}; available: {', '.join(have)}")
    return p


def load_bundled_model(name: str) -> DnnModel:
    return load_model(bundled_model_path(name))
