"""Command-line front end.

Four subcommands: analyze (per-layer utilization bound reports),
simulate (full timing/energy runs), encode (tensor file compression and
inspection), sweep (PE-count scaling studies).  All randomness flows
through the --seed flag, and no output carries wall-clock state, so a
repeated invocation is byte-identical; the only timestamps live in the
optional sidecar log next to --out.

Exit codes: 0 success, 1 simulation or constraint failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .csc import (
    CscFormatError,
    compressed_size_bits,
    compression_ratio,
    count_width_report,
    decode,
    decode_matrix,
    dense_size_bits,
    encode_iact_stream,
    encode_weight_matrix,
    from_json_dict,
    packed_size_bits,
    read_tensor_file,
    to_json_dict,
    write_tensor_file,
)
from .engine import (
    CLOCK_HZ,
    ArchVariant,
    DEFAULT_COSTS,
    EnergyCostTable,
    EngineError,
    LayerTensors,
    density_profile,
    energy_report,
    run_model,
    scalability_sweep,
    synthetic_tensors,
)
from .eyexam import Dataflow, ExamConfig, analyze
from .mapper import MappingError
from .pe import CapacityError, PsumOverflowError
from .workload import DnnModel, ModelFormatError, load_bundled_model, load_model

BW_PRESETS = {
    "unlimited": None,
    # peak transfer rate of the usual desktop DIMM, in MB/s
    "ddr4-3200": 25_600.0,
}

EXIT_OK = 0
EXIT_SIM = 1
EXIT_INPUT = 2


class CliInputError(ValueError):
    """Bad arguments or unreadable/malformed input files."""


# ---------------------------------------------------------------- loading


def load_model_arg(token: str) -> DnnModel:
    """A path to a descriptor file, or the name of a bundled one."""
    p = Path(token)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise CliInputError(f"model file {token!r} does not exist")
        return load_model(p)
    return load_bundled_model(token)


def parse_bw(token: str) -> Optional[float]:
    """Bandwidth flag to bytes per cycle (None = unconstrained)."""
    if token in BW_PRESETS:
        mb_s = BW_PRESETS[token]
    else:
        try:
            mb_s = float(token)
        except ValueError:
            raise CliInputError(
                f"--bw must be 'unlimited', 'ddr4-3200' or a MB/s number, got {token!r}")
        if mb_s <= 0:
            raise CliInputError("--bw must be positive")
    if mb_s is None:
        return None
    return mb_s * 1e6 / CLOCK_HZ


def parse_scales(token: str) -> tuple[int, ...]:
    out = []
    for part in token.split(","):
        part = part.strip()
        try:
            pes = int(part)
        except ValueError:
            raise CliInputError(f"scale {part!r} is not a PE count")
        if pes < 1 or math.isqrt(pes) ** 2 != pes:
            raise CliInputError(f"scale {pes} is not a square PE grid")
        out.append(pes)
    if not out:
        raise CliInputError("need at least one scale")
    return tuple(out)


def parse_grid(pes: Optional[int]) -> ExamConfig:
    if pes is None:
        return ExamConfig()
    if pes < 1 or math.isqrt(pes) ** 2 != pes:
        raise CliInputError(f"--pes {pes} is not a square PE grid")
    side = math.isqrt(pes)
    return ExamConfig(array_rows=side, array_cols=side)


def load_cost_table() -> EnergyCostTable:
    path = os.environ.get("EYESIM_COSTS")
    if not path:
        return DEFAULT_COSTS
    if not Path(path).exists():
        raise CliInputError(f"EYESIM_COSTS file {path!r} does not exist")
    return EnergyCostTable.from_toml(path)


def layer_tensor_files(tensors_dir: str, label: str) -> Optional[LayerTensors]:
    """<dir>/<label>.iact.eyt and <label>.weight.eyt, if both exist."""
    base = Path(tensors_dir)
    ipath = base / f"{label}.iact.eyt"
    wpath = base / f"{label}.weight.eyt"
    if not ipath.exists() and not wpath.exists():
        return None
    if not (ipath.exists() and wpath.exists()):
        raise CliInputError(
            f"layer {label!r} needs both {ipath.name} and {wpath.name}")
    idims, ivals = read_tensor_file(ipath)
    wdims, wvals = read_tensor_file(wpath)
    if len(idims) != 5 or len(wdims) != 5:
        raise CliInputError(f"layer {label!r}: tensors must be rank 5")
    return LayerTensors(
        iacts=np.array(ivals, dtype=np.int8).reshape(idims),
        weights=np.array(wvals, dtype=np.int8).reshape(wdims),
    )


def gather_tensors(model: DnnModel, tensors_dir: Optional[str],
                   seed: int, sparsity: Optional[float]) -> dict:
    """Files when present, seeded synthetic operands otherwise."""
    profile = density_profile(model)
    out = {}
    for idx, (label, shape) in enumerate(model.layers):
        tens = layer_tensor_files(tensors_dir, label) if tensors_dir else None
        if tens is None:
            iact_d, weight_d = profile[idx]
            if sparsity is not None:
                iact_d = 1.0 - sparsity
            tens = synthetic_tensors(shape, seed=seed + idx,
                                     iact_density=iact_d,
                                     weight_density=weight_d)
        out[label] = tens
    return out


# ---------------------------------------------------------------- output


def emit(text: str, out: Optional[str], argv: Sequence[str]) -> None:
    """stdout by default; with --out, an atomic write plus a sidecar log
    (the log is the one place a timestamp is allowed)."""
    if out is None:
        sys.stdout.write(text)
        return
    target = Path(out)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, target)
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    with open(f"{target}.log", "a") as fh:
        fh.write(f"{stamp} eyesim {' '.join(argv)} -> {target}\n")


def as_json(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"


def as_csv(rows: Sequence[Sequence[object]]) -> str:
    return "".join(",".join(str(v) for v in row) + "\n" for row in rows)


# ---------------------------------------------------------------- analyze


def cmd_analyze(args: argparse.Namespace, argv: Sequence[str]) -> int:
    model = load_model_arg(args.model)
    cfg = parse_grid(args.pes)
    df = Dataflow(args.dataflow)
    reports = [(label, analyze(shape, cfg, df))
               for label, shape in model.layers]
    if args.format == "json":
        doc = {
            "model": model.name,
            "dataflow": df.value,
            "pes": cfg.num_pes,
            "grid": [cfg.array_rows, cfg.array_cols],
            "layers": {label: rep.to_json_dict() for label, rep in reports},
        }
        text = as_json(doc)
    else:
        rows = [("model", "layer", "dataflow", "pes", "bound",
                 "active_pes", "active_util", "active_fraction")]
        for label, rep in reports:
            rows.append((model.name, label, df.value, cfg.num_pes,
                         float(rep.bound), float(rep.active_pes),
                         float(rep.active_util), float(rep.active_fraction)))
        text = as_csv(rows)
    emit(text, args.out, argv)
    return EXIT_OK


# ---------------------------------------------------------------- simulate


def cmd_simulate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    model = load_model_arg(args.model)
    if args.sparsity is not None and not 0.0 <= args.sparsity <= 1.0:
        raise CliInputError("--sparsity must lie in [0, 1]")
    bw = parse_bw(args.bw)
    costs = load_cost_table()
    tensors = gather_tensors(model, args.tensors, args.seed, args.sparsity)
    result = run_model(model, tensors, variant=ArchVariant(args.variant),
                       bw_bytes_per_cycle=bw)
    energy = energy_report(result, costs)
    if args.format == "json":
        doc = result.to_json_dict()
        doc["seed"] = args.seed
        doc["bw_bytes_per_cycle"] = bw
        doc["energy"] = energy
        text = as_json(doc)
    else:
        rows = [("model", "variant", "layer", "cycles", "bound_by",
                 "macs_nominal", "macs_executed", "active_pes")]
        for r in result.layers:
            rows.append((model.name, result.variant.value, r.label, r.cycles,
                         r.bound_by, r.macs_nominal, r.macs_executed,
                         r.active_pes))
        rows.append((model.name, result.variant.value, "TOTAL",
                     result.total_cycles, "", result.total_macs, "", ""))
        text = as_csv(rows)
    emit(text, args.out, argv)
    return EXIT_OK


# ---------------------------------------------------------------- encode


def _encode_tensor(args: argparse.Namespace) -> dict:
    dims, values = read_tensor_file(args.input)
    if len(dims) == 1:
        if args.segment_len is None:
            raise CliInputError("rank-1 tensors need --segment-len")
        tensor = encode_iact_stream(values, args.segment_len)
    elif len(dims) == 2:
        rows = [values[i * dims[1]:(i + 1) * dims[1]] for i in range(dims[0])]
        tensor = encode_weight_matrix(rows)
    else:
        raise CliInputError(
            f"encode expects a rank-1 stream or rank-2 matrix, got rank {len(dims)}")
    return {
        "dims": list(dims),
        "csc": to_json_dict(tensor),
        "stats": {
            "dense_bits": dense_size_bits(tensor),
            "compressed_bits": compressed_size_bits(tensor),
            "packed_bits": packed_size_bits(tensor),
            "compression_ratio": compression_ratio(tensor),
            "stored_pairs": tensor.num_entries,
        },
    }


def cmd_encode(args: argparse.Namespace, argv: Sequence[str]) -> int:
    if args.sweep:
        rep = count_width_report(seed=args.seed)
        if args.format == "json":
            text = as_json(rep)
        else:
            rows = [("sparsity", *(f"mean_bits_w{w}" for w in rep["widths"]))]
            for sp in rep["sparsities"]:
                rows.append((sp, *(rep["mean_bits"][w][sp] for w in rep["widths"])))
            rows.append(("band_mean", *(rep["band_mean"][w] for w in rep["widths"])))
            rows.append(("best_width", rep["best_width"],
                         *("" for _ in rep["widths"][1:])))
            text = as_csv(rows)
        emit(text, args.out, argv)
        return EXIT_OK
    if args.input is None:
        raise CliInputError("encode needs an input file (or --sweep)")
    if args.decode:
        with open(args.input) as fh:
            doc = json.load(fh)
        body = doc.get("csc", doc)
        tensor = from_json_dict(body)
        if "dims" in doc:
            dims = tuple(int(d) for d in doc["dims"])
        else:
            dims = (tensor.num_segments * tensor.segment_len,)
        if len(dims) == 2:
            rows = decode_matrix(tensor)
            values = [v for row in rows for v in row]
        else:
            total = dims[0]
            values = decode(tensor)[:total]
        if args.out is None:
            raise CliInputError("--decode writes a tensor file; give --out")
        write_tensor_file(args.out, dims, values)
        return EXIT_OK
    text = as_json(_encode_tensor(args))
    emit(text, args.out, argv)
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def cmd_sweep(args: argparse.Namespace, argv: Sequence[str]) -> int:
    model = load_model_arg(args.model)
    scales = parse_scales(args.scales)
    variants = [ArchVariant(v.strip()) for v in args.variant.split(",")]
    results = [scalability_sweep(model, scales, variant=v) for v in variants]
    if args.format == "json":
        text = as_json({"model": model.name,
                        "sweeps": [r.to_json_dict() for r in results]})
    else:
        lines = results[0].csv_lines()
        for r in results[1:]:
            lines += r.csv_lines()[1:]          # one shared header
        text = "".join(line + "\n" for line in lines)
    emit(text, args.out, argv)
    return EXIT_OK


# ---------------------------------------------------------------- driver


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eyesim",
        description="Sparse-accelerator performance analysis and simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="per-layer utilization bound report")
    pa.add_argument("--model", required=True,
                    help="descriptor path or bundled model name")
    pa.add_argument("--dataflow", choices=[d.value for d in Dataflow],
                    default="rs")
    pa.add_argument("--pes", type=int, default=None,
                    help="square PE count (default: the 24x8 device grid)")

    ps = sub.add_parser("simulate", help="timing and energy simulation")
    ps.add_argument("--model", required=True)
    ps.add_argument("--tensors", default=None,
                    help="directory of <layer>.iact.eyt / <layer>.weight.eyt")
    ps.add_argument("--variant", choices=[v.value for v in ArchVariant],
                    default="v2")
    ps.add_argument("--bw", default="unlimited",
                    help="unlimited, ddr4-3200, or MB/s")
    ps.add_argument("--sparsity", type=float, default=None,
                    help="zero fraction for synthetic input activations")

    pe = sub.add_parser("encode", help="tensor file compression")
    pe.add_argument("input", nargs="?", default=None,
                    help="raw tensor file (or compressed dump with --decode)")
    pe.add_argument("--segment-len", type=int, default=None)
    pe.add_argument("--decode", action="store_true",
                    help="turn a compressed dump back into a tensor file")
    pe.add_argument("--sweep", action="store_true",
                    help="count-width size comparison across sparsities")

    pw = sub.add_parser("sweep", help="PE-count scaling study")
    pw.add_argument("--model", required=True)
    pw.add_argument("--scales", default="256,1024,16384",
                    help="comma-separated square PE counts")
    pw.add_argument("--variant", default="v2",
                    help="comma-separated subset of v1,v15,v2")

    for p in (pa, ps, pe, pw):
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--format", choices=["json", "csv"], default="json")
        p.add_argument("--seed", type=int, default=0)
    pw.set_defaults(format="csv")
    return parser


_HANDLERS = {
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "encode": cmd_encode,
    "sweep": cmd_sweep,
}

_INPUT_ERRORS = (CliInputError, ModelFormatError, CscFormatError,
                 OSError, json.JSONDecodeError)
_SIM_ERRORS = (EngineError, MappingError, CapacityError, PsumOverflowError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args, argv)
    except _INPUT_ERRORS as exc:
        print(f"eyesim: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _SIM_ERRORS as exc:
        print(f"eyesim: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
