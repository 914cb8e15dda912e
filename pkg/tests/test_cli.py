import json
import subprocess
import sys

import numpy as np
import pytest

from eyesim.cli import (
    EXIT_INPUT,
    EXIT_OK,
    EXIT_SIM,
    main,
    parse_bw,
    parse_scales,
)
from eyesim.csc import read_tensor_file, write_tensor_file
from eyesim.engine import CLOCK_HZ
from eyesim.workload import mac_count, parse_model


def write_model(tmp_path, name, layers):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps({"name": name, "layers": layers}))
    return str(p)


TOY_LAYERS = [
    {"label": "conv", "kind": "conv", "m": 4, "c": 3, "h": 8, "w": 8,
     "r": 3, "s": 3},
    {"label": "fc", "kind": "fc", "m": 8, "c": 16, "h": 1, "w": 1,
     "r": 1, "s": 1},
]


# ---------------------------------------------------------------- analyze


def test_analyze_json_default_grid(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["analyze", "--model", model]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["pes"] == 192
    assert doc["grid"] == [24, 8]
    assert doc["dataflow"] == "rs"
    assert set(doc["layers"]) == {"conv", "fc"}
    assert len(doc["layers"]["conv"]["steps"]) == 7


def test_analyze_pes_flag_square_grid(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["analyze", "--model", model, "--pes", "256"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["pes"] == 256
    assert doc["grid"] == [16, 16]


def test_analyze_non_square_pes_rejected(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["analyze", "--model", model, "--pes", "200"]) == EXIT_INPUT
    assert "square" in capsys.readouterr().err


def test_analyze_csv_rows(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["analyze", "--model", model, "--format", "csv"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("model,layer,dataflow,pes,bound")
    assert len(lines) == 3


def test_analyze_1d_weight_stationary_bound(tmp_path, capsys):
    # one 7-tap 1-D convolution: the stationary filter caps parallelism
    # at the filter length
    model = write_model(tmp_path, "line", [
        {"label": "t", "kind": "conv", "m": 1, "c": 1, "h": 10, "w": 1,
         "r": 7, "s": 1},
    ])
    assert main(["analyze", "--model", model, "--dataflow", "ws"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["layers"]["t"]["steps"][1]["bound_float"] == 7.0


def test_analyze_malformed_model_field_error(tmp_path, capsys):
    model = write_model(tmp_path, "bad", [
        {"label": "x", "kind": "conv", "m": 0, "c": 1, "h": 5, "w": 5},
    ])
    assert main(["analyze", "--model", model]) == EXIT_INPUT
    assert "'m'" in capsys.readouterr().err


def test_missing_model_file(capsys):
    assert main(["analyze", "--model", "no_such_model"]) == EXIT_INPUT
    assert "bundled" in capsys.readouterr().err


# ---------------------------------------------------------------- simulate


def test_simulate_byte_identical_reruns(tmp_path):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["simulate", "--model", model, "--out", str(a)]) == EXIT_OK
    assert main(["simulate", "--model", model, "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.json.log").exists()
    assert not list(tmp_path.glob("*.tmp"))


def test_simulate_seed_changes_tensors(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    docs = []
    for seed in ("0", "1"):
        assert main(["simulate", "--model", model, "--seed", seed]) == EXIT_OK
        docs.append(json.loads(capsys.readouterr().out))
    assert docs[0]["seed"] == 0
    assert docs[0]["layers"][1]["macs_executed"] != \
        docs[1]["layers"][1]["macs_executed"]


def test_simulate_csv_has_total_row(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["simulate", "--model", model, "--format", "csv"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("model,variant,layer,cycles")
    assert lines[-1].split(",")[2] == "TOTAL"


def test_simulate_compact_model_prefers_sparse_variant(tmp_path, capsys):
    # depthwise/pointwise stack: skipping plus the two-wide pipe wins
    model = write_model(tmp_path, "compact", [
        {"label": "CONV1", "kind": "conv", "m": 8, "c": 3, "h": 16, "w": 16,
         "r": 3, "s": 3, "u": 2},
        {"label": "DW2", "kind": "dw", "g": 8, "m": 1, "c": 1, "h": 8,
         "w": 8, "r": 3, "s": 3},
        {"label": "PW2", "kind": "pw", "m": 16, "c": 8, "h": 6, "w": 6,
         "r": 1, "s": 1},
        {"label": "FC", "kind": "fc", "m": 16, "c": 64, "h": 1, "w": 1,
         "r": 1, "s": 1},
    ])
    totals = {}
    for variant in ("v1", "v2"):
        assert main(["simulate", "--model", model, "--variant", variant]) \
            == EXIT_OK
        totals[variant] = json.loads(capsys.readouterr().out)["total_cycles"]
    assert totals["v2"] < totals["v1"]


def test_simulate_sparsity_flag_is_zero_fraction(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    executed = {}
    for sp in ("0.0", "0.9"):
        assert main(["simulate", "--model", model, "--sparsity", sp]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        executed[sp] = sum(l["macs_executed"] for l in doc["layers"])
    assert executed["0.9"] < executed["0.0"]


def test_simulate_sparsity_out_of_range(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["simulate", "--model", model, "--sparsity", "1.5"]) \
        == EXIT_INPUT


def test_simulate_tensor_files(tmp_path, capsys):
    layers = [{"label": "only", "kind": "conv", "m": 2, "c": 2, "h": 4,
               "w": 4, "r": 2, "s": 2}]
    model = write_model(tmp_path, "filed", layers)
    shape = parse_model(json.loads((tmp_path / "filed.json").read_text())) \
        .shape("only")
    write_tensor_file(tmp_path / "only.iact.eyt", (1, 1, 2, 4, 4), [1] * 32)
    write_tensor_file(tmp_path / "only.weight.eyt", (1, 2, 2, 2, 2), [1] * 16)
    assert main(["simulate", "--model", model,
                 "--tensors", str(tmp_path)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    # all-ones operands: every nominal pair really fires
    assert doc["layers"][0]["macs_executed"] == mac_count(shape)


def test_simulate_tensor_files_half_pair_rejected(tmp_path, capsys):
    model = write_model(tmp_path, "filed", [
        {"label": "only", "kind": "conv", "m": 2, "c": 2, "h": 4, "w": 4,
         "r": 2, "s": 2}])
    write_tensor_file(tmp_path / "only.iact.eyt", (1, 1, 2, 4, 4), [1] * 32)
    assert main(["simulate", "--model", model,
                 "--tensors", str(tmp_path)]) == EXIT_INPUT
    assert "only.weight.eyt" in capsys.readouterr().err


def test_simulate_bw_presets_and_numbers(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["simulate", "--model", model, "--bw", "ddr4-3200"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["bw_bytes_per_cycle"] == pytest.approx(25_600e6 / CLOCK_HZ)
    assert main(["simulate", "--model", model, "--bw", "800"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["bw_bytes_per_cycle"] == pytest.approx(4.0)
    assert main(["simulate", "--model", model, "--bw", "fast"]) == EXIT_INPUT


def test_parse_bw_units():
    assert parse_bw("unlimited") is None
    assert parse_bw("ddr4-3200") == pytest.approx(128.0)
    assert parse_bw("200") == pytest.approx(1.0)
    from eyesim.cli import CliInputError
    with pytest.raises(CliInputError):
        parse_bw("-3")


def test_simulate_unmappable_layer_is_sim_failure(tmp_path, capsys):
    # a 16-wide filter row cannot sit in one PE's address space
    model = write_model(tmp_path, "wide", [
        {"label": "x", "kind": "conv", "m": 1, "c": 1, "h": 16, "w": 16,
         "r": 16, "s": 16}])
    assert main(["simulate", "--model", model]) == EXIT_SIM


def test_simulate_energy_cost_env(tmp_path, capsys, monkeypatch):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["simulate", "--model", model]) == EXIT_OK
    base = json.loads(capsys.readouterr().out)
    costs = tmp_path / "costs.toml"
    costs.write_text("mac = 5.0\n")
    monkeypatch.setenv("EYESIM_COSTS", str(costs))
    assert main(["simulate", "--model", model]) == EXIT_OK
    custom = json.loads(capsys.readouterr().out)
    assert custom["energy"]["cost_table_hash"] != \
        base["energy"]["cost_table_hash"]
    assert custom["energy"]["total"] > base["energy"]["total"]
    monkeypatch.setenv("EYESIM_COSTS", str(tmp_path / "gone.toml"))
    assert main(["simulate", "--model", model]) == EXIT_INPUT


# ---------------------------------------------------------------- encode


def test_encode_decode_matrix_round_trip(tmp_path, capsys):
    src = tmp_path / "m.eyt"
    write_tensor_file(src, (4, 6),
                      [0, 0, 3, 0, 0, 1, 0, 0, 0, 0, 0, 0,
                       2, 0, 0, 0, 7, 0, 0, 0, 0, 0, 0, -5])
    dump = tmp_path / "m.json"
    back = tmp_path / "back.eyt"
    assert main(["encode", str(src), "--out", str(dump)]) == EXIT_OK
    assert main(["encode", str(dump), "--decode", "--out", str(back)]) \
        == EXIT_OK
    assert src.read_bytes() == back.read_bytes()


def test_encode_decode_stream_round_trip(tmp_path):
    src = tmp_path / "s.eyt"
    write_tensor_file(src, (11,), [0, 0, 4, 0, 0, 0, 0, 0, 0, 0, 9])
    dump = tmp_path / "s.json"
    back = tmp_path / "b.eyt"
    assert main(["encode", str(src), "--segment-len", "4",
                 "--out", str(dump)]) == EXIT_OK
    assert main(["encode", str(dump), "--decode", "--out", str(back)]) \
        == EXIT_OK
    assert src.read_bytes() == back.read_bytes()
    dims, values = read_tensor_file(back)
    assert dims == (11,)
    assert values[-1] == 9


def test_encode_stats_are_consistent(tmp_path, capsys):
    src = tmp_path / "m.eyt"
    rows = np.zeros((8, 8), dtype=np.int8)
    rows[0, 0] = 3
    rows[5, 2] = -1
    write_tensor_file(src, (8, 8), [int(v) for v in rows.reshape(-1)])
    assert main(["encode", str(src)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["dims"] == [8, 8]
    assert doc["stats"]["stored_pairs"] == 2
    assert doc["stats"]["dense_bits"] == 8 * 64
    assert doc["stats"]["compression_ratio"] > 1
    assert doc["csc"]["segment_len"] == 8
    assert len(doc["csc"]["addresses"]) == 9


def test_encode_stream_requires_segment_len(tmp_path, capsys):
    src = tmp_path / "s.eyt"
    write_tensor_file(src, (6,), [1, 0, 0, 2, 0, 0])
    assert main(["encode", str(src)]) == EXIT_INPUT
    assert "--segment-len" in capsys.readouterr().err


def test_encode_high_rank_rejected(tmp_path, capsys):
    src = tmp_path / "t.eyt"
    write_tensor_file(src, (2, 2, 2), [1] * 8)
    assert main(["encode", str(src)]) == EXIT_INPUT


def test_encode_without_input_or_sweep(capsys):
    assert main(["encode"]) == EXIT_INPUT


def test_encode_sweep_prefers_four_bit_counts(capsys):
    assert main(["encode", "--sweep"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["best_width"] == 4
    assert doc["widths"] == [2, 3, 4, 5, 6]


def test_encode_sweep_csv_layout(capsys):
    assert main(["encode", "--sweep", "--format", "csv"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == ("sparsity,mean_bits_w2,mean_bits_w3,mean_bits_w4,"
                        "mean_bits_w5,mean_bits_w6")
    assert lines[-1].startswith("best_width,4")


# ---------------------------------------------------------------- sweep


def test_sweep_csv_multi_variant_one_header(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["sweep", "--model", model, "--scales", "1,4",
                 "--variant", "v2,v1"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "model,variant,pes,cycles,normalized"
    assert len(lines) == 5
    assert {l.split(",")[1] for l in lines[1:]} == {"v1", "v2"}


def test_sweep_single_scale_single_row(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["sweep", "--model", model, "--scales", "64"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 2
    assert lines[1].endswith(",1")


def test_sweep_json_format(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["sweep", "--model", model, "--scales", "4,16",
                 "--format", "json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert [p["pes"] for p in doc["sweeps"][0]["points"]] == [4, 16]


def test_sweep_bad_scale_tokens(tmp_path, capsys):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    assert main(["sweep", "--model", model, "--scales", "12"]) == EXIT_INPUT
    assert main(["sweep", "--model", model, "--scales", "lots"]) == EXIT_INPUT
    assert main(["sweep", "--model", model, "--scales", ""]) == EXIT_INPUT


def test_parse_scales_accepts_squares():
    assert parse_scales("1,4,256") == (1, 4, 256)


# ---------------------------------------------------------------- driver


def test_usage_errors_exit_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_INPUT
    with pytest.raises(SystemExit) as exc:
        main(["analyze"])                # --model is required
    assert exc.value.code == EXIT_INPUT


def test_installed_entry_point_runs(tmp_path):
    model = write_model(tmp_path, "toy", TOY_LAYERS)
    proc = subprocess.run(
        [sys.executable, "-m", "eyesim.cli", "analyze", "--model", model,
         "--format", "csv"],
        capture_output=True, text=True)
    assert proc.returncode == EXIT_OK
    assert proc.stdout.startswith("model,layer,")
