import json

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from eyesim.workload import (
    DataCounts,
    LayerShape,
    ModelFormatError,
    data_counts,
    load_bundled_model,
    load_model,
    mac_count,
    parse_model,
    reuse_profile,
)
from oracles import touched_data_counts

# exact totals of the bundled descriptors, frozen once computed
ALEXNET_MACS = 724_406_816
MOBILENET_HALF_128_MACS = 49_160_192
MOBILENET_224_MACS = 568_740_352
GOOGLENET_MACS = 1_582_671_872


def unit_shape(**kw):
    base = dict(m=1, c=1, h=1, w=1, r=1, s=1)
    base.update(kw)
    return LayerShape(**base)


def test_unit_layer_has_one_mac():
    assert mac_count(unit_shape()) == 1


def test_all_ones_counts():
    assert data_counts(unit_shape()) == DataCounts(1, 1, 1)


def test_known_small_conv():
    # 2 output channels, 3 input channels, 4x4 input, 3x3 filter -> 2x2 out
    shp = LayerShape(m=2, c=3, h=4, w=4, r=3, s=3)
    assert shp.e == 2 and shp.f == 2
    assert mac_count(shp) == 2 * 3 * 2 * 2 * 3 * 3
    assert data_counts(shp) == DataCounts(3 * 16, 2 * 3 * 9, 2 * 4)


def test_strided_output_extent():
    shp = LayerShape(m=1, c=1, h=227, w=227, r=11, s=11, u=4)
    assert shp.e == 55 and shp.f == 55


@pytest.mark.parametrize("name,macs", [
    ("alexnet", ALEXNET_MACS),
    ("mobilenet_0.5_128", MOBILENET_HALF_128_MACS),
    ("mobilenet_1.0_224", MOBILENET_224_MACS),
    ("googlenet", GOOGLENET_MACS),
])
def test_bundled_model_totals(name, macs):
    assert load_bundled_model(name).total_macs() == macs


def test_headline_mac_totals_and_ratio():
    alex = load_bundled_model("alexnet").total_macs()
    mob = load_bundled_model("mobilenet_0.5_128").total_macs()
    assert abs(alex - 724.4e6) / 724.4e6 < 0.005
    assert abs(mob - 49.2e6) / 49.2e6 < 0.005
    assert abs(alex / mob - 14.7) < 0.1


def test_alexnet_structure():
    model = load_bundled_model("alexnet")
    labels = [lab for lab, _ in model]
    assert labels == ["CONV1", "CONV2", "CONV3", "CONV4", "CONV5", "FC6", "FC7", "FC8"]
    kinds = [shp.kind for _, shp in model]
    assert kinds == ["conv"] * 5 + ["fc"] * 3
    assert model.shape("CONV2").g == 2
    assert model.shape("FC6").e == 1 and model.shape("FC6").f == 1


dims4 = st.integers(min_value=1, max_value=4)


@settings(max_examples=60, deadline=None)
@given(g=dims4, n=dims4, m=dims4, c=dims4, e=dims4, f=dims4, r=dims4, s=dims4, u=dims4)
def test_counts_match_index_enumeration(g, n, m, c, e, f, r, s, u):
    """data_counts equals brute-force distinct-index counting.

    Shapes are built with minimal h, w for their outputs, and the stride
    must not exceed the filter (else interior pixels go untouched and the
    declared iact count intentionally over-reports).
    """
    assume(u <= min(r, s))
    h = (e - 1) * u + r
    w = (f - 1) * u + s
    shp = LayerShape(g=g, n=n, m=m, c=c, h=h, w=w, r=r, s=s, u=u)
    assert (shp.e, shp.f) == (e, f)
    got = data_counts(shp)
    assert (got.iacts, got.weights, got.psums) == touched_data_counts(g, n, m, c, e, f, r, s, u)


@settings(max_examples=100, deadline=None)
@given(g=dims4, n=dims4, m=dims4, c=dims4, e=dims4, f=dims4, r=dims4, s=dims4, u=dims4)
def test_reuse_identities_exact(g, n, m, c, e, f, r, s, u):
    """mac_count == count * reuse holds exactly, per datatype."""
    shp = LayerShape(g=g, n=n, m=m, c=c, h=(e - 1) * u + r, w=(f - 1) * u + s, r=r, s=s, u=u)
    macs = mac_count(shp)
    counts = data_counts(shp)
    prof = reuse_profile(shp)
    assert counts.iacts * prof.iact_reuse == macs
    assert counts.weights * prof.weight_reuse == macs
    assert counts.psums * prof.psum_reuse == macs


@settings(max_examples=100, deadline=None)
@given(g=dims4, n=dims4, m=dims4, c=dims4, e=dims4, f=dims4, r=dims4, s=dims4,
       u=st.integers(min_value=1, max_value=2))
def test_reuse_at_least_one_for_covering_strides(g, n, m, c, e, f, r, s, u):
    if u > min(r, s):
        return  # degenerate stride can leave pixels untouched
    shp = LayerShape(g=g, n=n, m=m, c=c, h=(e - 1) * u + r, w=(f - 1) * u + s, r=r, s=s, u=u)
    prof = reuse_profile(shp)
    assert prof.iact_reuse >= 1
    assert prof.weight_reuse >= 1
    assert prof.psum_reuse >= 1


def test_mac_count_monotone_in_each_dimension():
    base = dict(g=2, n=2, m=3, c=3, e=4, f=4, r=2, s=2, u=1)

    def build(**kw):
        d = dict(base)
        d.update(kw)
        return LayerShape(
            g=d["g"], n=d["n"], m=d["m"], c=d["c"], r=d["r"], s=d["s"], u=d["u"],
            h=(d["e"] - 1) * d["u"] + d["r"], w=(d["f"] - 1) * d["u"] + d["s"],
        )

    ref = mac_count(build())
    for dim in ("g", "n", "m", "c", "e", "f", "r", "s"):
        bumped = mac_count(build(**{dim: base[dim] + 1}))
        assert bumped >= ref


def test_fc_canonical_form():
    shp = LayerShape(kind="fc", m=10, c=4, h=3, w=3, r=3, s=3)
    assert shp.e == 1 and shp.f == 1
    assert mac_count(shp) == 10 * 4 * 9
    assert data_counts(shp).weights == 10 * 4 * 9


def test_dw_layer_keeps_channels_in_g():
    shp = LayerShape(kind="dw", g=8, m=1, c=1, h=6, w=6, r=3, s=3)
    assert mac_count(shp) == 8 * 4 * 4 * 9
    with pytest.raises(ModelFormatError):
        LayerShape(kind="dw", g=8, m=2, c=1, h=6, w=6, r=3, s=3)


def test_pw_layer_filter_must_be_1x1():
    LayerShape(kind="pw", m=4, c=4, h=6, w=6, r=1, s=1)
    with pytest.raises(ModelFormatError):
        LayerShape(kind="pw", m=4, c=4, h=6, w=6, r=3, s=3)


def test_parse_model_accepts_consistent_e_f():
    doc = {"name": "t", "layers": [
        {"label": "L", "kind": "conv", "m": 2, "c": 1, "h": 5, "w": 5, "r": 3, "s": 3, "e": 3, "f": 3},
    ]}
    model = parse_model(doc)
    assert model.shape("L").e == 3


def test_parse_model_rejects_inconsistent_e():
    doc = {"name": "t", "layers": [
        {"label": "bad", "kind": "conv", "m": 2, "c": 1, "h": 5, "w": 5, "r": 3, "s": 3, "e": 4},
    ]}
    with pytest.raises(ModelFormatError) as exc:
        parse_model(doc)
    assert "bad" in str(exc.value) and "'e'" in str(exc.value)


def test_parse_model_rejects_zero_dim_naming_layer_and_field():
    doc = {"name": "t", "layers": [
        {"label": "conv9", "m": 0, "c": 1, "h": 5, "w": 5, "r": 3, "s": 3},
    ]}
    with pytest.raises(ModelFormatError) as exc:
        parse_model(doc)
    msg = str(exc.value)
    assert "conv9" in msg and "'m'" in msg


def test_parse_model_rejects_missing_field():
    doc = {"name": "t", "layers": [{"label": "x", "m": 1, "c": 1, "h": 5, "w": 5}]}
    with pytest.raises(ModelFormatError) as exc:
        parse_model(doc)
    assert "'r'" in str(exc.value)


def test_parse_model_rejects_oversize_filter():
    doc = {"name": "t", "layers": [
        {"label": "x", "m": 1, "c": 1, "h": 2, "w": 2, "r": 3, "s": 3},
    ]}
    with pytest.raises(ModelFormatError):
        parse_model(doc)


def test_parse_model_rejects_duplicate_labels():
    layer = {"label": "x", "m": 1, "c": 1, "h": 3, "w": 3, "r": 1, "s": 1}
    with pytest.raises(ModelFormatError) as exc:
        parse_model({"name": "t", "layers": [layer, dict(layer)]})
    assert "duplicate" in str(exc.value)


def test_load_model_rejects_bad_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ModelFormatError):
        load_model(p)


def test_load_model_round_trip(tmp_path):
    doc = {"name": "tiny", "layers": [
        {"label": "a", "kind": "conv", "m": 2, "c": 3, "h": 6, "w": 6, "r": 3, "s": 3},
        {"label": "b", "kind": "fc", "m": 4, "c": 2, "h": 4, "w": 4},
    ]}
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(doc))
    model = load_model(p)
    assert model.name == "tiny" and len(model) == 2
    assert model.shape("b").r == 4
