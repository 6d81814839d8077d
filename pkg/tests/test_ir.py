import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privsplit.errors import ConfigError, DegenerateModelError, FormatError, ParseError
from privsplit.ir import (TECHNIQUES, Strategy, build_model, compression_ratio, count_macs,
                          count_params, load_checkpoint, partition_split, perf_indicators,
                          save_checkpoint, strategy_codec)
from privsplit.ir.graph import ModelGraph
from privsplit.ir.zoo import CLASSES, ZOO, ZOO_MANIFEST


@pytest.mark.parametrize("name", sorted(ZOO))
def test_zoo_matches_hand_manifest(name):
    g = build_model(name)
    m = ZOO_MANIFEST[name]
    assert len(g.layers) == m["layers"]
    assert g.output_shape == (m["classes"],)
    assert g.compressible_indices() == m["compressible"]
    assert count_params(g) == m["params"]
    assert count_macs(g) == m["macs"]


def test_lenet_manifest_values_spelled_out():
    # conv 1->8: 80, conv 8->16: 1168, fc 256->32: 8224, fc 32->4: 132
    assert ZOO_MANIFEST["tiny-lenet"]["params"] == 80 + 1168 + 8224 + 132
    assert ZOO_MANIFEST["tiny-lenet"]["macs"] == 18432 + 73728 + 8192 + 128


def test_empty_layer_list_is_config_error():
    with pytest.raises(ConfigError):
        build_model([])


def test_inconsistent_shapes_are_config_error():
    with pytest.raises(ConfigError):
        build_model([{"kind": "flatten"}, {"kind": "fc", "cin": 10, "cout": 2}])


def test_count_examples():
    conv = build_model([{"kind": "conv", "cin": 1, "cout": 8, "k": 3, "stride": 1, "padding": 1}])
    assert count_params(conv) == 80
    fc = build_model([{"kind": "fc", "cin": 120, "cout": 84}], input_shape=(120,))
    assert count_params(fc) == 10164
    assert count_macs(fc) == 10080
    conv16 = build_model([{"kind": "conv", "cin": 16, "cout": 32, "k": 3, "stride": 1, "padding": 1}],
                         input_shape=(16, 8, 8))
    assert count_macs(conv16) == 3 * 3 * 16 * 32 * 8 * 8 == 294912


def test_grouped_conv_macs_divide_cin():
    g = build_model([{"kind": "conv", "cin": 16, "cout": 16, "k": 3, "stride": 1, "padding": 1, "groups": 16}],
                    input_shape=(16, 8, 8))
    assert count_macs(g) == 3 * 3 * 1 * 16 * 8 * 8


def test_batchnorm_counts_affine_and_stats():
    g = build_model([{"kind": "batchnorm", "channels": 6}], input_shape=(6, 4, 4))
    assert count_params(g) == 24
    assert count_macs(g) == 0


def test_perf_indicator_examples():
    # a 2-layer mlp whose first layer holds 100 of 1000 parameters
    g = build_model([{"kind": "fc", "cin": 99, "cout": 1}, {"kind": "fc", "cin": 1, "cout": 450}],
                    input_shape=(99,))
    assert count_params(g) == 1000
    g.partition = 1
    s1, _ = perf_indicators(g)
    assert s1 == pytest.approx(0.9, abs=1e-12)
    g.partition = 0
    assert perf_indicators(g) == (1.0, 1.0)
    g.partition = len(g.layers)
    assert perf_indicators(g) == (0.0, 0.0)
    empty = build_model([{"kind": "relu"}], input_shape=(3,))
    with pytest.raises(DegenerateModelError):
        perf_indicators(empty)


def test_compression_ratio_examples():
    a = build_model("tiny-lenet")
    assert compression_ratio(a, a.copy()) == 0.0
    big = build_model([{"kind": "fc", "cin": 9, "cout": 100}], input_shape=(9,))      # 1000
    small = build_model([{"kind": "fc", "cin": 7, "cout": 100}], input_shape=(7,))    # 800
    assert compression_ratio(big, small) == pytest.approx(0.2, abs=1e-12)


@pytest.mark.parametrize("name", sorted(ZOO))
def test_partition_split_composition_is_bit_identical(name):
    g = build_model(name, seed=3)
    x = np.random.default_rng(0).random((5, 1, 16, 16)).astype(np.float32)
    full = g(x).data
    for p in g.unit_boundaries() + [q for q in range(len(g.layers) + 1) if g.valid_partition(q)]:
        g.partition = p
        enc, cloud = partition_split(g)
        assert np.array_equal(cloud(enc(x)).data, full)
        assert count_params(enc) + count_params(cloud) == count_params(g)


def test_partition_split_edges():
    g = build_model("tiny-lenet")
    x = np.random.default_rng(1).random((2, 1, 16, 16)).astype(np.float32)
    g.partition = 0
    enc, _ = partition_split(g)
    assert len(enc.layers) == 0 and np.array_equal(enc(x).data, x)
    g.partition = len(g.layers)
    enc, cloud = partition_split(g)
    assert len(cloud.layers) == 0
    np.testing.assert_array_equal(cloud(enc(x)).data, enc(x).data)


def test_partition_through_residual_link_is_rejected():
    g = build_model("tiny-vgg")
    assert not g.valid_partition(9)
    g.partition = 9
    with pytest.raises(ConfigError):
        partition_split(g)


@pytest.mark.parametrize("name", sorted(ZOO))
def test_s1_non_increasing_in_partition(name):
    g = build_model(name)
    values = []
    for p in range(len(g.layers) + 1):
        g.partition = p
        values.append(perf_indicators(g)[0])
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_strategy_codec_examples():
    s = strategy_codec("P:23 18:C2 22:C1")
    assert s == Strategy(23, {18: "C2", 22: "C1"})
    assert strategy_codec(s) == "P:23 18:C2 22:C1"
    assert strategy_codec("P:5") == Strategy(5)
    assert strategy_codec("22:C1 P:23 18:C2") == s
    for bad in ("5:X9", "P:5 5:X9", "3:C1", "P:2 5:C1", "P:4 1:C1 1:W1", "P:x", "garbage"):
        with pytest.raises(ParseError):
            strategy_codec(bad)


def test_strategy_codec_checks_against_graph():
    g = build_model("tiny-lenet")
    assert strategy_codec("P:6 0:W1 3:C1", g) == Strategy(6, {0: "W1", 3: "C1"})
    with pytest.raises(ParseError):
        strategy_codec("P:6 1:W1", g)           # relu
    with pytest.raises(ParseError):
        strategy_codec("P:10 7:C1", g)          # C1 on fc
    with pytest.raises(ParseError):
        strategy_codec("P:11", g)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 40).flatmap(lambda p: st.tuples(
    st.just(p),
    st.dictionaries(st.integers(0, max(p - 1, 0)), st.sampled_from(TECHNIQUES), max_size=p))))
def test_strategy_round_trip(pair):
    p, comps = pair
    comps = {i: t for i, t in comps.items() if i < p}
    s = Strategy(p, comps)
    assert strategy_codec(strategy_codec(s)) == s


@pytest.mark.parametrize("name", sorted(ZOO))
def test_every_built_graph_evaluates(name):
    g = build_model(name)
    out = g(np.zeros((2, 1, 16, 16), np.float32))
    assert out.shape == (2, CLASSES)


def test_checkpoint_round_trip(tmp_path):
    g = build_model("tiny-vgg", seed=4)
    g.partition = 12
    for k in g.buffers:
        g.buffers[k] = g.buffers[k] + 0.25
    save_checkpoint(g, tmp_path / "ck")
    h = load_checkpoint(tmp_path / "ck")
    assert h.structure() == g.structure()
    assert [layer.origin for layer in h.layers] == [layer.origin for layer in g.layers]
    x = np.random.default_rng(2).random((3, 1, 16, 16)).astype(np.float32)
    assert np.array_equal(h(x).data, g(x).data)


def test_checkpoint_corruption(tmp_path):
    g = build_model("tiny-mlp")
    root = save_checkpoint(g, tmp_path / "ck")
    manifest = root / "manifest.json"
    manifest.write_text(manifest.read_text().replace("privsplit-checkpoint", "other"))
    with pytest.raises(FormatError):
        load_checkpoint(root)
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "missing")


def test_copy_is_independent():
    g = build_model("tiny-mlp")
    h = g.copy()
    next(iter(h.params.values())).data[...] = 0
    assert not np.all(next(iter(g.params.values())).data == 0)
    assert isinstance(h, ModelGraph)
