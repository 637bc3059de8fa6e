import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from s2svo.errors import ConfigurationError, DimensionError, FormatError, NumericError
from s2svo.model import (
    COMBINERS,
    ModelConfig,
    build_model,
    combine_query,
    read_checkpoint,
    score,
    write_checkpoint,
)
from s2svo.wordvec import EmbeddingTable, embed_label


def tiny(**kw):
    base = dict(input_mode="s2s", in_channels=5, word_dim=6, d_v=8, tiny_width=4, seed=0)
    base.update(kw)
    return build_model(ModelConfig(**base))


@pytest.fixture
def table():
    rng = np.random.default_rng(0)
    return EmbeddingTable(6, {w: rng.normal(size=6) for w in ["ride", "wash", "horse", "cup"]})


def test_combiner_definitions():
    assert combine_query([1, 2], [3, 4], "catV").tolist() == [1, 2, 3, 4]
    assert combine_query([1, 2], [3, 4], "catH").tolist() == [1, 3, 2, 4]
    assert combine_query([1, 2], [0, 0], "sum").tolist() == [1, 2]
    with pytest.raises(DimensionError):
        combine_query([1, 2], [1, 2, 3])
    with pytest.raises(ConfigurationError):
        combine_query([1], [1], "outer")


def test_hadamard_zero_guard():
    out = combine_query([0.0, 1.0], [1.0, 0.0], "hadamard")
    assert np.all(out == 0) and np.all(np.isfinite(out))


vec = arrays(np.float64, 7, elements=st.floats(-100, 100, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(a=vec, b=vec)
def test_combiner_properties(a, b):
    prod = a * b
    h = combine_query(a, b, "hadamard")
    if math.sqrt(sum(float(x) ** 2 for x in prod)) > 1e-12:
        assert abs(math.sqrt(sum(float(x) ** 2 for x in h)) - 1.0) < 1e-6
    assert np.array_equal(combine_query(a, b, "sum"), combine_query(b, a, "sum"))
    assert np.array_equal(combine_query(a, b, "hadamard"), combine_query(b, a, "hadamard"))
    cat_h = combine_query(a, b, "catH")
    assert np.array_equal(cat_h[0::2], a) and np.array_equal(cat_h[1::2], b)
    assert np.array_equal(np.sort(cat_h), np.sort(combine_query(a, b, "catV")))


def test_config_invariants():
    assert ModelConfig(backbone="paper18", d_v=512).c_hidden == 1024
    assert ModelConfig(backbone="paper50", d_v=2048).c_hidden == 4096
    with pytest.raises(ConfigurationError):
        ModelConfig(backbone="paper18", d_v=128)
    with pytest.raises(ConfigurationError):
        ModelConfig(input_mode="rgb", in_channels=300)
    with pytest.raises(ConfigurationError):
        ModelConfig(separate_qnets=True, d_v=7)


@pytest.mark.parametrize("combiner", COMBINERS)
@pytest.mark.parametrize("separate", [False, True])
def test_shapes_per_mode(combiner, separate):
    m = tiny(combiner=combiner, separate_qnets=separate)
    rng = np.random.default_rng(1)
    f_q = m.encode_query(rng.normal(size=(3, 6)), rng.normal(size=(3, 6)))
    assert f_q.shape == (3, 8)
    if not separate:
        assert m.qnet[0].in_features == (12 if combiner in ("catV", "catH") else 6)
    else:
        assert m.qnet_verb[-1].out_features == 4 and m.qnet_obj[-1].out_features == 4
    assert m.cnet[0].in_features == 16


def test_full_size_query_widths():
    assert build_model(ModelConfig(combiner="catV", d_v=16)).qnet[0].in_features == 600
    assert build_model(ModelConfig(combiner="sum", d_v=16)).qnet[0].in_features == 300


def test_vnet_shape_and_zero_input():
    m = build_model(ModelConfig(d_v=32, tiny_width=8)).eval()
    out = m.forward_vnet(np.zeros((64, 64, 300), np.float32))
    assert out.shape == (32,) and torch.isfinite(out).all()
    assert torch.equal(out, m.forward_vnet(np.zeros((64, 64, 300), np.float32)))
    assert m.forward_vnet(np.zeros((2, 64, 64, 300), np.float32)).shape == (2, 32)


def test_vnet_channel_mismatch():
    m = build_model(ModelConfig(input_mode="rgb", in_channels=3, d_v=8))
    with pytest.raises(DimensionError):
        m.forward_vnet(np.zeros((64, 64, 300), np.float32))


def test_paper_backbone_first_layer():
    m = build_model(ModelConfig(backbone="paper18", d_v=512, in_channels=300)).eval()
    assert m.vnet.conv1.in_channels == 300
    assert m.forward_vnet(np.zeros((1, 32, 32, 300), np.float32)).shape == (1, 512)


def test_wrong_qnet_path():
    with pytest.raises(ConfigurationError):
        tiny().forward_qnet_separate(np.zeros(6), np.zeros(6))
    with pytest.raises(ConfigurationError):
        tiny(separate_qnets=True).forward_qnet(np.zeros(6))


def test_closeness_closed_form():
    m = tiny(d_v=1, c_hidden=2).double()
    with torch.no_grad():
        m.cnet[0].weight.copy_(torch.eye(2, dtype=torch.float64))
        m.cnet[0].bias.zero_()
        m.cnet[2].weight.copy_(torch.tensor([[0.7, -1.3]], dtype=torch.float64))
        m.cnet[2].bias.fill_(0.2)
    for fv, fq in [(0.5, 2.0), (-1.0, 0.25), (3.0, -4.0)]:
        pre = 0.7 * max(fv, 0.0) - 1.3 * max(fq, 0.0) + 0.2
        with torch.no_grad():
            tau = float(m.closeness(torch.tensor([fv], dtype=torch.float64),
                                    torch.tensor([fq], dtype=torch.float64)))
        assert abs(tau - 1.0 / (1.0 + math.exp(-pre))) < 1e-9


def test_closeness_range_and_errors():
    m = tiny()
    rng = np.random.default_rng(3)
    tau = m.closeness(rng.normal(size=(50, 8)) * 1e3, rng.normal(size=(50, 8)) * 1e3)
    assert torch.all(tau > 0) and torch.all(tau < 1)
    with pytest.raises(NumericError):
        m.closeness(np.full(8, np.nan), np.zeros(8))
    with pytest.raises(DimensionError):
        m.closeness(np.zeros(7), np.zeros(8))


def test_closeness_not_symmetric():
    m = tiny()
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=8), rng.normal(size=8)
    with torch.no_grad():
        assert float(m.closeness(a, b)) != float(m.closeness(b, a))


def test_score_composition(table):
    m = tiny()
    blob = np.random.default_rng(5).normal(size=(16, 16, 5)).astype(np.float32)
    with torch.no_grad():
        f_v = m.vnet(torch.as_tensor(blob).permute(2, 0, 1).unsqueeze(0))[0]
        q = combine_query(embed_label(table, "ride"), embed_label(table, "horse"), "sum")
        f_q = m.qnet(torch.as_tensor(q, dtype=torch.float32))
        manual = float(torch.sigmoid(m.cnet(torch.cat([f_v, f_q]))))
    assert score(m, blob, "ride", "horse", table) == manual
    assert score(m, blob, "ride", "horse", table) == score(m, blob, "ride", "horse", table)


@pytest.mark.parametrize("combiner,symmetric", [("sum", True), ("hadamard", True), ("catV", False), ("catH", False)])
def test_swap_invariance_per_mode(table, combiner, symmetric):
    m = tiny(combiner=combiner)
    blob = np.random.default_rng(6).normal(size=(16, 16, 5)).astype(np.float32)
    same = score(m, blob, "ride", "horse", table) == score(m, blob, "horse", "ride", table)
    assert same is symmetric


def test_score_rgb_rejects_blob(table):
    m = build_model(ModelConfig(input_mode="rgb", in_channels=3, word_dim=6, d_v=8, tiny_width=4))
    with pytest.raises(DimensionError):
        score(m, np.zeros((16, 16, 300), np.float32), "ride", "horse", table)


def test_init_determinism():
    a, b, c = tiny(seed=3), tiny(seed=3), tiny(seed=4)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert [(k, v.shape) for k, v in sa.items()] == [(k, v.shape) for k, v in sc.items()]
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert not all(torch.equal(sa[k], sc[k]) for k in sa)


@pytest.mark.parametrize("separate", [False, True])
def test_checkpoint_round_trip(tmp_path, separate):
    m = tiny(separate_qnets=separate, combiner="catH")
    extra = {"adam.exp_avg.cnet.0.bias": torch.arange(16, dtype=torch.float32)}
    write_checkpoint(tmp_path / "a.s2sm", m, {"iteration": 7}, extra)
    back, meta, ex = read_checkpoint(tmp_path / "a.s2sm")
    assert meta == {"iteration": 7}
    assert torch.equal(ex["adam.exp_avg.cnet.0.bias"], extra["adam.exp_avg.cnet.0.bias"])
    assert back.config == m.config
    write_checkpoint(tmp_path / "b.s2sm", back, meta, ex)
    assert (tmp_path / "a.s2sm").read_bytes() == (tmp_path / "b.s2sm").read_bytes()
    raw = (tmp_path / "a.s2sm").read_bytes()
    assert raw[:4] == b"S2SM" and int.from_bytes(raw[4:8], "little") == 1


def test_checkpoint_corrupt(tmp_path):
    write_checkpoint(tmp_path / "a.s2sm", tiny())
    raw = (tmp_path / "a.s2sm").read_bytes()
    (tmp_path / "t.s2sm").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        read_checkpoint(tmp_path / "t.s2sm")
    (tmp_path / "m.s2sm").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_checkpoint(tmp_path / "m.s2sm")
