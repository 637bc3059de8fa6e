import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from s2svo.errors import DimensionError, FormatError, UnknownLabelError
from s2svo.maskio import InstanceMask, SceneAnnotation
from s2svo.s2s import aggregate_blobs, build_s2s, object_blob, read_blob, write_blob
from s2svo.wordvec import EmbeddingTable

from .oracles import fused_s2s_oracle, random_scene, random_table


@pytest.fixture
def cat_table():
    return EmbeddingTable(3, {"cat": [1, 0, 0], "dog": [0, 1, 0]})


def test_empty_mask_zero_blob():
    blob = object_blob(np.zeros((4, 5), bool), np.arange(3.0))
    assert blob.shape == (4, 5, 3) and not blob.any()


def test_full_mask_constant_field():
    v = np.array([0.5, -2.0, 3.0])
    blob = object_blob(np.ones((4, 5), bool), v)
    assert np.all(blob == v.astype(np.float32))


def test_object_blob_matches_pixel_loop():
    rng = np.random.default_rng(0)
    mask = rng.random((7, 9)) > 0.4
    v = rng.normal(size=11)
    blob = object_blob(mask, v)
    for y in range(7):
        for x in range(9):
            expect = v if mask[y, x] else np.zeros(11)
            assert np.array_equal(blob[y, x], expect.astype(np.float32))


def test_object_blob_dimension_check():
    with pytest.raises(DimensionError):
        object_blob(np.ones((2, 2), bool), np.ones(3), dim=4)


def test_aggregate_identity_and_empty():
    b = object_blob(np.eye(3, dtype=bool), np.array([1.0, 2.0]))
    assert np.array_equal(aggregate_blobs([b]), b)
    z = aggregate_blobs([], shape=(3, 3, 2))
    assert z.shape == (3, 3, 2) and not z.any()
    with pytest.raises(DimensionError):
        aggregate_blobs([])
    with pytest.raises(DimensionError):
        aggregate_blobs([b, np.zeros((3, 3, 3), np.float32)])


def test_overlapping_full_masks_add():
    u, v = np.array([1.0, 0.25, -1.0]), np.array([0.5, 0.5, 2.0])
    full = np.ones((3, 4), bool)
    s = aggregate_blobs([object_blob(full, u), object_blob(full, v)])
    assert np.all(s == (u + v).astype(np.float32))


def test_aggregate_permutation_invariant():
    rng = np.random.default_rng(1)
    blobs = [object_blob(rng.random((8, 8)) > 0.5, rng.normal(size=5)) for _ in range(4)]
    ref = aggregate_blobs(blobs)
    for perm in itertools.permutations(blobs):
        assert np.max(np.abs(aggregate_blobs(list(perm)) - ref)) < 1e-6


def test_build_background_only(cat_table):
    scene = SceneAnnotation("x", 10, 10, (), "hold", "cat")
    blob = build_s2s(scene, cat_table, 8)
    assert blob.shape == (8, 8, 3) and not blob.any()


def test_build_full_frame_cat(cat_table):
    scene = SceneAnnotation("x", 10, 6, (InstanceMask("cat", np.ones((6, 10), bool)),), "hold", "cat")
    blob = build_s2s(scene, cat_table, 16)
    assert np.all(blob == np.array([1, 0, 0], np.float32))


def test_build_unknown_label(cat_table):
    scene = SceneAnnotation("x", 2, 2, (InstanceMask("zebra", np.ones((2, 2), bool)),), "hold", "cat")
    with pytest.raises(UnknownLabelError):
        build_s2s(scene, cat_table, 2)


def test_same_class_instances_double():
    table = EmbeddingTable(2, {"cup": [1.0, 2.0]})
    m = np.ones((4, 4), bool)
    scene = SceneAnnotation("x", 4, 4, (InstanceMask("cup", m), InstanceMask("cup", m)), "hold", "cup")
    assert np.all(build_s2s(scene, table, 4) == np.float32([2.0, 4.0]))


@pytest.mark.parametrize("seed", range(10))
def test_build_matches_fused_oracle(seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng, dim=6)
    scene = random_scene(rng, table)
    out = int(rng.integers(5, 40))
    assert np.max(np.abs(build_s2s(scene, table, out) - fused_s2s_oracle(scene, table, out))) < 1e-6


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), out=st.integers(1, 24))
def test_linearity_and_support(seed, out):
    rng = np.random.default_rng(seed)
    table = random_table(rng, dim=4)
    scene = random_scene(rng, table, max_instances=5)
    k = int(rng.integers(0, len(scene.instances) + 1))
    part = lambda insts: SceneAnnotation("p", scene.width, scene.height, insts, "hold", "cup")
    whole = build_s2s(scene, table, out)
    pieces = aggregate_blobs([build_s2s(part(scene.instances[:k]), table, out),
                              build_s2s(part(scene.instances[k:]), table, out)])
    assert np.max(np.abs(whole - pieces)) < 1e-6
    covered = np.zeros((out, out), bool)
    for inst in scene.instances:
        covered |= fused_s2s_oracle(part((inst,)), EmbeddingTable(1, {l: [1.0] for l in table.labels}), out)[..., 0] > 0
    assert not whole[~covered].any()


def test_blob_dump_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    blob = rng.normal(size=(3, 4, 5)).astype(np.float32)
    write_blob(tmp_path / "b.s2sb", blob)
    raw = (tmp_path / "b.s2sb").read_bytes()
    assert raw[:4] == b"S2SB" and len(raw) == 20 + 4 * 60
    assert np.array_equal(read_blob(tmp_path / "b.s2sb"), blob)
    (tmp_path / "bad").write_bytes(b"S2SX" + raw[4:])
    with pytest.raises(FormatError):
        read_blob(tmp_path / "bad")
