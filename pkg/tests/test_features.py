"""Tests for the binary descriptor format, patch ids, and PCA."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchsieve.errors import (
    DuplicateIdError,
    InputFormatError,
    MagicMismatchError,
    NumericalError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from patchsieve.features import (
    Descriptor,
    DescriptorKind,
    descriptor_matrix,
    deserialize_features,
    load_pca_model,
    make_patch_id,
    parse_patch_id,
    pca_fit,
    pca_transform,
    read_features,
    reconstruction,
    save_pca_model,
    serialize_features,
    write_features,
)


def make_descriptors(ids, matrix, kind=DescriptorKind.pca_reduced):
    return [Descriptor(pid, kind, row) for pid, row in zip(ids, matrix)]


def pack_reference_bytes(kind_code, ids, matrix):
    """Hand-packed wire format, independent of the library serializer."""
    out = struct.pack("<4sIIQI", b"PSEL", 1, kind_code, len(ids), matrix.shape[1])
    for pid in ids:
        raw = pid.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
    out += matrix.astype("<f4").tobytes(order="C")
    return out


# --- wire format -----------------------------------------------------------


def test_serialize_matches_hand_packed_bytes():
    ids = ["s1_x0_y0", "s1_x1_y0"]
    matrix = np.array([[1.5, -2.0, 0.25], [0.0, 3.5, -1.0]], dtype=np.float32)
    got = serialize_features(make_descriptors(ids, matrix))
    assert got == pack_reference_bytes(DescriptorKind.pca_reduced.code, ids, matrix)


def test_deserialize_hand_packed_bytes():
    ids = ["a_x0_y0", "b_x3_y-2", "étale_x1_y1"]
    matrix = np.array([[0.5, 2.0], [1.0, -1.0], [3.25, 0.125]], dtype=np.float32)
    data = pack_reference_bytes(DescriptorKind.deep4096.code, ids, matrix)
    descriptors, consumed = deserialize_features(data)
    assert consumed == len(data)
    assert [d.patch_id for d in descriptors] == ids
    assert all(d.kind is DescriptorKind.deep4096 for d in descriptors)
    assert np.array_equal(descriptor_matrix(descriptors), matrix.astype(np.float64))


id_text = st.text(
    st.characters(codec="utf-8", exclude_characters="\x00"), min_size=1, max_size=12
)


@given(
    st.integers(1, 6),
    st.integers(1, 5),
    st.data(),
)
@settings(max_examples=40)
def test_roundtrip_preserves_everything(count, dim, data):
    ids = data.draw(
        st.lists(id_text, min_size=count, max_size=count, unique=True)
    )
    values = data.draw(
        st.lists(
            st.lists(
                st.floats(allow_nan=False, allow_infinity=False, width=32),
                min_size=dim, max_size=dim,
            ),
            min_size=count, max_size=count,
        )
    )
    matrix = np.array(values, dtype=np.float32)
    descriptors = make_descriptors(ids, matrix)
    back, consumed = deserialize_features(serialize_features(descriptors))
    assert consumed == len(serialize_features(descriptors))
    assert [d.patch_id for d in back] == ids
    assert np.array_equal(
        np.stack([d.values for d in back]), matrix
    )


def test_file_roundtrip(tmp_path):
    ids = ["s_x0_y0", "s_x1_y0"]
    matrix = np.array([[1.0] * 36, [2.0] * 36], dtype=np.float32)
    path = tmp_path / "f.psel"
    write_features(make_descriptors(ids, matrix, DescriptorKind.lbp36), path)
    back = read_features(path)
    assert [d.patch_id for d in back] == ids
    assert back[0].kind is DescriptorKind.lbp36
    assert np.array_equal(np.stack([d.values for d in back]), matrix)


def test_every_truncation_boundary_raises(tmp_path):
    ids = ["aa_x0_y0", "bb_x1_y2"]
    matrix = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    data = serialize_features(make_descriptors(ids, matrix))
    for cut in range(len(data)):
        with pytest.raises(TruncatedPayloadError):
            deserialize_features(data[:cut])
    path = tmp_path / "t.psel"
    path.write_bytes(data + b"x")
    with pytest.raises(TruncatedPayloadError):
        read_features(path)


def test_magic_mismatch():
    data = serialize_features(
        make_descriptors(["a"], np.array([[1.0]], dtype=np.float32))
    )
    with pytest.raises(MagicMismatchError):
        deserialize_features(b"XSEL" + data[4:])


def test_version_mismatch():
    data = serialize_features(
        make_descriptors(["a"], np.array([[1.0]], dtype=np.float32))
    )
    bad = data[:4] + struct.pack("<I", 2) + data[8:]
    with pytest.raises(VersionMismatchError):
        deserialize_features(bad)


def test_unknown_kind_code():
    matrix = np.array([[1.0]], dtype=np.float32)
    data = pack_reference_bytes(99, ["a"], matrix)
    with pytest.raises(VersionMismatchError):
        deserialize_features(data)


def test_duplicate_ids_in_file():
    matrix = np.array([[1.0], [2.0]], dtype=np.float32)
    data = pack_reference_bytes(3, ["same", "same"], matrix)
    with pytest.raises(DuplicateIdError):
        deserialize_features(data)


def test_serializer_refuses_bad_input():
    with pytest.raises(ValueError):
        serialize_features([])
    a = Descriptor("a", DescriptorKind.pca_reduced, np.array([1.0]))
    b_dup = Descriptor("a", DescriptorKind.pca_reduced, np.array([2.0]))
    with pytest.raises(DuplicateIdError):
        serialize_features([a, b_dup])
    b_kind = Descriptor("b", DescriptorKind.deep4096, np.array([2.0]))
    with pytest.raises(ValueError):
        serialize_features([a, b_kind])
    b_dim = Descriptor("b", DescriptorKind.pca_reduced, np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        serialize_features([a, b_dim])


def test_format_errors_share_input_format_exit_code():
    for exc in (MagicMismatchError, VersionMismatchError,
                TruncatedPayloadError, DuplicateIdError):
        assert issubclass(exc, InputFormatError)
        assert exc("x").exit_code == 2


def test_descriptor_validation():
    with pytest.raises(ValueError):
        Descriptor("a", DescriptorKind.pca_reduced, np.array([[1.0]]))
    with pytest.raises(ValueError):
        Descriptor("a", DescriptorKind.pca_reduced, np.array([np.nan]))
    with pytest.raises(ValueError):
        Descriptor("a", DescriptorKind.lbp36, np.zeros(35))


# --- patch ids ---------------------------------------------------------------


@given(
    st.text(st.characters(codec="utf-8", exclude_characters="\x00"),
            min_size=1, max_size=10),
    st.integers(-50, 50),
    st.integers(-50, 50),
)
def test_patch_id_roundtrip(scan, gx, gy):
    assert parse_patch_id(make_patch_id(scan, gx, gy)) == (scan, gx, gy)


def test_patch_id_with_id_shaped_scan_name():
    # greedy scan match keeps the trailing coordinates as coordinates
    assert parse_patch_id("a_x1_y2_x3_y4") == ("a_x1_y2", 3, 4)


def test_patch_id_fallback():
    assert parse_patch_id("no-coords-here") == ("no-coords-here", 0, 0)


# --- PCA ---------------------------------------------------------------------


def svd_oracle(X):
    """Centered SVD variances and components, as an independent reference."""
    Xc = X - X.mean(axis=0)
    u, s, vt = np.linalg.svd(Xc, full_matrices=False)
    return (s * s) / (X.shape[0] - 1), vt


def test_pca_matches_svd_oracle_covariance_route():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 50))
    model = pca_fit(X, 1.0)
    var_oracle, vt = svd_oracle(X)
    k = model.k
    assert np.allclose(model.explained_variance, var_oracle[:k], rtol=1e-9, atol=1e-12)
    for i in range(k):
        dot = abs(float(np.dot(model.components[i], vt[i])))
        assert dot == pytest.approx(1.0, abs=1e-8)


def test_pca_matches_svd_oracle_gram_route():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 60))  # n < d forces the Gram path
    model = pca_fit(X, 1.0)
    var_oracle, vt = svd_oracle(X)
    assert model.k == 29  # rank n - 1
    assert np.allclose(
        model.explained_variance, var_oracle[: model.k], rtol=1e-8, atol=1e-10
    )
    for i in range(model.k):
        dot = abs(float(np.dot(model.components[i], vt[i])))
        assert dot == pytest.approx(1.0, abs=1e-6)


def test_pca_retained_variance_and_reconstruction():
    rng = np.random.default_rng(7)
    for trial in range(5):
        X = rng.normal(size=(200, 50))
        model = pca_fit(X, 0.95)
        assert model.explained_variance.sum() >= 0.95 * model.total_variance
        # smallest such prefix: dropping the last component dips below target
        shorter = model.explained_variance[:-1].sum()
        assert shorter < 0.95 * model.total_variance + 1e-9 * model.total_variance

        full = pca_fit(X, 1.0)
        back = reconstruction(full, pca_transform(full, X))
        assert np.max(np.abs(back - X)) <= 1e-6


def test_pca_line_gives_one_component():
    rng = np.random.default_rng(3)
    direction = rng.normal(size=8)
    direction /= np.linalg.norm(direction)
    t = rng.normal(size=(40, 1))
    X = t * direction + 5.0
    model = pca_fit(X, 0.95)
    assert model.k == 1
    assert abs(float(np.dot(model.components[0], direction))) == pytest.approx(
        1.0, abs=1e-9
    )


def test_pca_tiny_fraction_keeps_one_component():
    rng = np.random.default_rng(4)
    model = pca_fit(rng.normal(size=(50, 10)), 0.01)
    assert model.k == 1


def test_pca_full_fraction_keeps_full_rank():
    rng = np.random.default_rng(5)
    model = pca_fit(rng.normal(size=(20, 6)), 1.0)
    assert model.k == 6
    model = pca_fit(rng.normal(size=(5, 10)), 1.0)
    assert model.k == 4


def test_pca_components_orthonormal_and_sorted():
    rng = np.random.default_rng(6)
    model = pca_fit(rng.normal(size=(80, 12)), 1.0)
    gram = model.components @ model.components.T
    assert np.allclose(gram, np.eye(model.k), atol=1e-8)
    ev = model.explained_variance
    assert np.all(ev[:-1] >= ev[1:] - 1e-12)
    assert np.all(ev >= 0.0)


def test_pca_sign_convention():
    rng = np.random.default_rng(8)
    model = pca_fit(rng.normal(size=(60, 9)), 1.0)
    for row in model.components:
        assert row[int(np.argmax(np.abs(row)))] > 0


def test_pca_transform_centers_data():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(100, 7)) + 3.0
    model = pca_fit(X, 1.0)
    assert np.allclose(pca_transform(model, model.mean), 0.0, atol=1e-9)
    projected = pca_transform(model, X)
    assert projected.shape == (100, model.k)
    assert np.allclose(projected.mean(axis=0), 0.0, atol=1e-9)
    # per-component variance equals the eigenvalue
    assert np.allclose(
        projected.var(axis=0, ddof=1), model.explained_variance, rtol=1e-9
    )


def test_pca_deterministic():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(50, 8))
    a = pca_fit(X, 0.9)
    b = pca_fit(X, 0.9)
    assert np.array_equal(a.components, b.components)
    assert np.array_equal(a.explained_variance, b.explained_variance)


def test_pca_model_json_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    model = pca_fit(rng.normal(size=(40, 6)), 0.9)
    path = tmp_path / "pca.json"
    save_pca_model(model, path)
    back = load_pca_model(path)
    assert np.array_equal(back.mean, model.mean)
    assert np.array_equal(back.components, model.components)
    assert np.array_equal(back.explained_variance, model.explained_variance)
    assert back.total_variance == model.total_variance
    assert back.retained_fraction == model.retained_fraction


def test_pca_model_load_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "nope"}))
    with pytest.raises(MagicMismatchError):
        load_pca_model(bad)
    bad.write_text(json.dumps({"format": "psel-pca", "version": 9}))
    with pytest.raises(VersionMismatchError):
        load_pca_model(bad)


def test_pca_errors():
    with pytest.raises(NumericalError):
        pca_fit(np.ones((10, 4)), 0.95)  # zero variance
    with pytest.raises(NumericalError):
        pca_fit(np.array([[1.0, np.inf], [2.0, 3.0]]), 0.95)
    with pytest.raises(ValueError):
        pca_fit(np.zeros((1, 4)), 0.95)
    with pytest.raises(ValueError):
        pca_fit(np.zeros((10, 4)), 0.0)
    rng = np.random.default_rng(12)
    model = pca_fit(rng.normal(size=(20, 5)), 1.0)
    with pytest.raises(ValueError):
        pca_transform(model, np.zeros((3, 4)))
    with pytest.raises(ValueError):
        reconstruction(model, np.zeros((3, model.k + 1)))
