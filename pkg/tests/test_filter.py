import itertools

import numpy as np
import pytest

from diffflat.filter import (
    CUBE_OFFSETS,
    PatchMatrix,
    adaptive_filter,
    extract_patches,
    feature_covariance,
    filtered_features,
    filtered_values,
    principal_component,
    write_filtered_csv,
)
from diffflat.volume import SeismicVolume, SliceRef, SynthSpec, synthesize_volume

SPEC = SynthSpec(dims=(9, 7, 6), layer_frequencies=[(0.12, 1.0)], warp_amplitude=1.0,
                 noise_sigma=0.2, seed=3)


def _volume():
    return synthesize_volume(SPEC)


def _oracle_cube(values, i1, i2, i3):
    m, n, l = values.shape
    out = []
    for d1, d2, d3 in itertools.product((-1, 0, 1), repeat=3):
        j1 = min(max(i1 + d1, 0), m - 1)
        j2 = min(max(i2 + d2, 0), n - 1)
        j3 = min(max(i3 + d3, 0), l - 1)
        out.append(float(values[j1, j2, j3]))
    return np.array(out)


def test_offsets_depth_slowest():
    assert CUBE_OFFSETS.shape == (27, 3)
    assert tuple(CUBE_OFFSETS[0]) == (-1, -1, -1)
    assert tuple(CUBE_OFFSETS[1]) == (-1, -1, 0)
    assert tuple(CUBE_OFFSETS[13]) == (0, 0, 0)


def test_constant_volume_patches():
    p = extract_patches(SeismicVolume(np.full((3, 4, 5), 1.5, np.float32)))
    assert p.columns.shape == (27, 60)
    assert np.all(p.columns == 1.5)


@pytest.mark.parametrize("voxel", [(4, 3, 2), (0, 0, 0), (8, 6, 5), (0, 6, 3)])
def test_patch_matches_gather_oracle(voxel):
    v = _volume()
    p = extract_patches(v)
    col = np.ravel_multi_index(voxel, v.shape)
    assert p.pixel_of(col) == voxel
    np.testing.assert_array_equal(p.columns[:, col], _oracle_cube(v.values, *voxel))


def test_undersized_volume_rejected():
    with pytest.raises(ValueError):
        extract_patches(SeismicVolume(np.zeros((2, 4, 4), np.float32)))


def test_covariance_examples():
    same = np.tile(np.arange(27.0)[:, None], (1, 5))
    assert not np.any(feature_covariance(same))
    e1 = np.zeros((27, 2))
    e1[0, 0], e1[0, 1] = 1.0, -1.0
    C = feature_covariance(e1)
    expected = np.zeros((27, 27))
    expected[0, 0] = 2.0
    np.testing.assert_array_equal(C, expected)
    with pytest.raises(ValueError):
        feature_covariance(np.ones((27, 1)))


def test_covariance_two_pass_oracle():
    A = np.random.default_rng(5).normal(size=(27, 10))
    mean = [sum(A[k]) / 10 for k in range(27)]
    oracle = np.empty((27, 27))
    for a in range(27):
        for b in range(27):
            oracle[a, b] = sum((A[a, t] - mean[a]) * (A[b, t] - mean[b]) for t in range(10)) / 9
    np.testing.assert_allclose(feature_covariance(A), oracle, atol=1e-12, rtol=0)
    C = feature_covariance(A)
    assert np.array_equal(C, C.T)


def test_principal_component_conventions():
    e1 = np.zeros(27)
    e1[0] = 1.0
    C = 2.0 * np.outer(e1, e1)
    np.testing.assert_allclose(principal_component(C), e1, atol=1e-12)
    np.testing.assert_array_equal(principal_component(np.zeros((27, 27))), e1)


@pytest.mark.parametrize("seed", range(5))
def test_principal_component_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(27, 40))
    C = B @ B.T / 39
    u = principal_component(C, seed=seed)
    evals, evecs = np.linalg.eigh(C)
    assert abs(np.linalg.norm(u) - 1.0) < 1e-12
    assert abs(np.dot(u, evecs[:, -1])) >= 1 - 1e-10
    assert abs(u @ C @ u - evals[-1]) <= 1e-10 * max(1.0, evals[-1])
    first = np.flatnonzero(np.abs(u) > 1e-8)[0]
    assert u[first] > 0
    # Rayleigh maximality against random directions
    r = rng.normal(size=(100, 27))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    assert np.all(u @ C @ u >= np.einsum("ij,jk,ik->i", r, C, r) - 1e-9)


def test_filtered_values_examples():
    p = extract_patches(SeismicVolume(np.full((3, 3, 3), 4.0, np.float32)))
    e1 = np.eye(27)[0]
    assert np.all(filtered_values(p, e1) == 4.0)

    v = _volume()
    p = extract_patches(v)
    u = principal_component(feature_covariance(p))
    w = filtered_values(p, u)
    for voxel in [(0, 0, 0), (3, 2, 1), (8, 6, 5)]:
        oracle = sum(u[k] * c for k, c in enumerate(_oracle_cube(v.values, *voxel)))
        assert abs(w[voxel] - oracle) <= 1e-12


def test_filtered_values_first_entry_picks_depth():
    # g(i) = x1(i) e1 with u1 = e1 gives w = x1
    shape = (4, 3, 3)
    x1 = np.indices(shape)[0].ravel().astype(float)
    cols = np.zeros((27, x1.size))
    cols[0] = x1
    w = filtered_values(PatchMatrix(cols, shape), np.eye(27)[0])
    np.testing.assert_array_equal(w, np.indices(shape)[0])


def test_linearity_and_shift_covariance():
    v = _volume()
    p = extract_patches(v)
    u = principal_component(feature_covariance(p))
    rng = np.random.default_rng(1)
    other = extract_patches(SeismicVolume(rng.normal(size=v.shape).astype(np.float32)))
    combo = PatchMatrix(2.0 * p.columns - 0.5 * other.columns, v.shape)
    np.testing.assert_allclose(
        filtered_values(combo, u),
        2.0 * filtered_values(p, u) - 0.5 * filtered_values(other, u),
        atol=1e-12,
    )

    c = 3.0
    # shift in float64; a float32 volume shift would also round the samples
    shifted = PatchMatrix(p.columns + c, v.shape)
    np.testing.assert_allclose(feature_covariance(shifted), feature_covariance(p), atol=1e-12)
    np.testing.assert_allclose(
        filtered_values(shifted, u), filtered_values(p, u) + c * u.sum(), atol=1e-12
    )


def test_filtered_features_constant_w():
    f = filtered_features(np.full((4, 5, 6), 2.0), SliceRef(1, 2))
    assert f.shape == (4, 6, 27)
    assert np.all(f == 2.0)


@pytest.mark.parametrize("ref", [SliceRef(1, 0), SliceRef(2, 3), SliceRef(2, 5)])
def test_filtered_features_gather_oracle(ref):
    w = np.random.default_rng(2).normal(size=(9, 7, 6))
    f = filtered_features(w, ref)
    for r, c in [(0, 0), (4, 2), (8, f.shape[1] - 1)]:
        voxel = (r, ref.index, c) if ref.axis == 1 else (r, c, ref.index)
        np.testing.assert_array_equal(f[r, c], _oracle_cube(w, *voxel))


def test_filtered_features_invalid_slice():
    with pytest.raises(IndexError):
        filtered_features(np.zeros((4, 4, 4)), SliceRef(2, 4))


def test_warp_free_features_share_rows():
    v = synthesize_volume(SynthSpec(dims=(10, 8, 6), layer_frequencies=[(0.1, 1.0), (0.23, 0.5)]))
    ff = adaptive_filter(v, SliceRef(2, 3))
    f = ff.features
    for row in range(f.shape[0]):
        assert np.allclose(f[row, 1:-1], f[row, 1], atol=1e-12)


def test_adaptive_filter_deterministic(tmp_path):
    v = _volume()
    a = adaptive_filter(v, SliceRef(2, 1), seed=4)
    b = adaptive_filter(v, SliceRef(2, 1), seed=4)
    assert np.array_equal(a.features, b.features)
    write_filtered_csv(a.w, SliceRef(2, 1), tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "row,col,value"
    assert len(lines) == 1 + 9 * 7
