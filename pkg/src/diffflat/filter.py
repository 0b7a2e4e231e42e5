"""Adaptive PCA filtering of 3x3x3 neighbourhoods.

Every voxel gets the 27 values of the cube around it (edge-replicated at the
volume boundary), flattened with depth slowest and the last axis fastest.
The leading principal direction of those patches gives one filtered scalar
per voxel, and the cube of filtered scalars around a slice pixel is that
pixel's feature vector.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .volume import SliceRef, gaussian_noise

CUBE_OFFSETS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.intp)
"""The 27 ``(d1, d2, d3)`` offsets in patch-vector order."""

POWER_TOL = 1e-12
POWER_MAXITER = 10_000


@dataclass(frozen=True, eq=False)
class PatchMatrix:
    """27 x N matrix of raw patches, one column per voxel in C (raster) order."""

    columns: np.ndarray
    volume_shape: tuple

    @property
    def n_pixels(self):
        return self.columns.shape[1]

    def pixel_of(self, column):
        """Voxel coordinates ``(i1, i2, i3)`` of a column index."""
        return tuple(int(c) for c in np.unravel_index(column, self.volume_shape))


@dataclass(frozen=True, eq=False)
class FeatureField:
    """Filtered features on one slice plus the filtered scalar on the full volume."""

    features: np.ndarray  # (depth, width, 27)
    w: np.ndarray  # (m, n, l)
    ref: SliceRef
    u1: np.ndarray

    @property
    def slice_shape(self):
        return self.features.shape[:2]


def _gather_cubes(padded, centers):
    """Rows of 27 cube values from ``padded`` around ``centers`` (unpadded coords)."""
    idx = centers[:, None, :] + 1 + CUBE_OFFSETS[None, :, :]
    return padded[idx[..., 0], idx[..., 1], idx[..., 2]]


def extract_patches(volume):
    """Raw 3x3x3 patch of every voxel, edge-replicated at the boundary."""
    values = volume.values if hasattr(volume, "values") else np.asarray(volume)
    if values.ndim != 3 or min(values.shape) < 3:
        raise ValueError(f"patch extraction needs every extent >= 3, got {values.shape}")
    padded = np.pad(values.astype(np.float64), 1, mode="edge")
    m, n, l = values.shape
    cols = np.empty((27, m * n * l))
    for k, (d1, d2, d3) in enumerate(CUBE_OFFSETS):
        cols[k] = padded[1 + d1 : 1 + d1 + m, 1 + d2 : 1 + d2 + n, 1 + d3 : 1 + d3 + l].ravel()
    return PatchMatrix(cols, values.shape)


def feature_covariance(patches):
    """Unbiased 27 x 27 covariance of the patch columns."""
    A = patches.columns if isinstance(patches, PatchMatrix) else np.asarray(patches, dtype=np.float64)
    N = A.shape[1]
    if N < 2:
        raise ValueError(f"covariance needs at least two patches, got {N}")
    centered = A - A.mean(axis=1, keepdims=True)
    C = centered @ centered.T / (N - 1)
    return 0.5 * (C + C.T)


def _fix_sign(v):
    """Flip ``v`` so its first non-negligible entry is positive."""
    scale = np.abs(v).max()
    if scale == 0:
        return v
    nz = np.flatnonzero(np.abs(v) > 1e-8 * scale)
    return -v if v[nz[0]] < 0 else v


def principal_component(C, seed=0, tol=POWER_TOL, maxiter=POWER_MAXITER):
    """Unit eigenvector of the largest eigenvalue of a PSD matrix, by power iteration.

    Iterates until successive (sign-aligned) iterates differ by less than
    ``tol``.  A zero matrix returns ``e1``.
    """
    C = np.asarray(C, dtype=np.float64)
    dim = C.shape[0]
    e1 = np.zeros(dim)
    e1[0] = 1.0
    if not np.any(C):
        return e1

    x = gaussian_noise(seed, dim)
    x /= np.linalg.norm(x)
    for attempt in range(4):
        y = C @ x
        if np.linalg.norm(y) > 0:
            break
        # start vector in the null space; re-seed
        x = gaussian_noise(seed + attempt + 1, dim)
        x /= np.linalg.norm(x)
    for _ in range(maxiter):
        y = C @ x
        y /= np.linalg.norm(y)
        if np.dot(y, x) < 0:
            y = -y
        if np.linalg.norm(y - x) < tol:
            x = y
            break
        x = y
    return _fix_sign(x)


def filtered_values(patches, u1):
    """Filtered scalar ``w = u1 . g`` for every voxel, shaped like the volume."""
    u1 = np.asarray(u1, dtype=np.float64)
    return (u1 @ patches.columns).reshape(patches.volume_shape)


def slice_coordinates(shape, ref):
    """Volume coordinates of every slice pixel, in row-major slice order."""
    m = shape[0]
    width = shape[2] if ref.axis == 1 else shape[1]
    if not 0 <= ref.index < shape[ref.axis]:
        raise IndexError(f"slice index {ref.index} out of range for axis {ref.axis}")
    i1, t = np.meshgrid(np.arange(m), np.arange(width), indexing="ij")
    fixed = np.full(i1.shape, ref.index)
    if ref.axis == 1:
        coords = np.stack([i1, fixed, t], axis=-1)
    else:
        coords = np.stack([i1, t, fixed], axis=-1)
    return coords.reshape(-1, 3)


def filtered_features(w, ref):
    """Cube of filtered values around each pixel of slice ``ref``: shape (depth, width, 27)."""
    w = np.asarray(w, dtype=np.float64)
    coords = slice_coordinates(w.shape, ref)
    feats = _gather_cubes(np.pad(w, 1, mode="edge"), coords)
    width = w.shape[2] if ref.axis == 1 else w.shape[1]
    return feats.reshape(w.shape[0], width, 27)


def adaptive_filter(volume, ref, seed=0):
    """Run the whole filtering stage for one slice of ``volume``."""
    patches = extract_patches(volume)
    u1 = principal_component(feature_covariance(patches), seed=seed)
    w = filtered_values(patches, u1)
    return FeatureField(filtered_features(w, ref), w, ref, u1)


def write_filtered_csv(w, ref, path):
    """Dump the filtered scalar over one slice as ``row,col,value`` lines."""
    w = np.asarray(w)
    img = w[:, ref.index, :] if ref.axis == 1 else w[:, :, ref.index]
    with open(path, "w") as fh:
        fh.write("row,col,value\n")
        for (r, c), val in np.ndenumerate(img):
            fh.write(f"{r},{c},{val:.9g}\n")
