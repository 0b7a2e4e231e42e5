"""Anisotropic affinity kernel over the pixels of a slice.

Pixels are numbered row-major, ``i = row * width + col``, and sit at spatial
coordinates ``(row, col)``.  Two neighbourhoods are used per pixel:

* the propagation disc ``N_r(i)``, every pixel strictly closer than ``r``;
  it fixes the sparsity of the kernel;
* the calibration lattice ``C_R(i)``, pixels strictly closer than ``R`` whose
  offsets are multiples of ``stride`` on both axes; it fixes the local
  feature scale ``M(i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class NeighborhoodSpec:
    r: float = 2.0
    R: float = 5.0
    delta_floor: float = 1e-7
    stride: int = 3

    def __post_init__(self):
        if not 0 < self.r < self.R:
            raise ValueError(f"need 0 < r < R, got r={self.r}, R={self.R}")
        if not 0 < self.delta_floor < 1:
            raise ValueError(f"delta_floor must lie in (0, 1), got {self.delta_floor}")
        if self.stride < 1:
            raise ValueError("stride must be positive")

    @property
    def bandwidth(self):
        """Kernel bandwidth ``-1 / ln(delta_floor)``."""
        return -1.0 / math.log(self.delta_floor)


def disc_offsets(radius, stride=1):
    """Integer offsets ``(a, b)``, multiples of ``stride``, with ``a^2 + b^2 < radius^2``."""
    reach = int(math.ceil(radius / stride)) * stride
    steps = np.arange(-reach, reach + 1, stride)
    a, b = np.meshgrid(steps, steps, indexing="ij")
    keep = a**2 + b**2 < radius**2
    return np.stack([a[keep], b[keep]], axis=1)


def _clip(pixel, offsets, shape):
    rows = pixel[0] + offsets[:, 0]
    cols = pixel[1] + offsets[:, 1]
    ok = (rows >= 0) & (rows < shape[0]) & (cols >= 0) & (cols < shape[1])
    return sorted(zip(rows[ok].tolist(), cols[ok].tolist()))


def propagation_neighborhood(pixel, spec, shape):
    """Pixels of the slice strictly within distance ``spec.r`` of ``pixel``."""
    return _clip(pixel, disc_offsets(spec.r), shape)


def calibration_neighborhood(pixel, spec, shape):
    """Coarse lattice of pixels strictly within ``spec.R`` of ``pixel``."""
    return _clip(pixel, disc_offsets(spec.R, spec.stride), shape)


def _shifted_sqdist(features, offset):
    """``||f(i) - f(i + offset)||^2`` on the pixels where ``i + offset`` is inside.

    Returns ``(valid, d2)`` with ``valid`` a boolean (H, W) mask and ``d2`` an
    (H, W) array that is meaningful where ``valid`` holds.
    """
    H, W = features.shape[:2]
    a, b = int(offset[0]), int(offset[1])
    valid = np.zeros((H, W), dtype=bool)
    d2 = np.zeros((H, W))
    rs = slice(max(0, -a), min(H, H - a))
    cs = slice(max(0, -b), min(W, W - b))
    rt = slice(rs.start + a, rs.stop + a)
    ct = slice(cs.start + b, cs.stop + b)
    if rs.start >= rs.stop or cs.start >= cs.stop:
        return valid, d2
    diff = features[rs, cs] - features[rt, ct]
    d2[rs, cs] = np.einsum("...k,...k->...", diff, diff)
    valid[rs, cs] = True
    return valid, d2


def local_scale(features, spec, pixel=None):
    """Local feature scale ``M(i) = max_{j in C_R(i)} ||f(i) - f(j)||^2``.

    Returns the (H, W) field, or the value at ``pixel`` when one is given.
    """
    features = np.asarray(features, dtype=np.float64)
    M = np.zeros(features.shape[:2])
    for off in disc_offsets(spec.R, spec.stride):
        valid, d2 = _shifted_sqdist(features, off)
        np.maximum(M, np.where(valid, d2, 0.0), out=M)
    if pixel is not None:
        return float(M[pixel])
    return M


def kernel_value(d2, M, delta_floor):
    """Affinity for squared feature distance ``d2`` at local scale ``M``.

    ``exp(-d2 / (beta M))`` with ``beta = -1/ln(delta_floor)``, i.e.
    ``delta_floor ** (d2 / M)``; clamped to ``delta_floor`` wherever
    ``d2 <= M`` so the calibrated floor holds bit-exactly.  ``M == 0`` rows
    use the limit: 1 for identical features, 0 otherwise.
    """
    d2 = np.asarray(d2, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    pos = M > 0
    ratio = np.divide(d2, M, out=np.zeros(np.broadcast(d2, M).shape), where=pos)
    w = np.exp(math.log(delta_floor) * ratio)
    w = np.where(ratio <= 1.0, np.maximum(w, delta_floor), w)
    return np.where(pos, w, np.where(d2 == 0, 1.0, 0.0))


def affinity_weights(features, spec, scale=None):
    """Asymmetric sparse kernel ``W`` (CSR) supported on the propagation discs."""
    features = np.asarray(features, dtype=np.float64)
    H, W = features.shape[:2]
    M = local_scale(features, spec) if scale is None else scale
    index = np.arange(H * W).reshape(H, W)
    rows, cols, vals = [], [], []
    for off in disc_offsets(spec.r):
        valid, d2 = _shifted_sqdist(features, off)
        w = kernel_value(d2, M, spec.delta_floor)
        keep = valid & (w > 0)
        src = index[keep]
        rows.append(src)
        cols.append(src + int(off[0]) * W + int(off[1]))
        vals.append(w[keep])
    Wmat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(H * W, H * W)
    ).tocsr()
    Wmat.sort_indices()
    return Wmat


def symmetrize(W):
    """``K = (W + W^T) / 2`` as CSR with sorted indices; exactly symmetric."""
    W = sp.csr_matrix(W)
    K = ((W + W.T) * 0.5).tocsr()
    K.sort_indices()
    return K


def build_kernel(features, spec):
    """Symmetric affinity ``K`` for a feature field of shape (H, W, d)."""
    return symmetrize(affinity_weights(features, spec))


def write_triplets(K, path):
    """Text dump of the nonzeros of ``K`` as ``i j value`` lines."""
    K = sp.coo_matrix(K)
    order = np.lexsort((K.col, K.row))
    with open(path, "w") as fh:
        for i, j, v in zip(K.row[order], K.col[order], K.data[order]):
            fh.write(f"{i} {j} {v:.17g}\n")
