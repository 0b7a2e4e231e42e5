"""Layer organisation: the first nontrivial diffusion eigenvector becomes depth.

If that eigenvector looks like ``cos(pi y)`` on a tall strip, then after an
affine map onto ``[-1, 1]`` its arccosine is ``pi y``, i.e. a height
coordinate in which each layer sits at constant depth.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .filter import adaptive_filter
from .kernel import NeighborhoodSpec, build_kernel
from .spectral import DEFAULT_TOL, diffusion_spectrum, write_eigen_csv
from .volume import extract_slice, to_gray, write_pgm


class DegenerateSpectrumError(ValueError):
    """The first nontrivial eigenvector carries no depth information."""


@dataclass(frozen=True, eq=False)
class FlattenedCloud:
    """One ``(x, h, value)`` record per slice pixel, in row-major order."""

    x: np.ndarray
    h: np.ndarray
    value: np.ndarray
    depth: int

    def __len__(self):
        return self.x.size


def _is_constant(psi1):
    psi1 = np.asarray(psi1, dtype=np.float64)
    spread = psi1.max() - psi1.min()
    return not spread > 1e-12 * max(np.abs(psi1).max(), np.finfo(float).tiny)


def check_layering(features):
    """Refuse slices whose features never vary: there are no layers to organise."""
    if np.ptp(features) == 0:
        raise DegenerateSpectrumError(
            "filtered features are identical over the slice; no layer structure to recover"
        )


def orient_first_eigenvector(psi1, shape):
    """Return ``psi1`` or ``-psi1`` so it is larger at the top than at the bottom.

    Compares the mean over the top quarter of depth rows with the mean over
    the bottom quarter.
    """
    psi1 = np.asarray(psi1, dtype=np.float64)
    if _is_constant(psi1):
        raise DegenerateSpectrumError("first eigenvector is constant; cannot orient depth")
    img = psi1.reshape(shape)
    q = max(1, shape[0] // 4)
    if img[:q].mean() >= img[-q:].mean():
        return psi1.copy()
    return -psi1


def depth_from_eigenvector(psi1):
    """Height ``h = arccos(2 (psi1 - min) / (max - min) - 1)`` in ``[0, pi]``."""
    psi1 = np.asarray(psi1, dtype=np.float64)
    lo, hi = psi1.min(), psi1.max()
    if not hi > lo:
        raise DegenerateSpectrumError("eigenvector has max == min")
    t = 2.0 * (psi1 - lo) / (hi - lo) - 1.0
    return np.arccos(np.clip(t, -1.0, 1.0))


def reparameterize(image, h):
    """Pair every pixel's column and value with its recovered height."""
    image = np.asarray(image)
    depth, width = image.shape
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.size != image.size:
        raise ValueError(f"height map has {h.size} entries for {image.size} pixels")
    x = np.tile(np.arange(width), depth)
    return FlattenedCloud(x, h, image.ravel().astype(np.float64), depth)


def cloud_image(cloud):
    """Bin the cloud onto a (depth x width) grid by nearest height; empty bins are NaN."""
    width = int(cloud.x.max()) + 1
    rows = np.rint(cloud.h / np.pi * (cloud.depth - 1)).astype(int)
    total = np.zeros((cloud.depth, width))
    count = np.zeros((cloud.depth, width))
    np.add.at(total, (rows, cloud.x), cloud.value)
    np.add.at(count, (rows, cloud.x), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / count, np.nan)


def export(cloud, path, format="csv"):
    if format == "csv":
        with open(path, "w") as fh:
            fh.write("x,h,value\n")
            for x, h, v in zip(cloud.x, cloud.h, cloud.value):
                fh.write(f"{x},{h:.9g},{v:.9g}\n")
    elif format == "pgm":
        write_pgm(to_gray(cloud_image(cloud)), path)
    else:
        raise ValueError(f"unknown export format {format!r}")


@dataclass
class FlattenResult:
    image: np.ndarray
    psi1: np.ndarray
    h: np.ndarray
    cloud: FlattenedCloud
    eigenvalues: np.ndarray
    psi: np.ndarray
    timings: dict = field(default_factory=dict)

    @property
    def depth_map(self):
        return self.h.reshape(self.image.shape)


def flatten_slice(volume, ref, spec=None, n_eigs=4, tol=DEFAULT_TOL, seed=0):
    """Filter, build the kernel, diffuse and reparameterise one slice of ``volume``."""
    spec = spec or NeighborhoodSpec()
    timings = {}
    t0 = time.perf_counter()
    feats = adaptive_filter(volume, ref, seed=seed)
    timings["filter"] = time.perf_counter() - t0
    check_layering(feats.features)

    t0 = time.perf_counter()
    K = build_kernel(feats.features, spec)
    timings["kernel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _, spectrum = diffusion_spectrum(K, n_eigs, tol=tol, seed=seed)
    timings["spectral"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    image = extract_slice(volume, ref)
    psi1 = orient_first_eigenvector(spectrum.psi[:, 1], image.shape)
    h = depth_from_eigenvector(psi1)
    cloud = reparameterize(image, h)
    timings["flatten"] = time.perf_counter() - t0
    return FlattenResult(image, psi1, h, cloud, spectrum.eigenvalues, spectrum.psi, timings)


def write_outputs(result, prefix, formats=("csv", "pgm")):
    """Eigenvector, depth and cloud CSVs, plus PGM renders when ``"pgm"`` is requested."""
    shape = result.image.shape
    paths = {
        "eigen_csv": f"{prefix}_eigen.csv",
        "depth_csv": f"{prefix}_depth.csv",
        "flat_csv": f"{prefix}_flat.csv",
    }
    write_eigen_csv(result.psi, shape, paths["eigen_csv"])
    with open(paths["depth_csv"], "w") as fh:
        fh.write("row,col,h\n")
        for (r, c), h in np.ndenumerate(result.depth_map):
            fh.write(f"{r},{c},{h:.9g}\n")
    export(result.cloud, paths["flat_csv"], "csv")
    if "pgm" in formats:
        paths.update(
            slice_pgm=f"{prefix}_slice.pgm",
            depth_pgm=f"{prefix}_depth.pgm",
            flat_pgm=f"{prefix}_flat.pgm",
        )
        write_pgm(to_gray(result.image), paths["slice_pgm"])
        write_pgm(to_gray(result.depth_map), paths["depth_pgm"])
        export(result.cloud, paths["flat_pgm"], "pgm")
    return paths
