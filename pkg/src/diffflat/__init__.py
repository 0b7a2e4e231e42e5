"""Diffusion-geometry flattening of layered images and stability checks for
first Neumann eigenfunctions under domain deformation.

Modules
-------
volume      volume model, synthetic data, SVOL files, PGM output
filter      PCA filtering of 3x3x3 neighbourhoods into feature vectors
kernel      anisotropic affinity kernel on a slice
spectral    diffusion operator and its leading eigenpairs
flatten     depth recovery from the first nontrivial eigenvector
stability   finite-element checks of the eigenfunction stability bound
cli         ``diffflat`` command-line interface
"""

from .filter import adaptive_filter
from .flatten import flatten_slice
from .kernel import NeighborhoodSpec, build_kernel
from .spectral import diffusion_spectrum
from .stability import RectangleSpec, Deformation, verify_theorem
from .volume import SeismicVolume, SliceRef, SynthSpec, load_volume, save_volume, synthesize_volume

__version__ = "0.1.0"

__all__ = [
    "Deformation",
    "NeighborhoodSpec",
    "RectangleSpec",
    "SeismicVolume",
    "SliceRef",
    "SynthSpec",
    "adaptive_filter",
    "build_kernel",
    "diffusion_spectrum",
    "flatten_slice",
    "load_volume",
    "save_volume",
    "synthesize_volume",
    "verify_theorem",
]
