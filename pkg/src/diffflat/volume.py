"""Seismic volume model, synthetic generation, SVOL persistence and PGM output.

A volume is an ``m x n x l`` float32 array whose first axis is depth.  On
disk it is stored as a little-endian SVOL file::

    offset  size  field
    0       4     magic  b"SVOL"
    4       4     version (uint32, = 1)
    8       12    m, n, l (uint32 each)
    20      4mnl  float32 values, last index fastest

so the value at ``(i1, i2, i3)`` sits at payload offset
``4 * ((i1 * n + i2) * l + i3)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SVOL"
VERSION = 1
HEADER = struct.Struct("<4sIIII")

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class VolumeFormatError(ValueError):
    """Malformed SVOL file.  ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class VolumeHeader:
    m: int
    n: int
    l: int
    version: int = VERSION

    @property
    def dims(self):
        return (self.m, self.n, self.l)

    @property
    def payload_nbytes(self):
        return 4 * self.m * self.n * self.l


@dataclass(frozen=True, eq=False)
class SeismicVolume:
    """Scalar field on an ``m x n x l`` grid; axis 0 is depth."""

    values: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ValueError(f"volume must be 3-D with nonzero extents, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("volume values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def header(self):
        return VolumeHeader(*self.values.shape)

    def __eq__(self, other):
        if not isinstance(other, SeismicVolume):
            return NotImplemented
        return self.shape == other.shape and self.values.tobytes() == other.values.tobytes()


@dataclass(frozen=True)
class SliceRef:
    """A 2-D depth slice: ``axis`` (1 or 2) is the lateral axis held at ``index``."""

    axis: int
    index: int

    def __post_init__(self):
        if self.axis not in (1, 2):
            raise ValueError(f"slice axis must be 1 or 2 (depth cannot be fixed), got {self.axis}")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the layered synthetic model.

    ``layer_frequencies`` holds ``(cycles per depth sample, amplitude)`` pairs.
    """

    dims: tuple
    layer_frequencies: list = field(default_factory=list)
    warp_amplitude: float = 0.0
    warp_frequency: float = 1.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 3:
            raise ValueError(f"dims must have three entries, got {self.dims!r}")
        if any(int(d) < 1 for d in self.dims):
            raise ValueError(f"dims must be positive, got {self.dims!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.warp_amplitude < 0:
            raise ValueError("warp_amplitude must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def splitmix64(seed, count):
    """First ``count`` outputs of the SplitMix64 generator started at ``seed``."""
    idx = np.arange(1, count + 1, dtype=np.uint64)
    z = np.uint64(seed) + idx * _GAMMA
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def gaussian_noise(seed, count):
    """Standard normal deviates from SplitMix64 uniforms via Box-Muller.

    Uniforms are the top 53 bits mapped onto (0, 1]; each pair ``(u1, u2)``
    yields ``r cos(2 pi u2)`` and ``r sin(2 pi u2)`` with ``r = sqrt(-2 ln u1)``.
    """
    npairs = (count + 1) // 2
    bits = splitmix64(seed, 2 * npairs)
    u = ((bits >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    theta = 2.0 * np.pi * u[1::2]
    out = np.empty(2 * npairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:count]


def warp_field(spec):
    """Lateral warp ``warp(i2, i3)`` of the synthetic model, shape ``(n, l)``."""
    _, n, l = (int(d) for d in spec.dims)
    i2 = np.arange(n, dtype=np.float64)[:, None]
    i3 = np.arange(l, dtype=np.float64)[None, :]
    k = 2.0 * np.pi * spec.warp_frequency
    return spec.warp_amplitude * np.sin(k * i2 / n) * np.cos(k * i3 / l)


def warped_phase(spec):
    """True layer coordinate ``i1 + warp(i2, i3)`` over the whole volume."""
    m = int(spec.dims[0])
    i1 = np.arange(m, dtype=np.float64)[:, None, None]
    return i1 + warp_field(spec)[None, :, :]


def synthesize_volume(spec):
    """Layered synthetic volume; a pure function of ``spec``.

    Examples
    --------
    >>> v = synthesize_volume(SynthSpec(dims=(4, 4, 4)))
    >>> float(abs(v.values).max())
    0.0
    """
    dims = tuple(int(d) for d in spec.dims)
    if min(dims) < 4:
        raise ValueError(f"synthetic volumes need every extent >= 4, got {dims}")
    phase = warped_phase(spec)
    values = np.zeros(dims)
    for freq, amp in spec.layer_frequencies:
        values += amp * np.sin(2.0 * np.pi * freq * phase)
    if spec.noise_sigma > 0:
        values += spec.noise_sigma * gaussian_noise(spec.seed, values.size).reshape(dims)
    return SeismicVolume(values.astype(np.float32))


def save_volume(volume, path):
    m, n, l = volume.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, m, n, l))
        fh.write(volume.values.astype("<f4", copy=False).tobytes(order="C"))


def load_volume(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < HEADER.size:
        raise VolumeFormatError(
            f"file is {len(data)} bytes, shorter than the {HEADER.size}-byte header", len(data)
        )
    magic, version, m, n, l = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise VolumeFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise VolumeFormatError(f"unsupported version {version}, expected {VERSION}", 4)
    if min(m, n, l) < 1:
        raise VolumeFormatError(f"invalid dims {(m, n, l)}", 8)
    expected = 4 * m * n * l
    actual = len(data) - HEADER.size
    if actual != expected:
        raise VolumeFormatError(
            f"payload length mismatch: expected {expected} bytes, got {actual}",
            HEADER.size + min(actual, expected),
        )
    values = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(m, n, l)
    return SeismicVolume(values.astype(np.float32))


def extract_slice(volume, ref):
    """Depth-by-lateral image of ``volume`` with ``ref.axis`` fixed at ``ref.index``."""
    extent = volume.shape[ref.axis]
    if not 0 <= ref.index < extent:
        raise IndexError(f"slice index {ref.index} out of range for axis {ref.axis} of extent {extent}")
    if ref.axis == 1:
        return volume.values[:, ref.index, :].copy()
    return volume.values[:, :, ref.index].copy()


def to_gray(image):
    """Affine map of ``image`` onto 0..255 (min to 0, max to 255).

    NaN entries are treated as empty and rendered mid-gray, as is a constant
    image.
    """
    image = np.asarray(image, dtype=np.float64)
    filled = ~np.isnan(image)
    out = np.full(image.shape, 128, dtype=np.uint8)
    if not filled.any():
        return out
    lo = image[filled].min()
    hi = image[filled].max()
    if hi > lo:
        scaled = np.rint((image[filled] - lo) / (hi - lo) * 255.0)
        out[filled] = np.clip(scaled, 0, 255).astype(np.uint8)
    return out


def write_pgm(gray, path):
    gray = np.asarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError("PGM output needs a 2-D image")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(gray).tobytes())


def render_pgm(image, path):
    """Write ``image`` as a binary (P5) grayscale PGM."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ValueError("render_pgm needs finite values")
    write_pgm(to_gray(image), path)


def read_pgm(path):
    """Minimal P5 reader, the inverse of :func:`write_pgm`."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"not a P5 file: {tokens[0]!r}")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data, dtype=np.uint8, offset=pos, count=w * h).reshape(h, w)

