"""Command-line entry point: ``diffflat {synth,flatten,verify}``.

Exit codes: 0 success, 1 invalid configuration or input, 2 numerical failure
(including a failed verification row).
"""

from __future__ import annotations

import argparse
import configparser
import sys
import time

from . import flatten as flat
from . import stability
from .filter import adaptive_filter, write_filtered_csv
from .kernel import NeighborhoodSpec, build_kernel
from .spectral import ConvergenceError, StructuralError, diffusion_spectrum
from .volume import SliceRef, SynthSpec, VolumeFormatError, extract_slice, load_volume, save_volume, synthesize_volume

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2

SCHEMA = {
    "synth": {"dims", "layer_frequencies", "warp_amplitude", "warp_frequency", "noise_sigma", "seed"},
    "filter": {"slice_axis", "slice_index", "dump_csv"},
    "kernel": {"r", "R", "delta_floor"},
    "spectral": {"eigencount", "tol", "seed"},
    "flatten": {"formats"},
    "verify": {"width", "height", "nx", "ny", "families", "targets", "amplitudes", "k_list", "d",
               "samples"},
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


def load_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # r and R are different keys
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
    return parser


def _get(cfg, section, key, conv, default=None, required=False):
    if cfg.has_section(section) and key in cfg[section]:
        raw = cfg[section][key]
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for '{key}' in [{section}]: {raw!r} ({exc})") from exc
    if required:
        raise ConfigError(f"missing required key '{key}' in [{section}]")
    return default


def _ints(raw):
    vals = [int(t) for t in raw.replace(",", " ").split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _floats(raw):
    vals = [float(t) for t in raw.replace(",", " ").split()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _words(raw):
    return [t for t in raw.replace(",", " ").split() if t]


def _pairs(raw):
    """``freq:amp`` items separated by commas; empty means no layers."""
    pairs = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        f, a = item.split(":")
        pairs.append((float(f), float(a)))
    return pairs


def _bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def synth_spec_from_config(cfg):
    dims = _get(cfg, "synth", "dims", _ints, required=True)
    if len(dims) != 3:
        raise ConfigError(f"'dims' in [synth] needs three integers, got {dims}")
    try:
        return SynthSpec(
            dims=tuple(dims),
            layer_frequencies=_get(cfg, "synth", "layer_frequencies", _pairs, []),
            warp_amplitude=_get(cfg, "synth", "warp_amplitude", float, 0.0),
            warp_frequency=_get(cfg, "synth", "warp_frequency", float, 1.0),
            noise_sigma=_get(cfg, "synth", "noise_sigma", float, 0.0),
            seed=_get(cfg, "synth", "seed", int, 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_synth(cfg, out_path):
    spec = synth_spec_from_config(cfg)
    try:
        volume = synthesize_volume(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    save_volume(volume, out_path)
    print(f"wrote {out_path}: dims {volume.shape}")
    return EXIT_OK


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConvergenceError, StructuralError, flat.DegenerateSpectrumError, ValueError) as exc:
        raise StageError(name, exc) from exc


def cmd_flatten(cfg, volume_path, out_prefix):
    try:
        volume = load_volume(volume_path)
    except (OSError, VolumeFormatError) as exc:
        raise ConfigError(f"cannot load volume: {exc}") from exc
    axis = _get(cfg, "filter", "slice_axis", int, 2)
    index = _get(cfg, "filter", "slice_index", int, 0)
    try:
        ref = SliceRef(axis, index)
        image = extract_slice(volume, ref)
        spec = NeighborhoodSpec(
            r=_get(cfg, "kernel", "r", float, 2.0),
            R=_get(cfg, "kernel", "R", float, 5.0),
            delta_floor=_get(cfg, "kernel", "delta_floor", float, 1e-7),
        )
    except (ValueError, IndexError) as exc:
        raise ConfigError(str(exc)) from exc
    neig = _get(cfg, "spectral", "eigencount", int, 4)
    tol = _get(cfg, "spectral", "tol", float, 1e-8)
    seed = _get(cfg, "spectral", "seed", int, 0)
    formats = _get(cfg, "flatten", "formats", _words, ["csv", "pgm"])
    unknown = set(formats) - {"csv", "pgm"}
    if unknown:
        raise ConfigError(f"unknown format(s) {sorted(unknown)} in [flatten]")
    if neig < 1:
        raise ConfigError("'eigencount' in [spectral] must be >= 1")

    timings = {}
    t0 = time.perf_counter()
    feats = _stage("filter", adaptive_filter, volume, ref, seed=seed)
    timings["filter"] = time.perf_counter() - t0
    if _get(cfg, "filter", "dump_csv", _bool, False):
        write_filtered_csv(feats.w, ref, f"{out_prefix}_filtered.csv")

    t0 = time.perf_counter()
    K = _stage("kernel", build_kernel, feats.features, spec)
    timings["kernel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    _, spectrum = _stage("spectral", diffusion_spectrum, K, neig, tol=tol, seed=seed)
    timings["spectral"] = time.perf_counter() - t0

    def organise():
        flat.check_layering(feats.features)
        psi1 = flat.orient_first_eigenvector(spectrum.psi[:, 1], image.shape)
        h = flat.depth_from_eigenvector(psi1)
        return psi1, h, flat.reparameterize(image, h)

    t0 = time.perf_counter()
    psi1, h, cloud = _stage("flatten", organise)
    timings["flatten"] = time.perf_counter() - t0

    result = flat.FlattenResult(image, psi1, h, cloud, spectrum.eigenvalues, spectrum.psi, timings)
    paths = flat.write_outputs(result, out_prefix, formats)
    lam = " ".join(f"{v:.9g}" for v in spectrum.eigenvalues[1:])
    print(f"eigenvalues lambda_1..lambda_{neig}: {lam}")
    print("timing " + " ".join(f"{k}={v:.3f}s" for k, v in timings.items()))
    for path in paths.values():
        print(f"wrote {path}")
    return EXIT_OK


def verify_setup_from_config(cfg):
    rect = stability.RectangleSpec(
        width=_get(cfg, "verify", "width", float, 0.5),
        height=_get(cfg, "verify", "height", float, 4.0),
        nx=_get(cfg, "verify", "nx", int, 32),
        ny=_get(cfg, "verify", "ny", int, 256),
    )
    families = _get(cfg, "verify", "families", _words, ["identity", "vertical-wave", "bulge"])
    for fam in families:
        if fam not in stability.FAMILIES:
            raise ConfigError(f"unknown family '{fam}' in [verify]")
    k_list = _get(cfg, "verify", "k_list", _ints, [2, 4, 6])
    if min(k_list) < 1:
        raise ConfigError("'k_list' in [verify] needs positive integers")
    d = _get(cfg, "verify", "d", int, 2)
    samples = _get(cfg, "verify", "samples", int, 257)
    amplitudes = _get(cfg, "verify", "amplitudes", _floats)
    catalog = []
    if "identity" in families:
        catalog.append(stability.Deformation.on(rect, "identity"))
    moving = [f for f in families if f != "identity"]
    if amplitudes is not None:
        catalog += [stability.Deformation.on(rect, f, a) for f in moving for a in amplitudes]
    else:
        targets = _get(cfg, "verify", "targets", _floats, [0.02, 0.05, 0.10])
        catalog += stability.catalog_for_targets(rect, moving, targets, d, include_identity=False)
    return rect, catalog, k_list, d, samples


def cmd_verify(cfg, out_path):
    try:
        rect, catalog, k_list, d, samples = verify_setup_from_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        reports = stability.verify_theorem(rect, catalog, k_list, d=d, samples=samples)
    except stability.InvalidDeformationError as exc:
        raise ConfigError(str(exc)) from exc
    stability.write_report_csv(reports, out_path)
    active = [r for r in reports if not r.skipped]
    failed = [r for r in active
              if not (r.passed and all(c.passed for c in r.lemmas))]
    print(f"{len(reports)} rows, {len(reports) - len(active)} skipped, {len(failed)} failed; wrote {out_path}")
    return EXIT_NUMERICAL if failed else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="diffflat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", help="write a synthetic SVOL volume")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output .svol path")
    p = sub.add_parser("flatten", help="flatten one slice of a volume")
    p.add_argument("volume", help="input .svol path")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p = sub.add_parser("verify", help="run the deformation stability checks")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "synth":
            return cmd_synth(cfg, args.out)
        if args.command == "flatten":
            return cmd_flatten(cfg, args.volume, args.out)
        return cmd_verify(cfg, args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
