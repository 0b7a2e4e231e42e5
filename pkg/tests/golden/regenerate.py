"""Rewrite the committed golden files.  Run only after an intentional output change."""

import hashlib
from pathlib import Path

from diffflat.flatten import flatten_slice, write_outputs
from diffflat.volume import SliceRef, SynthSpec, synthesize_volume

HERE = Path(__file__).parent
SEED42 = SynthSpec(dims=(32, 32, 8), layer_frequencies=[(0.07, 1.0), (0.11, 0.6)],
                   warp_amplitude=3.0, warp_frequency=1.0, noise_sigma=0.1, seed=42)


def main():
    volume = synthesize_volume(SEED42)
    digest = hashlib.sha256(volume.values.astype("<f4").tobytes()).hexdigest()
    (HERE / "synth_seed42.sha256").write_text(
        f"{digest}  synthesize_volume(dims=(32,32,8), seed=42) float32 LE payload\n"
    )
    result = flatten_slice(volume, SliceRef(2, 0))
    write_outputs(result, str(HERE / "seed42"), formats=("csv",))


if __name__ == "__main__":
    main()
