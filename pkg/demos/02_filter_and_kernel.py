# # From voxels to an affinity kernel
#
# Each voxel's 3x3x3 neighbourhood is projected on the leading principal
# direction of all such patches.  The cube of projected values around a
# slice pixel becomes its feature vector.  The kernel connects nearby
# pixels with weights scaled by the local feature spread M(i).

import numpy as np

from diffflat.filter import extract_patches, feature_covariance, principal_component, adaptive_filter
from diffflat.kernel import (
    NeighborhoodSpec,
    affinity_weights,
    build_kernel,
    calibration_neighborhood,
    local_scale,
    propagation_neighborhood,
)
from diffflat.volume import SliceRef, SynthSpec, synthesize_volume

spec = SynthSpec(dims=(32, 32, 8), layer_frequencies=[(0.07, 1.0), (0.11, 0.6)],
                 warp_amplitude=3.0, noise_sigma=0.1, seed=42)
volume = synthesize_volume(spec)

# ## Principal direction of the patches

patches = extract_patches(volume)
C = feature_covariance(patches)
u1 = principal_component(C)
evals = np.linalg.eigvalsh(C)
print("patches:", patches.columns.shape)
print("top covariance eigenvalues:", np.round(evals[::-1][:4], 4))
print("Rayleigh quotient of u1:", u1 @ C @ u1)
print("u1 reshaped as a cube (depth slowest):")
print(np.round(u1.reshape(3, 3, 3), 3))

# ## Features on one slice

field = adaptive_filter(volume, SliceRef(2, 0))
print("feature field:", field.features.shape)

# ## Neighbourhoods
#
# The propagation disc (r = 2) sets the sparsity; the calibration lattice
# (R = 5, offsets multiple of 3) sets the scale.

nb = NeighborhoodSpec()
print("N_r(10, 10):", propagation_neighborhood((10, 10), nb, field.slice_shape))
print("C_R(10, 10):", calibration_neighborhood((10, 10), nb, field.slice_shape))

# ## Kernel

M = local_scale(field.features, nb)
W = affinity_weights(field.features, nb)
K = build_kernel(field.features, nb)
print("M range:", M.min(), M.max())
print("K:", K.shape, "nonzeros", K.nnz, "exactly symmetric:", (K != K.T).nnz == 0)

# The calibrated floor: whenever a neighbour is no farther than the local
# scale, its weight is at least delta_floor.

Wc = W.tocoo()
f = field.features.reshape(-1, 27)
d2 = np.sum((f[Wc.row] - f[Wc.col]) ** 2, axis=1)
inside = d2 <= M.ravel()[Wc.row]
print("min in-scale weight:", Wc.data[inside].min(), ">= delta_floor", nb.delta_floor)
