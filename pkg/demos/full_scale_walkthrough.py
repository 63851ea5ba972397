"""
Full-scale pipeline walkthrough
===============================

One synthetic episode at the main preset flows through every stage: masked
support features, the three-level correlation pyramid, the squeezing
encoder with its top-down merge, and the 2D decoder. Each stage prints the
tensor shape it hands to the next one.
"""

import time

from corrseg.arch import get_arch
from corrseg.correlation import (build_hypercorrelation_pyramid,
                                 mask_support_features)
from corrseg.decoder import decode, hard_mask
from corrseg.encoder import encode
from corrseg.episodes import SyntheticEpisodeSpec, generate_synthetic_episode
from corrseg.model import Model

arch = get_arch("resnet101")
t0 = time.perf_counter()

episode = generate_synthetic_episode(
    SyntheticEpisodeSpec(seed=0, arch_name="resnet101"))
print("query features :", [f.shape for _, f in episode.query_features.entries])
print("query truth    :", episode.query_gt.shape)

# support features are zeroed outside the support mask before correlating
shot = episode.supports[0]
masked = mask_support_features(shot.features, shot.mask)

pyramid = build_hypercorrelation_pyramid(episode.query_features, masked)
for lvl in pyramid:
    print(f"pyramid level {lvl.level}:", lvl.tensor.shape)

model = Model(arch, seed=0)
print("parameters     :", sum(p.value.size for p in model.params.values()))

# encoder: per-level squeezing to a 2x2 support window, then top-down mixing
z = encode(None, pyramid, model.params, arch, model.variant)
print("condensed map  :", z.value.shape)

# decoder: two upsampling stages back to image resolution, then softmax
pred = decode(None, z, model.params, arch)
print("probabilities  :", pred.probabilities.shape)
print("hard mask covers", hard_mask(pred).mean(), "of the image (untrained)")

print(f"elapsed: {time.perf_counter() - t0:.1f}s")
