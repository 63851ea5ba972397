"""End-to-end few-shot segmenter: correlate, encode, decode, vote.

Episode inputs (backbone features and masks) are constants: gradients reach
only the encoder and decoder parameters, mirroring a frozen backbone. Each
forward pass builds a fresh graph on the caller's tape.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arch import ArchSpec
from .autodiff import Parameter, Tape
from .conv4d import CENTER_PIVOT
from .correlation import (FeatureSet, build_hypercorrelation_pyramid,
                          mask_support_features)
from .decoder import (Prediction, VoteConfig, decode, hard_mask,
                      init_decoder_params, kshot_vote)
from .encoder import encode, init_encoder_params


class Model:
    """Holds the parameter registry and runs episode forwards."""

    def __init__(self, arch: ArchSpec, seed: int = 0, variant: str = CENTER_PIVOT):
        self.arch = arch
        self.variant = variant
        rng = np.random.default_rng(seed)
        self.params: "OrderedDict[str, Parameter]" = OrderedDict()
        self.params.update(init_encoder_params(arch, rng, variant))
        self.params.update(init_decoder_params(arch, rng))

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def forward(self, tape: Optional[Tape], query: FeatureSet, support: FeatureSet,
                support_mask: np.ndarray) -> Prediction:
        """One-shot forward: mask support, correlate, encode, decode."""
        masked = mask_support_features(support, support_mask)
        pyramid = build_hypercorrelation_pyramid(query, masked)
        z = encode(tape, pyramid, self.params, self.arch, self.variant)
        return decode(tape, z, self.params, self.arch)

    def predict(self, query: FeatureSet,
                supports: Sequence[Tuple[FeatureSet, np.ndarray]],
                vote: VoteConfig = VoteConfig()) -> np.ndarray:
        """K-shot prediction: per-shot hard masks combined by voting."""
        masks = [hard_mask(self.forward(None, query, fs, m)) for fs, m in supports]
        return kshot_vote(masks, vote)
