"""2D decoder head: logits, probabilities, loss, hard masks, K-shot voting.

The decoder turns the condensed map Z into a two-channel score map through
two conv/ReLU stages with bilinear upsampling between and after them, then a
per-pixel softmax: channel 0 scores background, channel 1 foreground. Hard
masks take the per-pixel argmax with exact ties resolved to background. With
K support shots, the K hard masks vote per pixel; votes are normalized by
the image-wide maximum and thresholded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import layers as L
from .arch import ArchSpec
from .autodiff import Node, Parameter, Tape
from .errors import InvalidInputError, ShapeError


@dataclass
class Prediction:
    """Per-pixel class probabilities plus the logits node for the loss path."""

    probabilities: np.ndarray  # (2, H, W), channel 0 background, 1 foreground
    logits: Node

    def __post_init__(self):
        sums = self.probabilities.sum(axis=0)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise InvalidInputError("probabilities must sum to 1 per pixel")


@dataclass(frozen=True)
class VoteConfig:
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise InvalidInputError(f"threshold must lie in (0, 1), got {self.threshold}")


def init_decoder_params(arch: ArchSpec, rng: np.random.Generator) -> Dict[str, Parameter]:
    params: Dict[str, Parameter] = {}
    for i, (cin, cout, k) in enumerate(arch.decoder_convs()):
        w = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k))
        params[f"dec.conv{i}.w"] = Parameter(w, f"dec.conv{i}.w")
        params[f"dec.conv{i}.b"] = Parameter(np.zeros(cout), f"dec.conv{i}.b")
    return params


def decode(tape: Optional[Tape], z: Node, params: Dict[str, Parameter],
           arch: ArchSpec) -> Prediction:
    """Condensed map (C, H1, W1) to a Prediction at the image resolution."""
    c = arch.block_channels[-1]
    if z.value.ndim != 3 or z.value.shape[0] != c:
        raise ShapeError(f"expected ({c}, H, W) condensed map, got {z.value.shape}")
    conv = lambda i, x: L.t_conv2d(tape, x, params[f"dec.conv{i}.w"],
                                   params[f"dec.conv{i}.b"])
    x = L.t_relu(tape, conv(0, z))
    x = L.t_relu(tape, conv(1, x))
    h, w = x.value.shape[1] * 2, x.value.shape[2] * 2
    x = L.t_resize_last2(tape, x, (h, w))
    x = L.t_relu(tape, conv(2, x))
    logits = conv(3, x)
    logits = L.t_resize_last2(tape, logits, (arch.image_size, arch.image_size))
    probs = L.t_softmax_channel(tape, logits)
    return Prediction(probs.value, logits)


def cross_entropy(tape: Optional[Tape], pred: Prediction, gt: np.ndarray,
                  ignore_value: float = 255.0) -> Node:
    """Mean cross-entropy of the prediction against a {0, 1, ignore} mask."""
    return L.cross_entropy_logits(tape, pred.logits, np.asarray(gt, dtype=np.float64),
                                  ignore_value)


def hard_mask(pred: Prediction) -> np.ndarray:
    """Per-pixel argmax as a {0.0, 1.0} mask; exact ties become background."""
    p = pred.probabilities
    return (p[1] > p[0]).astype(np.float64)


def kshot_vote(masks: Sequence[np.ndarray], cfg: VoteConfig = VoteConfig()) -> np.ndarray:
    """Pixelwise vote over K binary masks, normalized by the maximum vote."""
    if len(masks) == 0:
        raise InvalidInputError("need at least one mask to vote")
    shape = masks[0].shape
    for m in masks:
        if m.shape != shape:
            raise ShapeError(f"vote masks must share a shape, got {m.shape} vs {shape}")
        if not np.isin(m, (0.0, 1.0)).all():
            raise InvalidInputError("vote masks must be binary")
    votes = np.sum(masks, axis=0)
    top = votes.max()
    if top == 0:
        return np.zeros(shape, dtype=np.float64)
    return (votes / top > cfg.threshold).astype(np.float64)
