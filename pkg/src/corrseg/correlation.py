"""Masked support features and cosine-correlation pyramids.

A FeatureSet is an ordered list of backbone activations grouped into pyramid
levels of equal spatial size. Correlating a query set against a masked
support set yields, per level, a stack of clamped cosine-similarity tensors
of shape (layers-in-level, Hp, Wp, Hp, Wp): one similarity per pair of a
query position and a support position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InvalidInputError, ShapeError
from .ops import resize_last2

ZERO_NORM_EPS = 1e-8


@dataclass
class FeatureSet:
    """Ordered (layer index, feature) pairs plus their grouping into levels.

    ``groups`` lists, per pyramid level, the positions into ``entries`` that
    belong to that level; every feature inside one group must share (H, W).
    """

    entries: List[Tuple[int, np.ndarray]]
    groups: List[List[int]]

    def __post_init__(self):
        last = -1
        for layer, feat in self.entries:
            if layer <= last:
                raise InvalidInputError("layer indices must be strictly increasing")
            last = layer
            if feat.ndim != 3:
                raise ShapeError(f"feature must be (C, H, W), got {feat.shape}")
        seen = set()
        for g in self.groups:
            if not g:
                raise InvalidInputError("empty pyramid level group")
            sizes = {self.entries[i][1].shape[1:] for i in g}
            if len(sizes) != 1:
                raise ShapeError(f"unequal spatial sizes within one level: {sizes}")
            seen.update(g)
        if seen != set(range(len(self.entries))):
            raise InvalidInputError("groups must partition the entry list")

    def level_entries(self, p: int) -> List[np.ndarray]:
        return [self.entries[i][1] for i in self.groups[p]]


@dataclass
class Hypercorrelation:
    """One pyramid level of stacked 4D correlation tensors."""

    level: int
    tensor: np.ndarray  # (|group|, Hp, Wp, Hp, Wp)

    def __post_init__(self):
        if self.tensor.ndim != 5:
            raise ShapeError(f"expected rank 5, got {self.tensor.shape}")
        c, hq, wq, hs, ws = self.tensor.shape
        if (hq, wq) != (hs, ws):
            raise ShapeError("query and support extents must match per level")


def mask_support_features(fs: FeatureSet, mask: np.ndarray) -> FeatureSet:
    """Multiply every support feature by the mask resized to its resolution."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be (H, W), got {mask.shape}")
    bad = (mask < 0.0) | (mask > 1.0)
    if bad.any():
        raise InvalidInputError("mask values must lie in [0, 1]")
    masked = []
    for layer, feat in fs.entries:
        m = resize_last2(mask[None], feat.shape[1:])[0]
        masked.append((layer, feat * m[None]))
    return FeatureSet(masked, [list(g) for g in fs.groups])


def correlation_4d(fq: np.ndarray, fs: np.ndarray) -> np.ndarray:
    """Clamped cosine similarity between every query/support position pair.

    Positions whose feature vector has norm below 1e-8 correlate as zero;
    masked-out support cells make such vectors routine.
    """
    if fq.shape != fs.shape:
        raise ShapeError(f"query {fq.shape} and support {fs.shape} must match")
    c, h, w = fq.shape
    q = fq.reshape(c, h * w)
    s = fs.reshape(c, h * w)
    qn = np.linalg.norm(q, axis=0)
    sn = np.linalg.norm(s, axis=0)
    dots = q.T @ s
    denom = np.outer(qn, sn)
    valid = (qn[:, None] >= ZERO_NORM_EPS) & (sn[None, :] >= ZERO_NORM_EPS)
    out = np.zeros_like(dots)
    np.divide(dots, denom, out=out, where=valid)
    np.maximum(out, 0.0, out=out)
    return out.reshape(h, w, h, w)


def build_hypercorrelation_pyramid(q: FeatureSet, s_masked: FeatureSet) -> List[Hypercorrelation]:
    """Correlate matching layers and stack each level along a channel axis."""
    if len(q.entries) != len(s_masked.entries) or q.groups != s_masked.groups:
        raise InvalidInputError("query and support feature sets must share structure")
    pyramid = []
    for p, group in enumerate(q.groups):
        stack = [correlation_4d(q.entries[i][1], s_masked.entries[i][1]) for i in group]
        pyramid.append(Hypercorrelation(p, np.stack(stack, axis=0)))
    return pyramid
