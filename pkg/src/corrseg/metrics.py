"""Segmentation metrics: per-class mIoU and class-agnostic FB-IoU.

Counts accumulate across episodes before any division, so a class evaluated
over many episodes gets one intersection/union ratio, not an average of
ratios. Pixels carrying the ignore label are excluded from both counts when
the exclusion policy is on; otherwise they count as ordinary background.
Accumulators merge by summing counts, so evaluation order never matters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import InvalidInputError, ShapeError

IGNORE_VALUE = 255.0


@dataclass
class EvalAccumulator:
    exclude_ignored: bool = True
    inter: Dict[int, int] = field(default_factory=dict)
    union: Dict[int, int] = field(default_factory=dict)
    fg_inter: int = 0
    fg_union: int = 0
    bg_inter: int = 0
    bg_union: int = 0

    def accumulate(self, pred: np.ndarray, gt: np.ndarray, class_id: int) -> None:
        """Fold one episode's binary prediction against its ground truth."""
        if pred.shape != gt.shape:
            raise ShapeError(f"prediction {pred.shape} and truth {gt.shape} differ")
        if not np.isin(pred, (0.0, 1.0)).all():
            raise InvalidInputError("prediction must be binary")
        if not np.isin(gt, (0.0, 1.0, IGNORE_VALUE)).all():
            raise InvalidInputError("truth values must be 0, 1, or the ignore label")
        if self.exclude_ignored:
            valid = gt != IGNORE_VALUE
        else:
            valid = np.ones_like(gt, dtype=bool)
        pf = pred == 1.0
        gf = gt == 1.0
        self.inter.setdefault(class_id, 0)
        self.union.setdefault(class_id, 0)
        self.inter[class_id] += int((pf & gf & valid).sum())
        self.union[class_id] += int(((pf | gf) & valid).sum())
        self.fg_inter += int((pf & gf & valid).sum())
        self.fg_union += int(((pf | gf) & valid).sum())
        self.bg_inter += int((~pf & ~gf & valid).sum())
        self.bg_union += int(((~pf | ~gf) & valid).sum())

    def merge(self, other: "EvalAccumulator") -> "EvalAccumulator":
        """Combine two accumulators; commutative and associative."""
        if self.exclude_ignored != other.exclude_ignored:
            raise InvalidInputError("cannot merge accumulators with different policies")
        out = EvalAccumulator(self.exclude_ignored)
        for src in (self, other):
            for c in src.inter:
                out.inter[c] = out.inter.get(c, 0) + src.inter[c]
                out.union[c] = out.union.get(c, 0) + src.union[c]
            out.fg_inter += src.fg_inter
            out.fg_union += src.fg_union
            out.bg_inter += src.bg_inter
            out.bg_union += src.bg_union
        return out


def miou(acc: EvalAccumulator) -> float:
    """Mean over classes of intersection/union; zero-union classes drop out."""
    ious = [acc.inter[c] / acc.union[c] for c in acc.inter if acc.union[c] > 0]
    if not ious:
        raise InvalidInputError("no accumulated class data")
    return float(np.mean(ious))


def fbiou(acc: EvalAccumulator) -> float:
    """Mean of foreground and background IoU; an empty side counts as 1."""
    if not acc.inter:
        raise InvalidInputError("no accumulated data")
    iou_f = acc.fg_inter / acc.fg_union if acc.fg_union > 0 else 1.0
    iou_b = acc.bg_inter / acc.bg_union if acc.bg_union > 0 else 1.0
    return 0.5 * (iou_f + iou_b)


def report(acc: EvalAccumulator) -> str:
    """Machine-readable key=value summary, one entry per line."""
    lines = [f"miou={miou(acc):.6f}", f"fbiou={fbiou(acc):.6f}"]
    for c in sorted(acc.inter):
        if acc.union[c] > 0:
            lines.append(f"iou_class_{c}={acc.inter[c] / acc.union[c]:.6f}")
    return "\n".join(lines)
