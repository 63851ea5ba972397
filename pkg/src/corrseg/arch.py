"""Architecture schedules: per-backbone layer groups, block shapes, counting.

A spec pins everything the encoder and decoder need: how backbone layers
group into pyramid levels, the kernel/stride schedule of each squeezing
block, the shared mixing-block shape, decoder channels, and the expected
per-layer feature shapes used to validate manifests. Parameter and FLOPs
accounting live here because they are pure functions of the schedule.

The three full-scale presets share one block channel schedule (16, 64, 128);
per-level kernel sizes and support strides reduce the support axes to (2, 2)
from any of the three pyramid extents. The toy preset shrinks everything for
fast training tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from .conv4d import (CENTER_PIVOT, Conv4dConfig, conv2d_param_count,
                     conv4d_flop_count, conv4d_param_count, norm_param_count)
from .errors import InvalidInputError

DECODER_KERNEL = 3


@dataclass(frozen=True)
class LevelSpec:
    """One pyramid level: how many backbone layers feed it and at what size."""
    group_size: int
    extent: int
    kernels: Tuple[int, int, int]
    support_strides: Tuple[int, int, int]


@dataclass(frozen=True)
class ArchSpec:
    name: str
    levels: Tuple[LevelSpec, ...]  # index 0 = level 1, the largest extent
    block_channels: Tuple[int, int, int]
    image_size: int
    feature_shapes: Tuple[Tuple[int, int, int], ...]
    norm_groups: int = 4
    mix_kernel: int = 3

    def __post_init__(self):
        if len(self.levels) != 3:
            raise InvalidInputError("exactly three pyramid levels are supported")
        if sum(l.group_size for l in self.levels) != len(self.feature_shapes):
            raise InvalidInputError("feature shapes must cover every grouped layer")

    @property
    def groups(self) -> List[List[int]]:
        """Entry-index groups for a FeatureSet, shallow level first."""
        out, start = [], 0
        for lv in self.levels:
            out.append(list(range(start, start + lv.group_size)))
            start += lv.group_size
        return out

    def squeeze_configs(self, p: int, variant: str = CENTER_PIVOT) -> List[Conv4dConfig]:
        """The three conv layers of squeezing block p (1-based level index)."""
        lv = self.levels[p - 1]
        chans = (lv.group_size,) + self.block_channels
        cfgs = []
        for i in range(3):
            s = lv.support_strides[i]
            cfgs.append(Conv4dConfig(chans[i], chans[i + 1], lv.kernels[i],
                                     (1, 1, s, s), variant=variant))
        return cfgs

    def mix_configs(self, variant: str = CENTER_PIVOT) -> List[Conv4dConfig]:
        c = self.block_channels[-1]
        return [Conv4dConfig(c, c, self.mix_kernel, (1, 1, 1, 1), variant=variant)
                for _ in range(3)]

    def decoder_convs(self) -> List[Tuple[int, int, int]]:
        c = self.block_channels[-1]
        h = c // 2
        return [(c, c, DECODER_KERNEL), (c, h, DECODER_KERNEL),
                (h, h, DECODER_KERNEL), (h, 2, DECODER_KERNEL)]

    def block_param_count(self, block: str, variant: str = CENTER_PIVOT) -> int:
        if block == "decoder":
            return sum(conv2d_param_count(ci, co, k) for ci, co, k in self.decoder_convs())
        if block.startswith("squeeze"):
            cfgs = self.squeeze_configs(int(block[-1]), variant)
        elif block.startswith("mix"):
            cfgs = self.mix_configs(variant)
        else:
            raise InvalidInputError(f"unknown block {block!r}")
        return sum(conv4d_param_count(c) for c in cfgs) + \
            sum(norm_param_count(c.out_channels) for c in cfgs)

    def param_table(self, variant: str = CENTER_PIVOT) -> Dict[str, int]:
        blocks = ["squeeze1", "squeeze2", "squeeze3", "mix2", "mix1", "decoder"]
        return {b: self.block_param_count(b, variant) for b in blocks}

    def total_params(self, variant: str = CENTER_PIVOT) -> int:
        return sum(self.param_table(variant).values())

    def conv4d_stack(self, variant: str = CENTER_PIVOT):
        """(name, config, input extents) for every 4D conv layer in order."""
        rows = []
        for p in (1, 2, 3):
            lv = self.levels[p - 1]
            ext = (lv.extent, lv.extent, lv.extent, lv.extent)
            for i, cfg in enumerate(self.squeeze_configs(p, variant)):
                rows.append((f"squeeze{p}.conv{i}", cfg, ext))
                ext = cfg.out_extents(ext)
        sup = self.squeeze_configs(1, variant)[-1].out_extents(
            (self.levels[0].extent,) * 4)[2:]
        for name, p in (("mix2", 2), ("mix1", 1)):
            ext = (self.levels[p - 1].extent, self.levels[p - 1].extent) + sup
            for i, cfg in enumerate(self.mix_configs(variant)):
                rows.append((f"{name}.conv{i}", cfg, ext))
                ext = cfg.out_extents(ext)
        return rows

    def total_conv4d_flops(self, variant: str = CENTER_PIVOT) -> int:
        return sum(conv4d_flop_count(cfg, ext)
                   for _, cfg, ext in self.conv4d_stack(variant))

    def level_extents(self) -> Tuple[int, ...]:
        return tuple(lv.extent for lv in self.levels)


def _resnet_levels(g1: int, g2: int, g3: int) -> Tuple[LevelSpec, ...]:
    return (LevelSpec(g1, 50, (5, 5, 3), (4, 4, 2)),
            LevelSpec(g2, 25, (5, 3, 3), (4, 2, 2)),
            LevelSpec(g3, 13, (3, 3, 3), (2, 2, 2)))


def _shapes(*runs) -> Tuple[Tuple[int, int, int], ...]:
    out = []
    for (c, h), n in runs:
        out.extend([(c, h, h)] * n)
    return tuple(out)


RESNET101 = ArchSpec(
    name="resnet101",
    levels=_resnet_levels(4, 23, 3),
    block_channels=(16, 64, 128),
    image_size=400,
    feature_shapes=_shapes(((512, 50), 4), ((1024, 25), 23), ((2048, 13), 3)))

RESNET50 = ArchSpec(
    name="resnet50",
    levels=_resnet_levels(4, 6, 3),
    block_channels=(16, 64, 128),
    image_size=400,
    feature_shapes=_shapes(((512, 50), 4), ((1024, 25), 6), ((2048, 13), 3)))

VGG16 = ArchSpec(
    name="vgg16",
    levels=(LevelSpec(3, 50, (5, 5, 3), (4, 4, 2)),
            LevelSpec(3, 25, (5, 3, 3), (4, 2, 2)),
            LevelSpec(1, 12, (3, 3, 3), (2, 2, 2))),
    block_channels=(16, 64, 128),
    image_size=400,
    feature_shapes=_shapes(((512, 50), 3), ((512, 25), 3), ((512, 12), 1)))

TOY = ArchSpec(
    name="toy",
    levels=(LevelSpec(2, 8, (3, 3, 3), (2, 2, 1)),
            LevelSpec(2, 4, (3, 3, 3), (2, 1, 1)),
            LevelSpec(2, 2, (3, 3, 3), (1, 1, 1))),
    block_channels=(8, 16, 32),
    image_size=64,
    feature_shapes=_shapes(((4, 8), 2), ((4, 4), 2), ((4, 2), 2)))

PRESETS: Dict[str, ArchSpec] = {s.name: s for s in (RESNET101, RESNET50, VGG16, TOY)}

# Published per-block counts in units of 1K, for the self-checking report.
EXPECTED_BLOCK_KCOUNTS: Dict[str, Dict[str, int]] = {
    "resnet101": {"squeeze1": 203, "squeeze2": 185, "squeeze3": 168,
                  "mix2": 886, "mix1": 886, "decoder": 259},
    "resnet50": {"squeeze1": 203, "squeeze2": 172, "squeeze3": 168,
                 "mix2": 886, "mix1": 886, "decoder": 259},
    "vgg16": {"squeeze1": 202, "squeeze2": 169, "squeeze3": 167,
              "mix2": 886, "mix1": 886, "decoder": 259},
}

# Published totals in units of 1M, by kernel variant, for the summary line.
EXPECTED_TOTAL_M = {"center-pivot": 2.6, "original": 11.3}


def round_k(n: int) -> int:
    return round(n / 1000)


def round_m(n: int) -> float:
    return round(n / 1e6, 1)


def get_arch(name: str) -> ArchSpec:
    if name not in PRESETS:
        raise InvalidInputError(f"unknown backbone tag {name!r}; "
                                f"expected one of {sorted(PRESETS)}")
    return PRESETS[name]
