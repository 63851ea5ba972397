"""Pyramid encoder: squeezing blocks, top-down mixing, support pooling.

Each pyramid level runs a three-stage squeezing block (4D conv, group norm,
ReLU) that strides the support axes down to a (2, 2) stub while leaving the
query axes alone. Levels then merge top-down: the deepest output has its
query axes bilinearly resized to the next level's extent, is added in, and a
stride-1 mixing block follows; once more into the largest level. Averaging
away the support stub leaves the condensed map Z of shape (C, H1, W1).
"""

from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from . import layers as L
from .arch import ArchSpec
from .autodiff import Node, Parameter, Tape
from .conv4d import CENTER_PIVOT, ORIGINAL, SEPARABLE, Conv4dConfig, init_kernel
from .correlation import Hypercorrelation
from .errors import InvalidInputError, ShapeError


def _conv_param_names(cfg: Conv4dConfig) -> List[str]:
    if cfg.variant == CENTER_PIVOT:
        return ["w_support", "w_query", "b_support", "b_query"]
    if cfg.variant == ORIGINAL:
        return ["w", "b"]
    return ["w_support", "w_query", "b_support", "b_query", "gamma", "beta"]


def init_block_params(prefix: str, cfgs: List[Conv4dConfig], rng: np.random.Generator,
                      params: Dict[str, Parameter]) -> None:
    """Create conv + group-norm parameters for one three-stage block."""
    for i, cfg in enumerate(cfgs):
        kern = init_kernel(cfg, rng)
        for name in _conv_param_names(cfg):
            params[f"{prefix}.conv{i}.{name}"] = Parameter(
                getattr(kern, name), f"{prefix}.conv{i}.{name}")
        params[f"{prefix}.norm{i}.gamma"] = Parameter(
            np.ones(cfg.out_channels), f"{prefix}.norm{i}.gamma")
        params[f"{prefix}.norm{i}.beta"] = Parameter(
            np.zeros(cfg.out_channels), f"{prefix}.norm{i}.beta")


def init_encoder_params(arch: ArchSpec, rng: np.random.Generator,
                        variant: str = CENTER_PIVOT) -> Dict[str, Parameter]:
    params: Dict[str, Parameter] = {}
    for p in (1, 2, 3):
        init_block_params(f"squeeze{p}", arch.squeeze_configs(p, variant), rng, params)
    for name in ("mix2", "mix1"):
        init_block_params(name, arch.mix_configs(variant), rng, params)
    return params


def _apply_conv(tape: Optional[Tape], x: Node, prefix: str,
                params: Dict[str, Parameter], cfg: Conv4dConfig) -> Node:
    g = lambda n: params[f"{prefix}.{n}"]
    if cfg.variant == CENTER_PIVOT:
        return L.t_conv4d_center_pivot(tape, x, g("w_support"), g("w_query"),
                                       g("b_support"), g("b_query"), cfg)
    if cfg.variant == ORIGINAL:
        return L.t_conv4d_original(tape, x, g("w"), g("b"), cfg)
    return L.t_conv4d_separable(tape, x, g("w_support"), g("w_query"),
                                g("b_support"), g("b_query"),
                                g("gamma"), g("beta"), cfg)


def run_block(tape: Optional[Tape], x: Node, prefix: str, cfgs: List[Conv4dConfig],
              params: Dict[str, Parameter], norm_groups: int) -> Node:
    for i, cfg in enumerate(cfgs):
        x = _apply_conv(tape, x, f"{prefix}.conv{i}", params, cfg)
        x = L.t_group_norm(tape, x, params[f"{prefix}.norm{i}.gamma"],
                           params[f"{prefix}.norm{i}.beta"], norm_groups)
        x = L.t_relu(tape, x)
    return x


def squeeze_block(tape: Optional[Tape], p: int, corr: Node, params: Dict[str, Parameter],
                  arch: ArchSpec, variant: str = CENTER_PIVOT) -> Node:
    cfgs = arch.squeeze_configs(p, variant)
    if corr.value.shape[0] != cfgs[0].in_channels:
        raise ShapeError(f"level {p} expects {cfgs[0].in_channels} channels, "
                         f"got {corr.value.shape[0]}")
    return run_block(tape, corr, f"squeeze{p}", cfgs, params, arch.norm_groups)


def mix_blocks(tape: Optional[Tape], squeezed: List[Node], params: Dict[str, Parameter],
               arch: ArchSpec, variant: str = CENTER_PIVOT) -> Node:
    if len(squeezed) != 3:
        raise ShapeError("expected one squeezed tensor per pyramid level")
    e1, e2, _ = arch.level_extents()
    cfgs = arch.mix_configs(variant)
    x = L.t_resize_query(tape, squeezed[2], (e2, e2))
    x = L.t_add(tape, x, squeezed[1])
    x = run_block(tape, x, "mix2", cfgs, params, arch.norm_groups)
    x = L.t_resize_query(tape, x, (e1, e1))
    x = L.t_add(tape, x, squeezed[0])
    return run_block(tape, x, "mix1", cfgs, params, arch.norm_groups)


def encode(tape: Optional[Tape], pyramid: List[Hypercorrelation],
           params: Dict[str, Parameter], arch: ArchSpec,
           variant: str = CENTER_PIVOT) -> Node:
    """Full encoder: per-level squeeze, top-down mix, pool support away."""
    if len(pyramid) != 3:
        raise InvalidInputError(f"expected 3 pyramid levels, got {len(pyramid)}")
    squeezed = []
    for p in (1, 2, 3):
        corr = pyramid[p - 1]
        if isinstance(corr, Hypercorrelation):
            corr = L.constant(corr.tensor)
        squeezed.append(squeeze_block(tape, p, corr, params, arch, variant))
    mixed = mix_blocks(tape, squeezed, params, arch, variant)
    return L.t_avg_pool_support(tape, mixed)
