"""Backbone construction, layer selection, and input preprocessing.

Feature taps per backbone tag:

- ResNet50/101: the output of every residual block in the three deepest
  stages, taken after the shortcut addition but before the block's final
  ReLU. At 400x400 input this yields 4 maps at (512, 50, 50), then 6 or 23
  at (1024, 25, 25), then 3 at (2048, 13, 13).
- VGG16: the activation after each convolution of the last two
  convolutional stages (3 maps at (512, 50, 50), 3 at (512, 25, 25)) plus
  the final pooled map at (512, 12, 12).

Weights come from a state-dict file, from the published pretrained
checkpoints when downloadable, or -- for deterministic testing without any
network -- from seeded random initialization.
"""

from __future__ import annotations

import os
from typing import List

import numpy as np
import torch
from PIL import Image
from torch import nn
from torchvision import models

from .errors import ExportError

IMAGE_SIZE = 400
NORMALIZE_MEAN = (0.485, 0.456, 0.406)
NORMALIZE_STD = (0.229, 0.224, 0.225)

FEATURE_SCHEDULES = {
    "vgg16": tuple([(512, 50, 50)] * 3 + [(512, 25, 25)] * 3 + [(512, 12, 12)]),
    "resnet50": tuple([(512, 50, 50)] * 4 + [(1024, 25, 25)] * 6
                      + [(2048, 13, 13)] * 3),
    "resnet101": tuple([(512, 50, 50)] * 4 + [(1024, 25, 25)] * 23
                       + [(2048, 13, 13)] * 3),
}

_BUILDERS = {"vgg16": models.vgg16, "resnet50": models.resnet50,
             "resnet101": models.resnet101}


def build_backbone(tag: str, weights: str = "random", seed: int = 0) -> nn.Module:
    """Construct the tagged backbone in evaluation mode.

    ``weights`` is ``random`` (seeded initialization, fully offline),
    ``pretrained`` (published checkpoint, needs download access), or a path
    to a saved state dict.
    """
    if tag not in _BUILDERS:
        raise ExportError(f"unknown backbone tag {tag!r}; "
                          f"known: {sorted(_BUILDERS)}")
    if weights == "random":
        torch.manual_seed(seed)
        model = _BUILDERS[tag](weights=None)
    elif weights == "pretrained":
        try:
            model = _BUILDERS[tag](weights="IMAGENET1K_V1")
        except Exception as exc:
            raise ExportError(f"pretrained weights unavailable: {exc}") from exc
    else:
        if not os.path.isfile(weights):
            raise ExportError(f"weights file not found: {weights}")
        model = _BUILDERS[tag](weights=None)
        model.load_state_dict(torch.load(weights, map_location="cpu"))
    model.eval()
    return model


def _resnet_taps(model: nn.Module, x: torch.Tensor) -> List[torch.Tensor]:
    x = model.maxpool(model.relu(model.bn1(model.conv1(x))))
    x = model.layer1(x)
    taps = []
    for stage in (model.layer2, model.layer3, model.layer4):
        for block in stage:
            shortcut = x if block.downsample is None else block.downsample(x)
            out = block.relu(block.bn1(block.conv1(x)))
            out = block.relu(block.bn2(block.conv2(out)))
            out = block.bn3(block.conv3(out)) + shortcut
            taps.append(out)
            x = block.relu(out)
    return taps


def _vgg_taps(model: nn.Module, x: torch.Tensor) -> List[torch.Tensor]:
    layers = list(model.features)
    pools = [i for i, m in enumerate(layers) if isinstance(m, nn.MaxPool2d)]
    take = {i for i in range(pools[-3] + 1, pools[-1])
            if isinstance(layers[i], nn.ReLU)}
    take.add(pools[-1])
    taps = []
    for i, layer in enumerate(layers):
        x = layer(x)
        if i in take:
            taps.append(x)
    return taps


def extract_features(model: nn.Module, tag: str,
                     image: torch.Tensor) -> List[np.ndarray]:
    """Run the tagged backbone over one (1, 3, H, W) batch; returns the
    selected feature maps shallow-to-deep as real32 arrays."""
    with torch.no_grad():
        taps = _vgg_taps(model, image) if tag == "vgg16" else _resnet_taps(model, image)
    return [np.array(t.squeeze(0).numpy(), dtype=np.float32) for t in taps]


def check_schedule(tag: str, arrays: List[np.ndarray]) -> None:
    """The exported shapes must match the tag's embedded schedule exactly."""
    expected = FEATURE_SCHEDULES[tag]
    got = tuple(a.shape for a in arrays)
    if got != expected:
        raise ExportError(f"{tag}: extracted shapes {got} do not match the "
                          f"expected schedule {expected}")


def load_image(path: str) -> torch.Tensor:
    """Image file to a normalized (1, 3, 400, 400) batch."""
    try:
        img = Image.open(path).convert("RGB")
    except OSError as exc:
        raise ExportError(f"unreadable image {path}: {exc}") from exc
    img = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - NORMALIZE_MEAN) / NORMALIZE_STD
    return torch.from_numpy(arr.astype(np.float32).transpose(2, 0, 1))[None]


def load_mask(path: str, allow_ignore: bool = False) -> np.ndarray:
    """Mask file to a (400, 400) array: 0 stays background, 255 becomes the
    ignore label when allowed (else foreground), anything else foreground."""
    try:
        img = Image.open(path).convert("L")
    except OSError as exc:
        raise ExportError(f"unreadable mask {path}: {exc}") from exc
    img = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.NEAREST)
    v = np.asarray(img, dtype=np.float64)
    out = (v > 0).astype(np.float64)
    if allow_ignore:
        out[v == 255] = 255.0
    return out
