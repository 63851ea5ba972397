"""Export jobs: parse an episode listing, run the backbone, write files.

A job file is line-oriented key=value text naming a query image/mask and
K support image/mask pairs per episode; paths are relative to the job file.
The exporter writes one tensor file per mask and per selected feature map,
then a manifest tying them together, and hands back every array it wrote so
callers can verify the files independently.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .backbones import (FEATURE_SCHEDULES, build_backbone, check_schedule,
                        extract_features, load_image, load_mask)
from .errors import ExportError
from .tensor_format import write_tensor


@dataclass
class EpisodeInputs:
    class_id: int = 1
    query_image: Optional[str] = None
    query_mask: Optional[str] = None
    supports: List[Tuple[str, str]] = field(default_factory=list)

    def validate(self, index: int) -> None:
        if self.query_image is None or self.query_mask is None:
            raise ExportError(f"episode {index}: needs query_image= and query_mask=")
        if not self.supports:
            raise ExportError(f"episode {index}: needs at least one support pair")
        for s, (img, mask) in enumerate(self.supports):
            if img is None or mask is None:
                raise ExportError(f"episode {index} support {s}: needs both "
                                  f"support_image= and support_mask=")


@dataclass(frozen=True)
class ExportJob:
    backbone: str
    episodes: Tuple[EpisodeInputs, ...]
    out_dir: str
    weights: str = "random"
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in FEATURE_SCHEDULES:
            raise ExportError(f"unknown backbone tag {self.backbone!r}")
        if not self.episodes:
            raise ExportError("job lists no episodes")


@dataclass
class ExportResult:
    manifest_path: str
    arrays: Dict[str, np.ndarray]  # relative file name -> array as written


def parse_job_file(path: str, backbone: str, out_dir: str,
                   weights: str = "random", seed: int = 0) -> ExportJob:
    root = os.path.dirname(os.path.abspath(path))
    episodes: List[EpisodeInputs] = []
    pending_support: Optional[List[Optional[str]]] = None

    def close_support():
        nonlocal pending_support
        if pending_support is not None:
            episodes[-1].supports.append((pending_support[0], pending_support[1]))
            pending_support = None

    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ExportError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "episode":
                close_support()
                episodes.append(EpisodeInputs())
                continue
            if not episodes:
                raise ExportError(f"{path}:{ln}: {key}= before any episode=")
            if key == "support":
                close_support()
                pending_support = [None, None]
                continue
            if not value:
                raise ExportError(f"{path}:{ln}: empty value for {key}=")
            if key == "class":
                episodes[-1].class_id = int(value)
            elif key == "query_image":
                episodes[-1].query_image = os.path.join(root, value)
            elif key == "query_mask":
                episodes[-1].query_mask = os.path.join(root, value)
            elif key in ("support_image", "support_mask"):
                if pending_support is None:
                    raise ExportError(f"{path}:{ln}: {key}= before any support=")
                pending_support[0 if key == "support_image" else 1] = \
                    os.path.join(root, value)
            else:
                raise ExportError(f"{path}:{ln}: unknown job key {key!r}")
    close_support()
    for i, ep in enumerate(episodes):
        ep.validate(i)
    return ExportJob(backbone, tuple(episodes), out_dir, weights, seed)


def export_features(job: ExportJob, log=None) -> ExportResult:
    """Run the backbone over every episode and write tensors plus manifest."""
    model = build_backbone(job.backbone, job.weights, job.seed)
    os.makedirs(job.out_dir, exist_ok=True)
    lines = [f"backbone={job.backbone}"]
    written: Dict[str, np.ndarray] = {}

    def dump(rel: str, arr: np.ndarray) -> str:
        write_tensor(arr, os.path.join(job.out_dir, rel))
        written[rel] = arr
        return rel

    def features_for(image_path: str, prefix: str, key: str) -> None:
        feats = extract_features(model, job.backbone, load_image(image_path))
        check_schedule(job.backbone, feats)
        for i, feat in enumerate(feats):
            lines.append(f"{key}=" + dump(f"{prefix}_f{i}.hstn", feat))

    for e, ep in enumerate(job.episodes):
        lines.append(f"episode={e}")
        lines.append(f"class={ep.class_id}")
        gt = load_mask(ep.query_mask, allow_ignore=True)
        lines.append("query_gt=" + dump(f"ep{e}_query_gt.hstn", gt))
        features_for(ep.query_image, f"ep{e}_query", "query_feature")
        for s, (img, mask) in enumerate(ep.supports):
            lines.append(f"support={s}")
            lines.append("support_mask=" +
                         dump(f"ep{e}_s{s}_mask.hstn", load_mask(mask)))
            features_for(img, f"ep{e}_s{s}", "support_feature")
        if log is not None:
            log(f"episode {e}: {len(ep.supports)} support shot(s) written")

    manifest = os.path.join(job.out_dir, "manifest.txt")
    with open(manifest, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return ExportResult(manifest, written)
