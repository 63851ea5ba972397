"""Episode construction and interchange: synthetic tasks plus manifest I/O.

A synthetic episode plants a shared per-layer feature pattern under random
rectangular foreground masks: query and support positions covered by the
mask carry one pattern vector, everything else another, plus optional noise.
Correlation between query and masked support then peaks exactly where both
lie on the foreground, which makes segmentation learnable from correlation
alone and lets a small model overfit a single episode to perfection.

Episodes travel between processes as a line-oriented manifest of
key=value pairs referencing tensor files (one file per feature map or mask),
so another toolchain can produce them with no shared code. Paths in a
manifest are relative to the manifest's own directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .arch import ArchSpec, get_arch
from .correlation import FeatureSet
from .errors import InvalidInputError, ShapeError
from .ops import resize_last2
from .tensor_io import read_tensor, write_tensor


@dataclass
class SupportShot:
    features: FeatureSet
    mask: np.ndarray  # (H, W) binary at image resolution


@dataclass
class Episode:
    class_id: int
    arch_name: str
    query_features: FeatureSet
    query_gt: np.ndarray  # (H, W) values in {0, 1} plus optional ignore label
    supports: List[SupportShot]
    prediction: Optional[np.ndarray] = None  # optional precomputed mask

    def __post_init__(self):
        if not self.supports:
            raise InvalidInputError("an episode needs at least one support shot")


@dataclass(frozen=True)
class SyntheticEpisodeSpec:
    seed: int = 0
    arch_name: str = "toy"
    shots: int = 1
    noise: float = 0.05
    class_id: int = 1


def _random_rect_mask(rng: np.random.Generator, base: int) -> np.ndarray:
    """Rectangle on the base grid, aligned to even cells so coarser levels
    see block-constant values."""
    def pick():
        size = 2 * int(rng.integers(1, max(2, base // 4) + 1))
        start = 2 * int(rng.integers(0, (base - size) // 2 + 1))
        return start, size
    r0, rh = pick()
    c0, cw = pick()
    m = np.zeros((base, base))
    m[r0:r0 + rh, c0:c0 + cw] = 1.0
    return m


def _features_for_mask(base_mask: np.ndarray, arch: ArchSpec,
                       patterns: List[Tuple[np.ndarray, np.ndarray]],
                       noise: float, rng: np.random.Generator) -> FeatureSet:
    """Blend the foreground/background pattern vectors by mask coverage."""
    entries = []
    layer = 0
    for p, group in enumerate(arch.groups):
        extent = arch.levels[p].extent
        cov = resize_last2(base_mask[None], (extent, extent))[0]
        for i in group:
            c = arch.feature_shapes[i][0]
            fg, bg = patterns[i]
            feat = fg[:, None, None] * cov[None] + bg[:, None, None] * (1.0 - cov[None])
            if noise > 0:
                feat = feat + noise * rng.normal(size=(c, extent, extent))
            entries.append((layer + 1, feat))
            layer += 1
    return FeatureSet(entries, arch.groups)


def generate_synthetic_episode(spec: SyntheticEpisodeSpec) -> Episode:
    """Deterministic episode with a planted correlation structure."""
    arch = get_arch(spec.arch_name)
    rng = np.random.default_rng(spec.seed)
    base = arch.levels[0].extent
    scale = arch.image_size // base

    def unit(c):
        v = rng.normal(size=c)
        return v / np.linalg.norm(v)

    def pattern_pair(c):
        fg = unit(c)
        bg = rng.normal(size=c)
        bg -= (bg @ fg) * fg  # orthogonal pair: off-class correlation clamps to 0
        while np.linalg.norm(bg) < 1e-6:
            bg = rng.normal(size=c)
            bg -= (bg @ fg) * fg
        return fg, bg / np.linalg.norm(bg)

    patterns = [pattern_pair(shape[0]) for shape in arch.feature_shapes]

    q_base = _random_rect_mask(rng, base)
    query_gt = np.kron(q_base, np.ones((scale, scale)))
    query_features = _features_for_mask(q_base, arch, patterns, spec.noise, rng)

    supports = []
    for _ in range(spec.shots):
        s_base = _random_rect_mask(rng, base)
        mask = np.kron(s_base, np.ones((scale, scale)))
        supports.append(SupportShot(
            _features_for_mask(s_base, arch, patterns, spec.noise, rng), mask))
    return Episode(spec.class_id, spec.arch_name, query_features, query_gt, supports)


def validate_feature_shape(arr: np.ndarray, arch: ArchSpec, layer_pos: int,
                           path: str) -> None:
    expected = arch.feature_shapes[layer_pos]
    if arr.shape != expected:
        raise InvalidInputError(
            f"{path}: layer {layer_pos + 1} of backbone {arch.name!r} must have "
            f"shape {expected}, found {arr.shape}")


def _feature_set_from_paths(paths: List[str], root: str, arch: ArchSpec) -> FeatureSet:
    if len(paths) != len(arch.feature_shapes):
        raise InvalidInputError(
            f"backbone {arch.name!r} needs {len(arch.feature_shapes)} feature files, "
            f"manifest lists {len(paths)}")
    entries = []
    for i, rel in enumerate(paths):
        arr = read_tensor(os.path.join(root, rel))
        validate_feature_shape(arr, arch, i, rel)
        entries.append((i + 1, arr))
    return FeatureSet(entries, arch.groups)


def write_manifest(out_dir: str, episodes: Sequence[Episode], arch_name: str) -> str:
    """Serialize episodes under ``out_dir``; returns the manifest path."""
    arch = get_arch(arch_name)
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"backbone={arch_name}"]

    def dump(rel: str, arr: np.ndarray) -> str:
        write_tensor(np.asarray(arr, dtype=np.float64), os.path.join(out_dir, rel))
        return rel

    for e, ep in enumerate(episodes):
        if ep.arch_name != arch_name:
            raise InvalidInputError("all episodes in one manifest share a backbone")
        lines.append(f"episode={e}")
        lines.append(f"class={ep.class_id}")
        lines.append("query_gt=" + dump(f"ep{e}_query_gt.hstn", ep.query_gt))
        for i, (_, feat) in enumerate(ep.query_features.entries):
            lines.append("query_feature=" + dump(f"ep{e}_query_f{i}.hstn", feat))
        if ep.prediction is not None:
            lines.append("pred=" + dump(f"ep{e}_pred.hstn", ep.prediction))
        for s, shot in enumerate(ep.supports):
            lines.append(f"support={s}")
            lines.append("support_mask=" + dump(f"ep{e}_s{s}_mask.hstn", shot.mask))
            for i, (_, feat) in enumerate(shot.features.entries):
                lines.append("support_feature=" + dump(f"ep{e}_s{s}_f{i}.hstn", feat))
    path = os.path.join(out_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_manifest(path: str) -> Tuple[str, List[Episode]]:
    """Parse and validate a manifest; returns (backbone tag, episodes)."""
    root = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        pairs = []
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidInputError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            pairs.append((key.strip(), value.strip()))

    if not pairs or pairs[0][0] != "backbone":
        raise InvalidInputError(f"{path}: first entry must be backbone=<tag>")
    arch = get_arch(pairs[0][1])

    episodes: List[Episode] = []
    cur: Optional[Dict] = None
    shot: Optional[Dict] = None

    def close_shot():
        nonlocal shot
        if shot is not None:
            cur["supports"].append(SupportShot(
                _feature_set_from_paths(shot["features"], root, arch),
                _load_mask(shot["mask"], root, arch)))
            shot = None

    def close_episode():
        nonlocal cur
        close_shot()
        if cur is not None:
            pred = None
            if cur["pred"] is not None:
                pred = read_tensor(os.path.join(root, cur["pred"]))
            episodes.append(Episode(
                cur["class"], arch.name,
                _feature_set_from_paths(cur["qfeat"], root, arch),
                _load_mask(cur["qgt"], root, arch, allow_ignore=True),
                cur["supports"], prediction=pred))
            cur = None

    for key, value in pairs[1:]:
        if key == "episode":
            close_episode()
            cur = {"class": 0, "qgt": None, "qfeat": [], "supports": [], "pred": None}
        elif cur is None:
            raise InvalidInputError(f"{path}: {key}= before any episode=")
        elif key == "class":
            cur["class"] = int(value)
        elif key == "query_gt":
            cur["qgt"] = value
        elif key == "query_feature":
            cur["qfeat"].append(value)
        elif key == "pred":
            cur["pred"] = value
        elif key == "support":
            close_shot()
            shot = {"mask": None, "features": []}
        elif key in ("support_mask", "support_feature"):
            if shot is None:
                raise InvalidInputError(f"{path}: {key}= before any support=")
            if key == "support_mask":
                shot["mask"] = value
            else:
                shot["features"].append(value)
        else:
            raise InvalidInputError(f"{path}: unknown manifest key {key!r}")
    close_episode()
    if not episodes:
        raise InvalidInputError(f"{path}: no episodes listed")
    return arch.name, episodes


def _load_mask(rel: str, root: str, arch: ArchSpec, allow_ignore: bool = False) -> np.ndarray:
    if rel is None:
        raise InvalidInputError("episode is missing a mask file entry")
    arr = read_tensor(os.path.join(root, rel))
    size = (arch.image_size, arch.image_size)
    if arr.shape != size:
        raise InvalidInputError(f"{rel}: mask must have shape {size}, found {arr.shape}")
    allowed = (0.0, 1.0, 255.0) if allow_ignore else (0.0, 1.0)
    if not np.isin(arr, allowed).all():
        raise InvalidInputError(f"{rel}: mask values must be in {allowed}")
    return arr
