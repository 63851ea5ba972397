"""Episodic training: Adam updates, the loss loop, evaluation, checkpoints.

Each step builds a fresh tape per episode in the batch, averages the losses
(scaling each episode's loss by 1/batch before backward so gradients simply
accumulate), then applies one bias-corrected Adam update. Everything is
deterministic given the seed: episodes are visited in order, cyclically.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import layers as L
from .autodiff import Parameter, Tape
from .decoder import VoteConfig, cross_entropy, hard_mask
from .episodes import Episode
from .errors import InvalidInputError, ShapeError, TrainingDivergedError
from .metrics import EvalAccumulator
from .model import Model
from .tensor_io import read_tensor, write_tensor


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamState:
    """First/second moment buffers per parameter plus the step counter."""

    def __init__(self, params: Dict[str, Parameter]):
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.step_count = 0


def adam_step(params: Dict[str, Parameter], state: AdamState,
              cfg: AdamConfig = AdamConfig()) -> None:
    """One bias-corrected Adam update from the accumulated gradients."""
    state.step_count += 1
    t = state.step_count
    for key, p in params.items():
        g = p.grad
        if g.shape != p.value.shape:
            raise ShapeError(f"gradient shape mismatch for {key}")
        state.m[key] = cfg.beta1 * state.m[key] + (1.0 - cfg.beta1) * g
        state.v[key] = cfg.beta2 * state.v[key] + (1.0 - cfg.beta2) * g * g
        mhat = state.m[key] / (1.0 - cfg.beta1 ** t)
        vhat = state.v[key] / (1.0 - cfg.beta2 ** t)
        p.value -= cfg.lr * mhat / (np.sqrt(vhat) + cfg.eps)


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 200
    batch_size: int = 1
    seed: int = 0
    log_every: int = 20
    adam: AdamConfig = AdamConfig()

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidInputError("batch size must be at least 1")


def train_episodes(model: Model, episodes: Sequence[Episode], cfg: TrainConfig,
                   state: Optional[AdamState] = None,
                   log=None) -> List[float]:
    """Optimize on a pool of episodes; returns the per-step mean loss trace."""
    if not episodes:
        raise InvalidInputError("no episodes to train on")
    state = state or AdamState(model.params)
    trace: List[float] = []
    cursor = 0
    for step in range(cfg.max_steps):
        model.zero_grads()
        losses = []
        for _ in range(cfg.batch_size):
            ep = episodes[cursor % len(episodes)]
            cursor += 1
            shot = ep.supports[0]
            tape = Tape()
            pred = model.forward(tape, ep.query_features, shot.features, shot.mask)
            loss = cross_entropy(tape, pred, ep.query_gt)
            scaled = L.t_scale(tape, loss, 1.0 / cfg.batch_size)
            tape.backward(scaled)
            losses.append(float(loss.value))
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(
                f"non-finite loss {mean_loss} at step {step + 1}")
        adam_step(model.params, state, cfg.adam)
        trace.append(mean_loss)
        if log is not None and (step + 1) % cfg.log_every == 0:
            log(f"step {step + 1:5d}  loss {mean_loss:.6f}")
    return trace


def evaluate(model: Model, episodes: Sequence[Episode],
             vote: VoteConfig = VoteConfig(),
             acc: Optional[EvalAccumulator] = None,
             from_predictions: bool = False) -> EvalAccumulator:
    """Score episodes into an accumulator, voting across the K supports."""
    acc = acc if acc is not None else EvalAccumulator()
    for ep in episodes:
        if from_predictions:
            if ep.prediction is None:
                raise InvalidInputError("episode has no stored prediction")
            mask = ep.prediction
        else:
            mask = model.predict(ep.query_features,
                                 [(s.features, s.mask) for s in ep.supports], vote)
        acc.accumulate(mask, ep.query_gt, ep.class_id)
    return acc


def save_checkpoint(out_dir: str, model: Model, state: AdamState) -> str:
    """Write parameter and Adam-moment tensors plus a listing file."""
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"arch={model.arch.name}", f"variant={model.variant}",
             f"step={state.step_count}"]
    for key, p in model.params.items():
        write_tensor(p.value, os.path.join(out_dir, f"{key}.hstn"))
        write_tensor(state.m[key], os.path.join(out_dir, f"{key}.adam_m.hstn"))
        write_tensor(state.v[key], os.path.join(out_dir, f"{key}.adam_v.hstn"))
        shape = ",".join(str(d) for d in p.value.shape)
        lines.append(f"param={key} shape={shape}")
    path = os.path.join(out_dir, "checkpoint.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def load_checkpoint(ckpt_dir: str, model: Model) -> AdamState:
    """Restore parameters and optimizer state saved by save_checkpoint.

    Accepts the checkpoint directory or the listing file inside it."""
    if os.path.isfile(ckpt_dir):
        ckpt_dir = os.path.dirname(os.path.abspath(ckpt_dir))
    listing = os.path.join(ckpt_dir, "checkpoint.txt")
    meta = {}
    names = []
    with open(listing) as fh:
        for raw in fh:
            key, _, value = raw.strip().partition("=")
            if key == "param":
                names.append(value.split(" ")[0])
            else:
                meta[key] = value
    if meta.get("arch") != model.arch.name:
        raise InvalidInputError(
            f"checkpoint was trained with arch {meta.get('arch')!r}, "
            f"model uses {model.arch.name!r}")
    if set(names) != set(model.params):
        raise InvalidInputError("checkpoint parameter set does not match the model")
    state = AdamState(model.params)
    state.step_count = int(meta.get("step", 0))
    for key in names:
        value = read_tensor(os.path.join(ckpt_dir, f"{key}.hstn"))
        if value.shape != model.params[key].value.shape:
            raise ShapeError(f"checkpoint shape mismatch for {key}")
        model.params[key].value = value
        state.m[key] = read_tensor(os.path.join(ckpt_dir, f"{key}.adam_m.hstn"))
        state.v[key] = read_tensor(os.path.join(ckpt_dir, f"{key}.adam_v.hstn"))
    return state
