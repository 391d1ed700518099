"""Training and evaluation harness: SGD with step decay, checkpoints, metrics."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import SGD, Tape, backward, no_grad
from .checkpoint import TrainState, save_checkpoint
from .data.io import atomic_write_text, load_image, resize_image
from .data.sequence import InputNormalization, Sample
from .errors import DataError, NumericError, ParameterError
from .losses import LossWeights, total_loss
from .metrics import MetricsReport, aggregate, report
from .model import ModelConfig, SkeletonGraph, sample_inputs

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr0: float = 0.01
    decay_factor: float = 0.2
    decay_every: int = 200
    epochs: int = 450
    batch_size: int = 128
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    model: ModelConfig = field(default_factory=ModelConfig)
    momentum: float = 0.0
    clip_norm: float | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0
    eval_every: int = 0
    fps: float = 30.0
    cos_pairs: str = "index"

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.lr0 < 0:
            raise ParameterError(f"lr0 must be non-negative, got {self.lr0}")
        if not 0 < self.decay_factor <= 1:
            raise ParameterError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ParameterError("decay_every must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.cos_pairs not in ("index", "bones"):
            raise ParameterError("cos_pairs must be 'index' or 'bones'")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(NumericError):
    pass


def lr_at(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise ParameterError("epoch must be >= 0")
    return config.lr0 * config.decay_factor ** (epoch // config.decay_every)


def _sample_key(s: Sample) -> bytes:
    h = hashlib.sha256()
    for arr in (s.obs_graph.vertices, s.target, s.target_path):
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    h.update(f"{s.source}:{s.start}".encode())
    return h.digest()


def canonical_order(samples: list[Sample]) -> list[Sample]:
    """Content-defined order, so shuffling depends on the seed only."""
    return sorted(samples, key=_sample_key)


class ImageLoader:
    """Loads, resizes and stacks the observed frames a sample needs."""

    def __init__(self, config: ModelConfig, cache_size: int = 4096):
        self.config = config
        self.cache: dict[str, np.ndarray] = {}
        self.cache_size = cache_size

    def _one(self, ref) -> np.ndarray:
        if isinstance(ref, np.ndarray):
            img = ref
        else:
            key = str(ref)
            img = self.cache.get(key)
            if img is None:
                img = load_image(key)
                if len(self.cache) < self.cache_size:
                    self.cache[key] = img
        if min(img.shape[1:]) < 64:
            raise DataError(f"image {getattr(ref, 'shape', ref)} smaller than 64x64")
        return resize_image(img, self.config.image_size)

    def __call__(self, sample: Sample) -> np.ndarray:
        if not sample.images or any(i is None for i in sample.images):
            raise DataError(f"sample {sample.source}@{sample.start} has no images but vision mode is on")
        if self.config.vision_mode == "last_image":
            return self._one(sample.images[-1])
        return np.concatenate([self._one(ref) for ref in sample.images], axis=0)


def _targets(samples: list[Sample], norm: InputNormalization, dtype) -> np.ndarray:
    return np.stack([norm.model_target(s) for s in samples]).astype(dtype)


def _pairs(config: TrainConfig, sample: Sample):
    if config.cos_pairs == "bones":
        return np.asarray(sample.obs_graph.bones)
    return None


def batch_loss(model: SkeletonGraph, batch: list[Sample], norm: InputNormalization, config: TrainConfig,
               image_loader=None, train: bool = True):
    v, a, img = sample_inputs(model, batch, norm, image_loader)
    target = _targets(batch, norm, model.dtype)
    out, _ = model.forward(v, a, img, train=train)
    return total_loss(target, out, config.loss_weights, center_joint=batch[0].path_joint,
                      pairs=_pairs(config, batch[0]))


def _write_history(path: Path, history: list[dict]) -> None:
    atomic_write_text(path, "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history))


def train(config: TrainConfig, samples: list[Sample], eval_samples: list[Sample] | None = None,
          state: TrainState | None = None, image_loader=None,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[TrainState, list[dict]]:
    """Fit the model; returns the final state and one history record per epoch."""
    if not samples:
        raise DataError("no samples to train on")
    samples = canonical_order(samples)
    if state is None:
        model = SkeletonGraph(config.model, seed=config.seed)
        state = TrainState(model=model, normalization=InputNormalization.fit(samples))
    model, norm = state.model, state.normalization
    # the output location is not part of the trained state; keeps checkpoints relocatable
    state.train_config = {k: v for k, v in config.to_dict().items() if k != "checkpoint_dir"}
    state.skeleton = {"bones": [list(b) for b in samples[0].obs_graph.bones],
                      "path_joint": samples[0].path_joint, "fps": config.fps}
    if model.config.vision_mode != "none" and image_loader is None:
        image_loader = ImageLoader(model.config)

    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    optimizer = SGD(model.params, momentum=config.momentum, clip_norm=config.clip_norm)
    rng = np.random.default_rng([config.seed, 1])
    history: list[dict] = []
    first_epoch = state.epoch

    for epoch in range(first_epoch, first_epoch + config.epochs):
        lr = lr_at(epoch, config)
        snapshot = {k: p.data.copy() for k, p in model.params.items()}
        snap_buffers = {k: {s: v.copy() for s, v in b.items()} for k, b in model.buffers.items()}
        order = rng.permutation(len(samples))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            optimizer.zero_grad()
            try:
                with Tape() as tape:
                    loss = batch_loss(model, batch, norm, config, image_loader, train=True)
                    backward(loss, tape)
                tape.clear()
                optimizer.step(lr)
                if not all(np.all(np.isfinite(p.data)) for p in model.params.values()):
                    raise NumericError("parameters became non-finite after the SGD step")
            except NumericError as exc:
                for k, p in model.params.items():
                    p.data = snapshot[k]
                model.buffers.update(snap_buffers)
                state.epoch = epoch
                msg = f"epoch {epoch} batch {b}: {exc}"
                if ckpt_dir is not None:
                    path = save_checkpoint(state, ckpt_dir / "last_good.ckpt")
                    msg += f"; last good state kept in {path}"
                raise TrainingDiverged(msg) from None
            total += float(loss.data) * len(batch)
            count += len(batch)
        state.epoch = epoch + 1
        record = {"epoch": epoch, "lr": lr, "loss": total / count}
        if eval_samples and config.eval_every and (epoch + 1) % config.eval_every == 0:
            rep = evaluate(state, eval_samples, config.fps, image_loader)
            record["eval"] = {"ade": rep.ade, "fde": rep.fde, "stb_sigma": rep.stb_sigma}
        history.append(record)
        log.info("epoch %d lr %.3g loss %.6g", epoch, lr, record["loss"])
        if on_epoch is not None:
            on_epoch(record)
        if ckpt_dir is not None:
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(state, ckpt_dir / f"epoch_{epoch + 1:04d}.ckpt")
            _write_history(ckpt_dir / "history.jsonl", history)

    if ckpt_dir is not None:
        save_checkpoint(state, ckpt_dir / "final.ckpt")
        _write_history(ckpt_dir / "history.jsonl", history)
    return state, history


def predict_batch(state: TrainState, samples: list[Sample], image_loader=None,
                  batch_size: int = 64) -> np.ndarray:
    """Absolute predicted poses (N, T_pred, J, 3) in eval mode."""
    model = state.model
    if model.config.vision_mode != "none" and image_loader is None:
        image_loader = ImageLoader(model.config)
    outs = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            batch = samples[start : start + batch_size]
            v, a, img = sample_inputs(model, batch, state.normalization, image_loader)
            out, _ = model.forward(v, a, img, train=False)
            outs.append(out.data.astype(np.float64))
    return np.concatenate(outs) + state.normalization.offset3d


def evaluate(state: TrainState, samples: list[Sample], fps: float, image_loader=None) -> MetricsReport:
    """Per-sample metrics on re-attached absolute poses, averaged element-wise."""
    if not samples:
        raise DataError("no samples to evaluate")
    preds = predict_batch(state, samples, image_loader)
    reports = [report(s.absolute_target, p, fps, s.path_joint) for s, p in zip(samples, preds)]
    return aggregate(reports, fps)


def evaluate_predictions(pairs: list[tuple[np.ndarray, np.ndarray]], fps: float, path_joint: int) -> MetricsReport:
    """Aggregate metrics for (ground truth, prediction) absolute pose pairs."""
    if not pairs:
        raise DataError("no predictions to evaluate")
    return aggregate([report(gt, pr, fps, path_joint) for gt, pr in pairs], fps)
