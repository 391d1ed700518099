"""The skeleton-graph forecasting network.

Data flow for a batch of N windows (all arrays carry the batch axis):

    V (N,T,J,2) --input embed--> (N,T,J,F)
    A (T,J,J) --adjacency CNN--> A_learned (T,J,J)
    SPGCNN x n_spgcnn: aggregate with A_learned, 1x1 feature conv,
                       temporal conv with T as channels
    [vision features (N,C,J,F)] concatenated on the channel axis
    TXCNN: (T+C) -> T_pred channels over the J x F grid -> (N,T_pred,J,3)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import (
    DiffArray,
    adaptive_avg_pool2d,
    batch_norm,
    concat,
    conv2d,
    graph_aggregate,
    no_grad,
    prelu,
)
from .autodiff.nn import kaiming_uniform
from .data.sequence import InputNormalization, Sample, SpatioTemporalGraph, build_adjacency
from .errors import DimensionError, NumericError, ParameterError

VISION_MODES = ("none", "last_image", "sequence")
VISION_CHANNELS = (6, 9, 12, 15, 18, 21)
VISION_STRIDES = (1, 2, 2, 2, 2, 2)
MIN_IMAGE_SIZE = 64
PRELU_INIT = 0.25


@dataclass
class ModelConfig:
    obs_steps: int = 30
    pred_steps: int = 60
    joints: int = 21
    features: int = 3
    n_spgcnn: int = 1
    n_txcnn: int = 11
    vision_mode: str = "none"
    learn_adjacency: bool = True
    adjacency_norm: bool = False
    batch_norm: bool = True
    residual: bool = True
    image_size: int = 128
    dtype: str = "float32"

    def __post_init__(self):
        if self.vision_mode == "last":
            self.vision_mode = "last_image"
        if self.vision_mode not in VISION_MODES:
            raise ParameterError(f"vision_mode must be one of {VISION_MODES}, got {self.vision_mode!r}")
        if self.obs_steps < 1 or self.pred_steps < 1:
            raise ParameterError("obs_steps and pred_steps must be >= 1")
        if self.joints < 2:
            raise ParameterError("joints must be >= 2")
        if self.n_spgcnn < 1:
            raise ParameterError("n_spgcnn must be >= 1")
        if self.n_txcnn < 3:
            raise ParameterError("n_txcnn must be >= 3 (input, middle and output layers)")
        if self.features != 3:
            raise ParameterError("the time-extrapolator emits [x, y, z], so features must be 3")
        if self.vision_mode != "none" and self.image_size < MIN_IMAGE_SIZE:
            raise ParameterError(f"image_size must be >= {MIN_IMAGE_SIZE}")
        if self.dtype not in ("float32", "float64"):
            raise ParameterError("dtype must be float32 or float64")

    @property
    def vision_channels(self) -> int:
        return 0 if self.vision_mode == "none" else VISION_CHANNELS[-1]

    @property
    def image_channels(self) -> int:
        return 3 * self.obs_steps if self.vision_mode == "sequence" else 3

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class PosePrediction:
    """Predicted absolute poses (T_pred, J, 3) and torso path (T_pred, 3), meters."""

    poses: np.ndarray
    path: np.ndarray
    adjacency: np.ndarray | None = field(default=None, repr=False)


class SkeletonGraph:
    """Parameters, batch-norm statistics and forward pass of the network."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, DiffArray] = {}
        self.buffers: dict[str, dict[str, np.ndarray]] = {}
        self._rng = np.random.default_rng(seed)
        self._build()
        del self._rng

    # -- construction --------------------------------------------------------
    def _conv(self, name: str, c_out: int, c_in: int, k: int = 3) -> None:
        self.params[f"{name}.weight"] = DiffArray(
            kaiming_uniform(self._rng, (c_out, c_in, k, k), self.dtype), requires_grad=True, name=f"{name}.weight")
        bound = 1.0 / np.sqrt(c_in * k * k)
        self.params[f"{name}.bias"] = DiffArray(
            self._rng.uniform(-bound, bound, size=c_out).astype(self.dtype), requires_grad=True, name=f"{name}.bias")

    def _bn(self, name: str, channels: int) -> None:
        if not self.config.batch_norm:
            return
        self.params[f"{name}.gamma"] = DiffArray(np.ones(channels, self.dtype), requires_grad=True, name=f"{name}.gamma")
        self.params[f"{name}.beta"] = DiffArray(np.zeros(channels, self.dtype), requires_grad=True, name=f"{name}.beta")
        self.buffers[name] = {"mean": np.zeros(channels, self.dtype), "var": np.ones(channels, self.dtype)}

    def _prelu(self, name: str) -> None:
        self.params[f"{name}.slope"] = DiffArray(np.full(1, PRELU_INIT, self.dtype), requires_grad=True,
                                                 name=f"{name}.slope")

    def _build(self) -> None:
        cfg = self.config
        t, f, tp = cfg.obs_steps, cfg.features, cfg.pred_steps
        self._conv("input_embed", f, 2)
        if cfg.learn_adjacency:
            self._conv("adjacency.conv1", t, t)
            self._bn("adjacency.bn1", t)
            self._prelu("adjacency.prelu1")
            self._conv("adjacency.conv2", t, t)
            self._bn("adjacency.bn2", t)
        for i in range(cfg.n_spgcnn):
            p = f"spgcnn.{i}"
            self._conv(f"{p}.feature", f, f, k=1)
            self._bn(f"{p}.bn_spatial", f)
            self._prelu(f"{p}.prelu_spatial")
            self._conv(f"{p}.temporal", t, t)
            self._bn(f"{p}.bn_temporal", t)
            self._prelu(f"{p}.prelu_temporal")
        if cfg.vision_mode != "none":
            c_in = cfg.image_channels
            for k, c_out in enumerate(VISION_CHANNELS):
                self._conv(f"vision.{k}", c_out, c_in)
                self._bn(f"vision.{k}.bn", c_out)
                self._prelu(f"vision.{k}.prelu")
                c_in = c_out
        c_in = t + cfg.vision_channels
        for k in range(cfg.n_txcnn):
            p = f"txcnn.{k}"
            self._conv(p, tp, c_in)
            c_in = tp
            if k < cfg.n_txcnn - 1:
                self._bn(f"{p}.bn", tp)
                self._prelu(f"{p}.prelu")

    # -- building blocks ---------------------------------------------------------
    def _norm_act(self, x: DiffArray, name: str, train: bool, act: str | None = None) -> DiffArray:
        if self.config.batch_norm:
            x = batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                           train=train, running=self.buffers[name])
        if act is not None:
            x = prelu(x, self.params[f"{act}.slope"])
        return x

    def _apply_conv(self, x: DiffArray, name: str, padding: int = 1, stride: int = 1) -> DiffArray:
        return conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], padding=padding, stride=stride)

    def input_embed(self, vertices: DiffArray) -> DiffArray:
        """(N,T,J,2) -> (N,T,J,F) via a 3x3 conv over the T x J grid."""
        x = vertices.transpose(0, 3, 1, 2)
        x = self._apply_conv(x, "input_embed")
        return x.transpose(0, 2, 3, 1)

    def learn_adjacency(self, adjacency: DiffArray, train: bool = False) -> DiffArray:
        """(N,T,J,J) -> (N,T,J,J): two T->T convs over the J x J grid."""
        x = self._apply_conv(adjacency, "adjacency.conv1")
        x = self._norm_act(x, "adjacency.bn1", train, "adjacency.prelu1")
        x = self._apply_conv(x, "adjacency.conv2")
        return self._norm_act(x, "adjacency.bn2", train)

    def spgcnn_layer(self, x: DiffArray, adjacency: DiffArray, index: int, train: bool = False) -> DiffArray:
        """(N,T,J,F) -> (N,T,J,F): spatial aggregation + feature conv, then temporal conv."""
        if not np.all(np.isfinite(adjacency.data)):
            raise NumericError(f"non-finite adjacency entering SPGCNN layer {index}")
        p = f"spgcnn.{index}"
        s = graph_aggregate(adjacency, x).transpose(0, 3, 1, 2)  # (N,F,T,J)
        s = self._apply_conv(s, f"{p}.feature", padding=0)
        s = self._norm_act(s, f"{p}.bn_spatial", train, f"{p}.prelu_spatial")
        s = s.transpose(0, 2, 3, 1)  # (N,T,J,F)
        out = self._apply_conv(s, f"{p}.temporal")
        out = self._norm_act(out, f"{p}.bn_temporal", train, f"{p}.prelu_temporal")
        if self.config.residual and index > 0:
            out = out + x
        return out

    def extract_vision(self, images: DiffArray, train: bool = False) -> DiffArray:
        """(N, 3 or 3T, H, W) -> (N, C, J, F)."""
        cfg = self.config
        if images.ndim != 4 or images.shape[1] != cfg.image_channels:
            raise DimensionError(f"vision input must be (N, {cfg.image_channels}, H, W), got {images.shape}")
        if min(images.shape[2:]) < MIN_IMAGE_SIZE:
            raise DimensionError(f"images must be at least {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}, got {images.shape[2:]}")
        x = images
        for k, stride in enumerate(VISION_STRIDES):
            x = self._apply_conv(x, f"vision.{k}", padding=1, stride=stride)
            x = self._norm_act(x, f"vision.{k}.bn", train, f"vision.{k}.prelu")
        return adaptive_avg_pool2d(x, (cfg.joints, cfg.features))

    def txcnn_stack(self, fused: DiffArray, train: bool = False) -> DiffArray:
        """(N, T+C, J, F) -> (N, T_pred, J, F)."""
        n = self.config.n_txcnn
        x = self._apply_conv(fused, "txcnn.0")
        x = self._norm_act(x, "txcnn.0.bn", train, "txcnn.0.prelu")
        for k in range(1, n - 1):
            y = self._apply_conv(x, f"txcnn.{k}")
            y = self._norm_act(y, f"txcnn.{k}.bn", train, f"txcnn.{k}.prelu")
            x = x + y if self.config.residual else y
        return self._apply_conv(x, f"txcnn.{n - 1}")

    # -- full pass ------------------------------------------------------------------
    def _as_input(self, x) -> DiffArray:
        if isinstance(x, DiffArray):
            return x if x.dtype == self.dtype else DiffArray(x.data, dtype=self.dtype)
        return DiffArray(np.asarray(x), dtype=self.dtype)

    def base_adjacency(self, bones) -> np.ndarray:
        a = build_adjacency(bones, self.config.joints, self.config.obs_steps)
        if self.config.adjacency_norm:
            d = 1.0 / np.sqrt(a.sum(axis=-1))
            a = a * d[..., :, None] * d[..., None, :]
        return a

    def forward(self, vertices, adjacency, images=None, train: bool = False) -> tuple[DiffArray, DiffArray]:
        """Run the network.

        vertices: (N,T,J,2) normalized 2D joints. adjacency: (T,J,J), the
        skeleton adjacency shared by the batch. images: (N, 3 or 3T, S, S)
        when vision is enabled, ignored otherwise. Returns the prediction
        (N,T_pred,J,3) and the adjacency actually used, (T,J,J).
        """
        cfg = self.config
        v = self._as_input(vertices)
        a = self._as_input(adjacency)
        n = v.shape[0]
        if v.shape[1:] != (cfg.obs_steps, cfg.joints, 2):
            raise DimensionError(f"vertices must be (N, {cfg.obs_steps}, {cfg.joints}, 2), got {v.shape}")
        if a.shape != (cfg.obs_steps, cfg.joints, cfg.joints):
            raise DimensionError(f"adjacency must be ({cfg.obs_steps}, {cfg.joints}, {cfg.joints}), got {a.shape}")

        stage = "input_embed"
        try:
            x = self.input_embed(v)
            stage = "learn_adjacency"
            if cfg.learn_adjacency:
                learned = self.learn_adjacency(a.reshape(1, *a.shape), train).reshape(a.shape)
            else:
                learned = a
            for i in range(cfg.n_spgcnn):
                stage = f"spgcnn.{i}"
                x = self.spgcnn_layer(x, learned, i, train)
            if cfg.vision_mode != "none":
                stage = "vision"
                if images is None:
                    raise DimensionError(f"vision_mode={cfg.vision_mode} needs images")
                img = self._as_input(images)
                if img.shape[0] != n:
                    raise DimensionError(f"got {img.shape[0]} image stacks for a batch of {n}")
                x = fuse(x, self.extract_vision(img, train))
            stage = "txcnn"
            out = self.txcnn_stack(x, train)
        except NumericError as exc:
            raise NumericError(f"stage '{stage}': {exc}") from None
        return out, learned

    __call__ = forward

    def learned_adjacency(self, bones) -> np.ndarray:
        """Eval-mode adjacency (T,J,J) for export; it depends only on the skeleton."""
        a = self._as_input(self.base_adjacency(bones))
        if not self.config.learn_adjacency:
            return a.data.copy()
        with no_grad():
            return self.learn_adjacency(a.reshape(1, *a.shape), train=False).data.reshape(a.shape).copy()

    # -- parameter helpers ----------------------------------------------------------
    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def identity_preset(self) -> "SkeletonGraph":
        """Set every layer to a pass-through so the network becomes a fixed linear map.

        Channel-mapping convs get a centre-tap identity (channel c -> c),
        middle TXCNN layers are zeroed so only their residual path remains,
        biases are zero and PReLU slopes are 1. Batch norm must be disabled
        in the config for the result to be linear.
        """
        for name, p in self.params.items():
            if name.endswith(".bias") or name.endswith(".beta"):
                p.data[...] = 0.0
            elif name.endswith(".gamma") or name.endswith(".slope"):
                p.data[...] = 1.0
            elif name.endswith(".weight"):
                p.data[...] = 0.0
                c_out, c_in, kh, kw = p.shape
                middle = name.startswith("txcnn.") and 0 < int(name.split(".")[1]) < self.config.n_txcnn - 1
                if not middle:
                    for c in range(min(c_out, c_in)):
                        p.data[c, c, kh // 2, kw // 2] = 1.0
        return self


def fuse(graph_emb: DiffArray, vision_feat: DiffArray | None) -> DiffArray:
    """Concatenate (N,T,J,F) graph features with (N,C,J,F) vision features on axis 1."""
    if vision_feat is None:
        return graph_emb
    if graph_emb.shape[0] != vision_feat.shape[0] or graph_emb.shape[2:] != vision_feat.shape[2:]:
        raise DimensionError(f"cannot fuse graph {graph_emb.shape} with vision {vision_feat.shape}")
    return concat([graph_emb, vision_feat], axis=1)


def sample_inputs(model: SkeletonGraph, samples: list[Sample], norm: InputNormalization,
                  image_loader=None) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Stack a list of samples into (vertices, adjacency, images) arrays."""
    cfg = model.config
    for s in samples:
        if s.obs_graph.T != cfg.obs_steps or s.obs_graph.J != cfg.joints:
            raise DimensionError(
                f"sample graph is T={s.obs_graph.T}, J={s.obs_graph.J}; model expects T={cfg.obs_steps}, J={cfg.joints}")
    vertices = np.stack([norm.normalize_2d(s.obs_graph.vertices) for s in samples])
    adjacency = model.base_adjacency(samples[0].obs_graph.bones)
    images = None
    if cfg.vision_mode != "none":
        if image_loader is None:
            raise DimensionError("vision mode needs an image loader")
        images = np.stack([image_loader(s) for s in samples])
    return vertices, adjacency, images


def predict(model: SkeletonGraph, graph: SpatioTemporalGraph, norm: InputNormalization,
            images: np.ndarray | None = None, path_joint: int = 0) -> PosePrediction:
    """Eval-mode single-window prediction in absolute camera coordinates."""
    v = norm.normalize_2d(graph.vertices)[None]
    a = model.base_adjacency(graph.bones)
    img = None if images is None or model.config.vision_mode == "none" else images[None]
    with no_grad():
        out, learned = model.forward(v, a, img, train=False)
    poses = out.data[0].astype(np.float64) + norm.offset3d
    return PosePrediction(poses=poses, path=poses[:, path_joint, :].copy(), adjacency=learned.data.copy())
