"""The hierarchical backbone, task heads, checkpointing, and toy training.

Layout: an embedding stack downsamples leaf features 4x, then four stages
of transformer blocks run at successively coarser depths with a stride-2
downsample between stages (channels double except into the last stage).
The four per-stage outputs form a feature pyramid consumed by either a
segmentation head (top-down merge + per-point classifier) or a global
average classification head.
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError, TrainingError
from .octconv import ConvSpec, DownsampleParams, EmbeddingParams, downsample, embedding_stack, octree_conv
from .octree import Octree, QuantizedCloud, build_octree, init_leaf_features
from .partition import (
    AttentionParams,
    CpeParams,
    conditional_positional_encoding,
    make_plan,
    windowed_attention,
)
from .tensor import (
    LayerNormParams,
    LinearParams,
    Tape,
    Tensor,
    add,
    apply_layer_norm,
    backward,
    cross_entropy,
    gather_rows,
    gelu,
    linear,
    mean_,
    relu,
    reshape,
    scatter_rows_add,
)

STAGE_WIDTH_FACTORS = (1, 2, 4, 4)

PRESETS = {
    "small": dict(channels=96, blocks=(2, 2, 6, 2)),
    "base": dict(channels=96, blocks=(2, 2, 18, 2)),
    "large": dict(channels=192, blocks=(2, 2, 18, 2)),
}


@dataclass
class NetworkConfig:
    channels: int = 96
    blocks: tuple[int, int, int, int] = (2, 2, 18, 2)
    point_number: int = 32
    dilation: int = 4
    head_divisor: int = 16
    mlp_ratio: int = 4
    octree_depth: int = 8
    num_classes: int = 20
    features: tuple[str, ...] = ("position", "color")
    fpn_channels: int = 168
    head_hidden: int = 168
    embed_depth: int | None = None
    variant: str = "custom"

    def __post_init__(self):
        self.blocks = tuple(int(b) for b in self.blocks)
        self.features = tuple(self.features)
        if len(self.blocks) != 4 or any(b < 0 for b in self.blocks):
            raise ConfigError("blocks must be four non-negative counts")
        if self.channels < 1 or self.point_number < 1 or self.dilation < 1:
            raise ConfigError("channels, point_number, dilation must be >= 1")
        if self.mlp_ratio < 1 or self.head_divisor < 1:
            raise ConfigError("mlp_ratio and head_divisor must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        unknown = set(self.features) - {"position", "color", "normal"}
        if unknown:
            raise ConfigError(f"unknown features {sorted(unknown)}")
        if not self.features:
            raise ConfigError("at least one input feature is required")
        for c in self.stage_channels:
            if c % self.heads(c) != 0:
                raise ConfigError(f"stage width {c} not divisible by its head count")

    @classmethod
    def preset(cls, name: str, **overrides) -> "NetworkConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
        kw = dict(PRESETS[name])
        kw.update(overrides)
        return cls(variant=name, **kw)

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(self.channels * f for f in STAGE_WIDTH_FACTORS)

    @property
    def in_channels(self) -> int:
        return 3 * len(self.features)

    def heads(self, channels: int) -> int:
        return max(1, channels // self.head_divisor)

    def feature_flags(self) -> dict[str, bool]:
        return {
            "use_position": "position" in self.features,
            "use_color": "color" in self.features,
            "use_normal": "normal" in self.features,
        }


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class MlpParams:
    fc1: LinearParams
    fc2: LinearParams

    @classmethod
    def init(cls, channels: int, ratio: int, rng, dtype=None) -> "MlpParams":
        hidden = channels * ratio
        return cls(LinearParams.init(channels, hidden, rng, dtype=dtype),
                   LinearParams.init(hidden, channels, rng, dtype=dtype))


@dataclass
class BlockParams:
    cpe: CpeParams
    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    mlp: MlpParams
    dilation: int

    @classmethod
    def init(cls, channels: int, heads: int, ratio: int, dilation: int, rng,
             dtype=None) -> "BlockParams":
        return cls(
            cpe=CpeParams.init(channels, dtype=dtype),
            ln1=LayerNormParams.init(channels, dtype=dtype),
            attn=AttentionParams.init(channels, heads, rng, dtype=dtype),
            ln2=LayerNormParams.init(channels, dtype=dtype),
            mlp=MlpParams.init(channels, ratio, rng, dtype=dtype),
            dilation=dilation,
        )


@dataclass
class StageParams:
    blocks: list[BlockParams]
    down: DownsampleParams | None


@dataclass
class BackboneParams:
    embedding: EmbeddingParams
    stages: list[StageParams]


@dataclass
class SegHeadParams:
    lateral: list[LinearParams]
    fuse: ConvSpec
    hidden: LinearParams
    classifier: LinearParams


@dataclass
class ClsHeadParams:
    classifier: LinearParams


@dataclass
class ModelParams:
    config: NetworkConfig
    backbone: BackboneParams
    seg_head: SegHeadParams
    cls_head: ClsHeadParams


def init_backbone(config: NetworkConfig, rng, dtype=None) -> BackboneParams:
    embedding = EmbeddingParams.init(config.in_channels, config.channels, rng,
                                     dtype=dtype)
    stages = []
    widths = config.stage_channels
    for i in range(4):
        c = widths[i]
        blocks = [
            BlockParams.init(c, config.heads(c), config.mlp_ratio,
                             1 if b % 2 == 0 else config.dilation, rng, dtype=dtype)
            for b in range(config.blocks[i])
        ]
        down = None
        if i < 3:
            down = DownsampleParams.init(c, widths[i + 1], rng, dtype=dtype)
        stages.append(StageParams(blocks, down))
    return BackboneParams(embedding, stages)


def init_model(config: NetworkConfig, seed: int = 0, dtype=None) -> ModelParams:
    rng = np.random.default_rng(seed)
    backbone = init_backbone(config, rng, dtype=dtype)
    c_top = config.stage_channels[-1]
    f = config.fpn_channels
    seg = SegHeadParams(
        lateral=[LinearParams.init(c, f, rng, dtype=dtype)
                 for c in config.stage_channels],
        fuse=ConvSpec.init(3, 1, f, f, rng, dtype=dtype),
        hidden=LinearParams.init(f, config.head_hidden, rng, dtype=dtype),
        classifier=LinearParams.init(config.head_hidden, config.num_classes, rng,
                                     dtype=dtype),
    )
    cls = ClsHeadParams(LinearParams.init(c_top, config.num_classes, rng, dtype=dtype))
    return ModelParams(config, backbone, seg, cls)


def named_tensors(obj, prefix: str = ""):
    """Walk a parameter tree; yields (name, value, kind) with kind
    'param' for Tensors and 'buffer' for raw arrays (running stats)."""
    if isinstance(obj, Tensor):
        yield prefix, obj, "param"
    elif isinstance(obj, np.ndarray):
        yield prefix, obj, "buffer"
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            if f.name == "config":
                continue
            yield from named_tensors(getattr(obj, f.name), f"{prefix}.{f.name}"
                                     if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_tensors(item, f"{prefix}.{i}")
    # ints, floats, None: not tensors


def trainable_parameters(obj) -> list[tuple[str, Tensor]]:
    return [(n, t) for n, t, kind in named_tensors(obj) if kind == "param"]


def count_parameters(obj) -> int:
    """Total trainable entries; buffers (running stats) excluded."""
    return sum(t.size for _, t in trainable_parameters(obj))


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class FeaturePyramid:
    levels: list[Tensor]  # finest (S/4) to coarsest (S/32)
    depths: list[int]


def mlp_forward(x: Tensor, mlp: MlpParams) -> Tensor:
    return linear(gelu(linear(x, mlp.fc1)), mlp.fc2)


def octformer_block(x: Tensor, octree: Octree, depth: int, block: BlockParams,
                    point_number: int, training: bool) -> Tensor:
    """CPE, then pre-norm attention and pre-norm MLP with residuals."""
    n = octree.node_count(depth)
    if x.shape[0] != n:
        raise ShapeError(f"x has {x.shape[0]} rows, depth {depth} has {n} nodes")
    x = conditional_positional_encoding(x, octree, depth, block.cpe, training)
    plan = make_plan(n, point_number, block.dilation)
    attn_out = windowed_attention(apply_layer_norm(x, block.ln1), plan, block.attn)
    x = add(x, attn_out)
    return add(x, mlp_forward(apply_layer_norm(x, block.ln2), block.mlp))


def pool_to_depth(octree: Octree, feats: Tensor, from_depth: int,
                  to_depth: int) -> Tensor:
    """Average-pool node features up the tree (children mean per parent)."""
    x = feats
    for level in range(from_depth, to_depth, -1):
        parents = octree.parent_index[level]
        n_par = octree.node_count(level - 1)
        sums = scatter_rows_add(x, parents, n_par)
        counts = np.bincount(parents, minlength=n_par).astype(x.dtype)
        x = sums * Tensor(1.0 / counts[:, None])
    return x


def backbone_apply(octree: Octree, feats: Tensor, config: NetworkConfig,
                   backbone: BackboneParams, training: bool) -> FeaturePyramid:
    """Run embedding + stages given prebuilt octree and leaf features."""
    embed_depth = config.embed_depth or octree.depth
    if embed_depth < 7:
        raise ConfigError(f"backbone needs octree depth >= 7, got {embed_depth}")
    if embed_depth > octree.depth:
        raise ConfigError("embed_depth exceeds octree depth")
    if feats.shape[0] != octree.node_count(octree.depth):
        raise ShapeError("leaf feature rows must match leaf node count")
    if embed_depth < octree.depth:
        feats = pool_to_depth(octree, feats, octree.depth, embed_depth)

    x = embedding_stack(feats, octree, embed_depth, backbone.embedding, training)
    depth = embed_depth - 2
    levels, depths = [], []
    for i, stage in enumerate(backbone.stages):
        for block in stage.blocks:
            x = octformer_block(x, octree, depth, block, config.point_number, training)
        levels.append(x)
        depths.append(depth)
        if stage.down is not None:
            x = downsample(x, octree, depth, stage.down, training)
            depth -= 1
    return FeaturePyramid(levels, depths)


def backbone_forward(cloud: QuantizedCloud, config: NetworkConfig,
                     params: BackboneParams, training: bool = False) -> FeaturePyramid:
    octree = build_octree(cloud)
    feats = init_leaf_features(octree, cloud, **config.feature_flags())
    return backbone_apply(octree, feats, config, params, training)


def point_ancestor_index(octree: Octree, target_depth: int) -> np.ndarray:
    """For each input point, the index of its ancestor node at target_depth."""
    idx = octree.point_assignment
    for level in range(octree.depth, target_depth, -1):
        idx = octree.parent_index[level][idx]
    return idx


def fpn_segmentation_head(pyramid: FeaturePyramid, octree: Octree,
                          head: SegHeadParams, training: bool = False) -> Tensor:
    """Top-down merge of the pyramid, k3 conv, then a per-point MLP."""
    if len(pyramid.levels) != len(head.lateral):
        raise ShapeError("pyramid and head level counts differ")
    for lvl, d in zip(pyramid.levels, pyramid.depths):
        if lvl.shape[0] != octree.node_count(d):
            raise ShapeError("pyramid level does not match the octree")

    u = linear(pyramid.levels[-1], head.lateral[-1])
    for i in range(len(pyramid.levels) - 2, -1, -1):
        fine_depth = pyramid.depths[i]
        up = gather_rows(u, octree.parent_index[fine_depth])  # parent -> children copy
        u = add(up, linear(pyramid.levels[i], head.lateral[i]))
    u = octree_conv(u, octree, pyramid.depths[0], head.fuse)
    point_feats = gather_rows(u, point_ancestor_index(octree, pyramid.depths[0]))
    hidden = relu(linear(point_feats, head.hidden))
    return linear(hidden, head.classifier)


def classification_head(pyramid: FeaturePyramid, head: ClsHeadParams) -> Tensor:
    """Global average of the coarsest map, then a linear classifier."""
    top = pyramid.levels[-1]
    if top.shape[0] == 0:
        raise NumericError("classification head needs a non-empty coarsest map")
    pooled = reshape(mean_(top, axis=0), (1, top.shape[1]))
    return reshape(linear(pooled, head.classifier), (head.classifier.weight.shape[1],))


def segment_logits(cloud: QuantizedCloud, model: ModelParams,
                   training: bool = False) -> Tensor:
    octree = build_octree(cloud)
    feats = init_leaf_features(octree, cloud, **model.config.feature_flags())
    pyramid = backbone_apply(octree, feats, model.config, model.backbone, training)
    return fpn_segmentation_head(pyramid, octree, model.seg_head, training)


# ---------------------------------------------------------------------------
# checkpoint format

CKPT_MAGIC = b"OFCK"
CKPT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {0: np.float32, 1: np.float64}


def save_checkpoint(path: str, model: ModelParams) -> None:
    cfg = dataclasses.asdict(model.config)
    cfg_bytes = json.dumps(cfg, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        for name, value, kind in named_tensors(model):
            arr = value.data if kind == "param" else value
            name_b = name.encode()
            f.write(struct.pack("<I", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<B", _DTYPE_TAGS[np.dtype(arr.dtype)]))
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as f:
        data = f.read()
    buf = io.BytesIO(data)
    if buf.read(4) != CKPT_MAGIC:
        raise DataError("bad checkpoint magic")
    (version,) = struct.unpack("<I", buf.read(4))
    if version != CKPT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", buf.read(4))
    cfg = json.loads(buf.read(cfg_len).decode())
    config = NetworkConfig(**{k: tuple(v) if isinstance(v, list) else v
                              for k, v in cfg.items()})
    model = init_model(config, seed=0)
    expected = {name: (value, kind) for name, value, kind in named_tensors(model)}
    seen = set()
    while buf.tell() < len(data):
        (name_len,) = struct.unpack("<I", buf.read(4))
        name = buf.read(name_len).decode()
        (tag,) = struct.unpack("<B", buf.read(1))
        (ndim,) = struct.unpack("<I", buf.read(4))
        shape = struct.unpack(f"<{ndim}Q", buf.read(8 * ndim))
        dtype = np.dtype(_TAG_DTYPES[tag])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(buf.read(count * dtype.itemsize),
                            dtype=dtype.newbyteorder("<")).astype(dtype)
        arr = arr.reshape(shape)
        if name not in expected:
            raise DataError(f"unexpected checkpoint record {name!r}")
        value, kind = expected[name]
        if kind == "param":
            if value.shape != arr.shape:
                raise DataError(f"shape mismatch for {name!r}")
            value.data = arr
        else:
            if value.shape != arr.shape:
                raise DataError(f"shape mismatch for {name!r}")
            value[...] = arr
        seen.add(name)
    missing = set(expected) - seen
    if missing:
        raise DataError(f"checkpoint missing records: {sorted(missing)[:3]}...")
    return model


# ---------------------------------------------------------------------------
# toy training


@dataclass
class LabeledCloud:
    cloud: QuantizedCloud
    labels: np.ndarray  # (P,) int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.cloud.num_points,):
            raise DataError("labels must be one per point")


@dataclass
class OptimSettings:
    steps: int = 300
    lr: float = 3e-3
    weight_decay: float = 0.05
    batch_size: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    decay_milestones: tuple[float, float] = (0.6, 0.8)
    seed: int = 0
    ignore_index: int = -1


class AdamW:
    """Decoupled weight decay Adam over a list of named parameters."""

    def __init__(self, params: list[tuple[str, Tensor]], settings: OptimSettings):
        self.params = params
        self.s = settings
        self.m = [np.zeros(t.shape, dtype=np.float64) for _, t in params]
        self.v = [np.zeros(t.shape, dtype=np.float64) for _, t in params]
        self.t = 0

    def lr_at(self, step: int) -> float:
        lr = self.s.lr
        for frac in self.s.decay_milestones:
            if step >= frac * self.s.steps:
                lr *= 0.1
        return lr

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.s.betas
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for (_, p), m, v, g in zip(self.params, self.m, self.v, grads):
            g = g.astype(np.float64)
            m += (1 - b1) * (g - m)
            v += (1 - b2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.s.eps)
            p.data = (p.data - lr * (update + self.s.weight_decay * p.data)).astype(
                p.dtype)


@dataclass
class TrainResult:
    model: ModelParams
    records: list[dict]
    initial_loss: float
    initial_accuracy: float
    final_loss: float
    final_accuracy: float


def _dataset_metrics(model: ModelParams, prepared, ignore_index: int):
    total_loss, total_correct, total_count = 0.0, 0, 0
    for octree, feats, labels in prepared:
        pyramid = backbone_apply(octree, feats, model.config, model.backbone,
                                 training=False)
        logits = fpn_segmentation_head(pyramid, octree, model.seg_head,
                                       training=False)
        loss = cross_entropy(logits, labels, ignore_index)
        valid = labels != ignore_index
        pred = logits.data.argmax(axis=1)
        total_correct += int((pred[valid] == labels[valid]).sum())
        total_count += int(valid.sum())
        total_loss += loss.item() * int(valid.sum())
    return total_loss / total_count, total_correct / total_count


def train_toy(dataset: list[LabeledCloud], config: NetworkConfig,
              settings: OptimSettings) -> TrainResult:
    """Overfit a segmentation model on a small fixed dataset.

    One optimizer step consumes ``batch_size`` clouds (cycled in order)
    with gradient accumulation; octrees and leaf features are built once.
    Deterministic for a fixed seed and thread count.
    """
    if not dataset:
        raise DataError("empty training dataset")
    for sample in dataset:
        if sample.labels.max() >= config.num_classes:
            raise DataError("label out of range for num_classes")

    prepared = []
    for sample in dataset:
        octree = build_octree(sample.cloud)
        feats = init_leaf_features(octree, sample.cloud, **config.feature_flags())
        prepared.append((octree, feats, sample.labels))

    model = init_model(config, seed=settings.seed)
    params = trainable_parameters(model.backbone) + trainable_parameters(model.seg_head)
    opt = AdamW(params, settings)

    initial_loss, initial_acc = _dataset_metrics(model, prepared, settings.ignore_index)

    records = []
    cursor = 0
    for step in range(settings.steps):
        grads = [np.zeros(t.shape, dtype=np.float64) for _, t in params]
        batch_loss, batch_correct, batch_count = 0.0, 0, 0
        for _ in range(settings.batch_size):
            octree, feats, labels = prepared[cursor % len(prepared)]
            cursor += 1
            with Tape() as tape:
                pyramid = backbone_apply(octree, feats, model.config,
                                         model.backbone, training=True)
                logits = fpn_segmentation_head(pyramid, octree, model.seg_head,
                                               training=True)
                loss = cross_entropy(logits, labels, settings.ignore_index)
            if not np.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at step {step}", step=step)
            backward(tape, loss)
            for g, (_, p) in zip(grads, params):
                g += tape.grad(p)
            valid = labels != settings.ignore_index
            pred = logits.data.argmax(axis=1)
            batch_correct += int((pred[valid] == labels[valid]).sum())
            batch_count += int(valid.sum())
            batch_loss += loss.item()
        lr = opt.lr_at(step)
        opt.step([g / settings.batch_size for g in grads], lr)
        records.append({
            "step": step,
            "lr": lr,
            "loss": batch_loss / settings.batch_size,
            "accuracy": batch_correct / batch_count,
        })

    final_loss, final_acc = _dataset_metrics(model, prepared, settings.ignore_index)
    return TrainResult(model, records, initial_loss, initial_acc,
                       final_loss, final_acc)
