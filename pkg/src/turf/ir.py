"""CNN model intermediate representation.

Models are ordered lists of stages, each holding either a single layer or a
convolution block (stacked / depthwise-separable / bottleneck / separable
bottleneck).  The IR carries shapes and hyperparameters only -- no weights.
All values are immutable; operations return new ModelSpec instances.

Counting conventions (documented in every report):
  * one multiply-accumulate = 2 operations,
  * parameter counts include bias terms for layers that carry them
    (classic VGG-style convolutions and fully-connected layers); models
    trained with batch normalisation are represented in their inference
    form with the normalisation folded into the preceding convolution,
    so those convolutions are bias-free and no separate normalisation
    parameters appear,
  * activation, pooling and element-wise addition contribute no
    operations and no parameters.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

from .errors import InvalidReplacement, ShapeMismatch, UnknownModel


class LayerKind(enum.Enum):
    STANDARD_CONV = "StandardConv"
    DEPTHWISE_CONV = "DepthwiseConv"
    POINTWISE_CONV = "PointwiseConv"
    FULLY_CONNECTED = "FullyConnected"
    ACTIVATION = "Activation"
    BATCH_NORM = "BatchNorm"
    ELEMENTWISE_ADD = "ElementwiseAdd"
    # Pooling is required to express the reference architectures
    # (VGG/ResNet/MobileNet all subsample between stages); it contributes
    # no operations or parameters.
    POOLING = "Pooling"


class BlockKind(enum.Enum):
    STACKED = "Stacked"
    DEPTHWISE_SEPARABLE = "DepthwiseSeparable"
    BOTTLENECK = "Bottleneck"
    SEPARABLE_BOTTLENECK = "SeparableBottleneck"


class Replacement(enum.Enum):
    ORIGIN = "ORIGIN"
    SEPARABLE = "SEPARABLE"


_CONV_KINDS = (LayerKind.STANDARD_CONV, LayerKind.DEPTHWISE_CONV, LayerKind.POINTWISE_CONV)


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ShapeMismatch(f"all dimensions must be >= 1, got {self}")

    def volume(self) -> int:
        return self.height * self.width * self.channels

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    kernel_size: int = 1
    stride: int = 1
    out_channels: int | None = None
    padding: int = 0
    has_bias: bool = False

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1:
            raise ShapeMismatch(f"kernel_size and stride must be >= 1: {self}")
        if self.kind is LayerKind.POINTWISE_CONV and self.kernel_size != 1:
            raise ShapeMismatch("pointwise convolution must have kernel_size 1")
        if self.kind is LayerKind.DEPTHWISE_CONV and self.out_channels is not None:
            raise ShapeMismatch("depthwise convolution preserves channels; no out_channels")
        needs_f = (LayerKind.STANDARD_CONV, LayerKind.POINTWISE_CONV, LayerKind.FULLY_CONNECTED)
        if self.kind in needs_f and self.out_channels is None:
            raise ShapeMismatch(f"{self.kind.value} requires out_channels")

    def output_shape(self, shape: TensorShape) -> TensorShape:
        h, w, c = shape.as_tuple()
        k, s, p = self.kernel_size, self.stride, self.padding
        if self.kind in (LayerKind.STANDARD_CONV, LayerKind.POINTWISE_CONV):
            ho = (h + 2 * p - k) // s + 1
            wo = (w + 2 * p - k) // s + 1
            return TensorShape(ho, wo, self.out_channels)
        if self.kind is LayerKind.DEPTHWISE_CONV:
            ho = (h + 2 * p - k) // s + 1
            wo = (w + 2 * p - k) // s + 1
            return TensorShape(ho, wo, c)
        if self.kind is LayerKind.POOLING:
            ho = (h + 2 * p - k) // s + 1
            wo = (w + 2 * p - k) // s + 1
            return TensorShape(max(ho, 1), max(wo, 1), c)
        if self.kind is LayerKind.FULLY_CONNECTED:
            return TensorShape(1, 1, self.out_channels)
        # activation / batch norm / elementwise add are shape-preserving
        return shape

    def ops(self, shape: TensorShape) -> int:
        """Operation count on the given input shape (MAC = 2 ops)."""
        out = self.output_shape(shape)
        k2 = self.kernel_size ** 2
        if self.kind in (LayerKind.STANDARD_CONV, LayerKind.POINTWISE_CONV):
            return 2 * out.height * out.width * shape.channels * self.out_channels * k2
        if self.kind is LayerKind.DEPTHWISE_CONV:
            return 2 * out.height * out.width * shape.channels * k2
        if self.kind is LayerKind.FULLY_CONNECTED:
            return 2 * shape.volume() * self.out_channels
        return 0

    def params(self, shape: TensorShape) -> int:
        c = shape.channels
        k2 = self.kernel_size ** 2
        if self.kind in (LayerKind.STANDARD_CONV, LayerKind.POINTWISE_CONV):
            return c * self.out_channels * k2 + (self.out_channels if self.has_bias else 0)
        if self.kind is LayerKind.DEPTHWISE_CONV:
            return c * k2 + (c if self.has_bias else 0)
        if self.kind is LayerKind.FULLY_CONNECTED:
            return shape.volume() * self.out_channels + (self.out_channels if self.has_bias else 0)
        if self.kind is LayerKind.BATCH_NORM:
            return 2 * c
        return 0


@dataclass(frozen=True)
class BlockSpec:
    kind: BlockKind
    layers: tuple[LayerSpec, ...]
    has_shortcut: bool = False
    # 1x1 projection on the shortcut path (ResNet downsampling blocks).
    shortcut_projection: LayerSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        kinds = [l.kind for l in self.layers]
        k = self.kind
        if k is BlockKind.DEPTHWISE_SEPARABLE:
            if kinds != [LayerKind.DEPTHWISE_CONV, LayerKind.POINTWISE_CONV]:
                raise ShapeMismatch("depthwise separable block is [DepthwiseConv, PointwiseConv]")
        elif k is BlockKind.BOTTLENECK:
            ok = kinds == [LayerKind.POINTWISE_CONV, LayerKind.STANDARD_CONV, LayerKind.POINTWISE_CONV]
            if not ok or self.layers[1].kernel_size != 3:
                raise ShapeMismatch("bottleneck block is [Pointwise, StandardConv(K=3), Pointwise]")
        elif k is BlockKind.SEPARABLE_BOTTLENECK:
            ok = kinds == [LayerKind.POINTWISE_CONV, LayerKind.DEPTHWISE_CONV, LayerKind.POINTWISE_CONV]
            if not ok or self.layers[1].kernel_size != 3:
                raise ShapeMismatch("separable bottleneck is [Pointwise, Depthwise(K=3), Pointwise]")
        elif k is BlockKind.STACKED:
            if kinds != [LayerKind.STANDARD_CONV, LayerKind.STANDARD_CONV] or not self.has_shortcut:
                raise ShapeMismatch("stacked block is two StandardConv layers with a shortcut")

    def output_shape(self, shape: TensorShape) -> TensorShape:
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def ops(self, shape: TensorShape) -> int:
        total = 0
        cur = shape
        for layer in self.layers:
            total += layer.ops(cur)
            cur = layer.output_shape(cur)
        if self.shortcut_projection is not None:
            total += self.shortcut_projection.ops(shape)
        return total

    def params(self, shape: TensorShape) -> int:
        total = 0
        cur = shape
        for layer in self.layers:
            total += layer.params(cur)
            cur = layer.output_shape(cur)
        if self.shortcut_projection is not None:
            total += self.shortcut_projection.params(shape)
        return total


@dataclass(frozen=True)
class Stage:
    input_shape: TensorShape
    op: LayerSpec | BlockSpec
    name: str = ""

    def output_shape(self) -> TensorShape:
        return self.op.output_shape(self.input_shape)


@dataclass(frozen=True)
class ModelSpec:
    """A CNN as an ordered stage list plus its replacement state.

    ``replacement_groups[p]`` lists the stage indices forming replaceable
    position ``p`` (a single stage for most models; a whole convolution
    group for VGG-16).  ``replacement_vector[p]`` records whether position
    ``p`` is still the original convolution or already separable.
    """

    base: str
    stages: tuple[Stage, ...]
    replacement_groups: tuple[tuple[int, ...], ...] = ()
    replacement_vector: tuple[Replacement, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "replacement_groups",
                           tuple(tuple(g) for g in self.replacement_groups))
        object.__setattr__(self, "replacement_vector", tuple(self.replacement_vector))
        if len(self.replacement_groups) != len(self.replacement_vector):
            raise ShapeMismatch("replacement vector length != number of replaceable positions")
        for i in range(len(self.stages) - 1):
            out = self.stages[i].output_shape()
            nxt = self.stages[i + 1].input_shape
            if out != nxt:
                raise ShapeMismatch(
                    f"stage {i} ({self.stages[i].name}) produces {out} but stage "
                    f"{i + 1} ({self.stages[i + 1].name}) expects {nxt}")

    @property
    def num_replaceable(self) -> int:
        return len(self.replacement_groups)

    def output_shape(self) -> TensorShape:
        return self.stages[-1].output_shape()

    def stage_shapes(self) -> list[TensorShape]:
        return [s.output_shape() for s in self.stages]


@dataclass(frozen=True)
class StageCount:
    index: int
    name: str
    category: str  # "block" | "conv" | "fc" | "other"
    ops: int
    params: int


@dataclass(frozen=True)
class OpParamReport:
    total_ops: int
    total_params: int
    per_stage: tuple[StageCount, ...]

    @property
    def gops(self) -> float:
        return self.total_ops / 1e9

    @property
    def params_m(self) -> float:
        return self.total_params / 1e6

    def by_category(self) -> dict[str, tuple[int, int]]:
        out: dict[str, list[int]] = {}
        for row in self.per_stage:
            acc = out.setdefault(row.category, [0, 0])
            acc[0] += row.ops
            acc[1] += row.params
        return {k: (v[0], v[1]) for k, v in out.items()}


def _stage_category(op: LayerSpec | BlockSpec) -> str:
    if isinstance(op, BlockSpec):
        return "block"
    if op.kind in _CONV_KINDS:
        return "conv"
    if op.kind is LayerKind.FULLY_CONNECTED:
        return "fc"
    return "other"


def count_ops_params(model: ModelSpec) -> OpParamReport:
    """Count operations and parameters stage by stage (MAC = 2 ops)."""
    rows = []
    for i, stage in enumerate(model.stages):
        rows.append(StageCount(
            index=i,
            name=stage.name or f"stage{i}",
            category=_stage_category(stage.op),
            ops=stage.op.ops(stage.input_shape),
            params=stage.op.params(stage.input_shape),
        ))
    return OpParamReport(
        total_ops=sum(r.ops for r in rows),
        total_params=sum(r.params for r in rows),
        per_stage=tuple(rows),
    )


def _separable_of_conv(conv: LayerSpec, in_channels: int) -> BlockSpec:
    """standard convolution -> depthwise separable block (same I/O shape)."""
    dw = LayerSpec(LayerKind.DEPTHWISE_CONV, kernel_size=conv.kernel_size,
                   stride=conv.stride, padding=conv.padding, has_bias=False)
    pw = LayerSpec(LayerKind.POINTWISE_CONV, out_channels=conv.out_channels,
                   has_bias=conv.has_bias)
    return BlockSpec(BlockKind.DEPTHWISE_SEPARABLE, (dw, pw))


def _separable_of_bottleneck(block: BlockSpec) -> BlockSpec:
    """bottleneck block -> separable bottleneck (middle 3x3 becomes depthwise)."""
    pw1, mid, pw2 = block.layers
    dw = LayerSpec(LayerKind.DEPTHWISE_CONV, kernel_size=3, stride=mid.stride,
                   padding=mid.padding, has_bias=False)
    # depthwise preserves channels, so the middle layer's channel change (if
    # any) moves into the trailing pointwise; for standard bottlenecks the
    # middle conv already preserves channels.
    if mid.out_channels is not None and pw1.out_channels != mid.out_channels:
        raise InvalidReplacement("bottleneck middle conv must preserve channels to be separable")
    return BlockSpec(BlockKind.SEPARABLE_BOTTLENECK, (pw1, dw, pw2),
                     has_shortcut=block.has_shortcut,
                     shortcut_projection=block.shortcut_projection)


def replace_layer(model: ModelSpec, position: int) -> ModelSpec:
    """Replace replaceable position ``position`` with its separable form.

    Output shapes of every stage are preserved; the original model is left
    unmodified.  A position covers one stage for most models and one
    convolution group for VGG-16 (every conv in the group is replaced).
    """
    if not 0 <= position < model.num_replaceable:
        raise InvalidReplacement(f"position {position} out of range 0..{model.num_replaceable - 1}")
    if model.replacement_vector[position] is not Replacement.ORIGIN:
        raise InvalidReplacement(f"position {position} already replaced")

    stages = list(model.stages)
    for idx in model.replacement_groups[position]:
        stage = stages[idx]
        op = stage.op
        if isinstance(op, LayerSpec) and op.kind is LayerKind.STANDARD_CONV:
            new_op = _separable_of_conv(op, stage.input_shape.channels)
        elif isinstance(op, BlockSpec) and op.kind is BlockKind.BOTTLENECK:
            new_op = _separable_of_bottleneck(op)
        else:
            raise InvalidReplacement(
                f"stage {idx} ({stage.name}) is not a replaceable convolution")
        if new_op.output_shape(stage.input_shape) != stage.output_shape():
            raise ShapeMismatch(f"replacement at stage {idx} would change the output shape")
        stages[idx] = replace(stage, op=new_op)

    vector = list(model.replacement_vector)
    vector[position] = Replacement.SEPARABLE
    return ModelSpec(model.base, tuple(stages), model.replacement_groups, tuple(vector))


# ---------------------------------------------------------------------------
# JSON model-definition format

def _layer_to_json(layer: LayerSpec) -> dict:
    d: dict = {"kind": layer.kind.value}
    if layer.kind in (*_CONV_KINDS, LayerKind.POOLING):
        d["kernel"] = layer.kernel_size
        d["stride"] = layer.stride
        d["padding"] = layer.padding
    if layer.out_channels is not None:
        d["out_channels"] = layer.out_channels
    if layer.has_bias:
        d["bias"] = True
    return d


def _layer_from_json(d: dict) -> LayerSpec:
    kind = LayerKind(d["kind"])
    return LayerSpec(kind,
                     kernel_size=d.get("kernel", 1),
                     stride=d.get("stride", 1),
                     out_channels=d.get("out_channels"),
                     padding=d.get("padding", 0),
                     has_bias=d.get("bias", False))


def model_to_json(model: ModelSpec) -> dict:
    stages = []
    for stage in model.stages:
        entry: dict = {"input": list(stage.input_shape.as_tuple())}
        if stage.name:
            entry["name"] = stage.name
        if isinstance(stage.op, BlockSpec):
            entry["block"] = {
                "kind": stage.op.kind.value,
                "layers": [_layer_to_json(l) for l in stage.op.layers],
                "shortcut": stage.op.has_shortcut,
            }
            if stage.op.shortcut_projection is not None:
                entry["block"]["projection"] = _layer_to_json(stage.op.shortcut_projection)
        else:
            entry.update(_layer_to_json(stage.op))
        stages.append(entry)
    return {
        "base": model.base,
        "stages": stages,
        "groups": [list(g) for g in model.replacement_groups],
        "replacements": [r.value for r in model.replacement_vector],
    }


def model_from_json(doc: dict) -> ModelSpec:
    """Load a declarative model document.

    Two forms are accepted: a full stage list, or a shorthand naming a
    reference model: ``{"base": "vgg16", "input": [224, 224, 3]}``.
    """
    if "stages" not in doc:
        from .models import build_reference_model
        shape = TensorShape(*doc.get("input", (224, 224, 3)))
        return build_reference_model(doc["base"], shape)

    stages = []
    for entry in doc["stages"]:
        shape = TensorShape(*entry["input"])
        if "block" in entry:
            b = entry["block"]
            proj = _layer_from_json(b["projection"]) if "projection" in b else None
            op: LayerSpec | BlockSpec = BlockSpec(
                BlockKind(b["kind"]),
                tuple(_layer_from_json(l) for l in b["layers"]),
                has_shortcut=b.get("shortcut", False),
                shortcut_projection=proj)
        else:
            op = _layer_from_json(entry)
        stages.append(Stage(shape, op, entry.get("name", "")))

    groups = tuple(tuple(g) for g in doc.get("groups", ()))
    if "replacements" in doc:
        vector = tuple(Replacement(r) for r in doc["replacements"])
    else:
        vector = tuple(Replacement.ORIGIN for _ in groups)
    return ModelSpec(doc.get("base", "Custom"), tuple(stages), groups, vector)


def load_model(path: str) -> ModelSpec:
    with open(path) as fh:
        return model_from_json(json.load(fh))


def save_model(model: ModelSpec, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(model), fh, indent=2, sort_keys=True)
        fh.write("\n")
