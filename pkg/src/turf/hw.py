"""Hardware building-module descriptors and per-layer pipelines.

A design module is a tuple <cfg, in, out>: a named-parameter set plus the
input/output stream widths in elements per cycle.  The descriptor factory
functions implement the published width formulas verbatim:

  line buffer        <{P_c,P_h,P_w},  P_c P_h P_w,   (K'+P_h-1)(K'+P_w-1)>
  input buffer       <{P_c,P_w},      P_c P_w,       P_c P_w>
  output buffer      <{P_f,P_w},      P_f P_w,       P_f P_w>
  input transform    <{P_c,K},        P_c T_k^2,     P_c T_k^2>
  weight transform   <{P_c,P_f,K},    P_c P_f K^2,   P_c P_f T_k^2>
  output transform   <{P_c,P_f,K},    P_c P_f T_k^2, P_c P_f m^2>

with T_k = m + K - 1.  Note the line-buffer output width as printed has no
P_c factor (window overlap sharing); pipelines therefore replicate line
buffers per channel lane and chain on effective widths
(width x replication).

``instantiate_layer`` emits the data-path chain for one layer (the weight
path, when Winograd transforms weights, is attached separately) with
parameters chosen so neighbouring effective widths agree.  Channel
accumulation happens inside the dot-product array's adder tree, so
post-array modules see channel-folded streams.

Module latencies model pipeline fill only (the papers' width tuples say
nothing about latency); they are additive constants reported separately
by the simulator.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import InefficientConfig, UnsupportedConfig
from .ir import LayerKind, LayerSpec
from .kernels import transform_mult_counts, winograd_config


class ModuleKind(enum.Enum):
    LINE_BUFFER = "LineBuffer"
    INPUT_BUFFER = "InputBuffer"
    OUTPUT_BUFFER = "OutputBuffer"
    WINOGRAD_INPUT_TRANSFORM = "WinogradInputTransform"
    WINOGRAD_WEIGHT_TRANSFORM = "WinogradWeightTransform"
    WINOGRAD_OUTPUT_TRANSFORM = "WinogradOutputTransform"
    DOT_PRODUCT_ARRAY = "DotProductArray"
    ELEMENTWISE_ADD = "ElementwiseAdd"
    ACTIVATION = "Activation"
    NORM = "Norm"


class Seq(enum.Enum):
    """Computation sequence: filter-major (f,c,i) or channel-major (c,f,i)."""

    FM = "FM"
    CM = "CM"


@dataclass(frozen=True)
class ModuleDesc:
    kind: ModuleKind
    cfg: dict
    in_width: int
    out_width: int
    replication: int = 1
    latency: int = 0

    @property
    def effective_in(self) -> int:
        return self.in_width * self.replication

    @property
    def effective_out(self) -> int:
        return self.out_width * self.replication


def line_buffer(p_c: int, p_h: int, p_w: int, k_prime: int,
                replication: int = 1, row_length: int = 0) -> ModuleDesc:
    """Sliding-window generator over K' shift-register rows."""
    fill = (k_prime - 1) * row_length + k_prime if row_length else 0
    return ModuleDesc(
        ModuleKind.LINE_BUFFER,
        {"P_c": p_c, "P_h": p_h, "P_w": p_w, "K'": k_prime},
        in_width=p_c * p_h * p_w,
        out_width=(k_prime + p_h - 1) * (k_prime + p_w - 1),
        replication=replication,
        latency=fill,
    )


def input_buffer(p_c: int, p_w: int) -> ModuleDesc:
    return ModuleDesc(ModuleKind.INPUT_BUFFER, {"P_c": p_c, "P_w": p_w},
                      in_width=p_c * p_w, out_width=p_c * p_w, latency=1)


def output_buffer(p_f: int, p_w: int) -> ModuleDesc:
    return ModuleDesc(ModuleKind.OUTPUT_BUFFER, {"P_f": p_f, "P_w": p_w},
                      in_width=p_f * p_w, out_width=p_f * p_w, latency=1)


def winograd_input_transform(p_c: int, k: int, m: int) -> ModuleDesc:
    tk = m + k - 1
    return ModuleDesc(ModuleKind.WINOGRAD_INPUT_TRANSFORM,
                      {"P_c": p_c, "K": k, "m": m},
                      in_width=p_c * tk * tk, out_width=p_c * tk * tk,
                      latency=2 * tk)


def winograd_weight_transform(p_c: int, p_f: int, k: int, m: int) -> ModuleDesc:
    tk = m + k - 1
    return ModuleDesc(ModuleKind.WINOGRAD_WEIGHT_TRANSFORM,
                      {"P_c": p_c, "P_f": p_f, "K": k, "m": m},
                      in_width=p_c * p_f * k * k, out_width=p_c * p_f * tk * tk,
                      latency=2 * tk)


def winograd_output_transform(p_c: int, p_f: int, k: int, m: int) -> ModuleDesc:
    tk = m + k - 1
    return ModuleDesc(ModuleKind.WINOGRAD_OUTPUT_TRANSFORM,
                      {"P_c": p_c, "P_f": p_f, "K": k, "m": m},
                      in_width=p_c * p_f * tk * tk, out_width=p_c * p_f * m * m,
                      latency=2 * tk)


def dot_product_array(in_width: int, out_width: int, multipliers: int,
                      cfg: dict) -> ModuleDesc:
    depth = max(1, math.ceil(math.log2(max(2, in_width))))  # adder tree
    cfg = dict(cfg, multipliers=multipliers)
    return ModuleDesc(ModuleKind.DOT_PRODUCT_ARRAY, cfg,
                      in_width=in_width, out_width=out_width, latency=depth + 1)


@dataclass(frozen=True)
class LayerHwConfig:
    """One layer's hardware knobs: tiles, parallelism, loop order, Winograd."""

    tile: tuple[int, int, int, int]          # (T_h, T_w, T_c, T_f)
    parallelism: tuple[int, int, int, int]   # (P_h, P_w, P_c, P_f)
    seq: Seq = Seq.FM
    use_winograd: bool = False
    winograd_m: int = 4

    def __post_init__(self):
        t_h, t_w, t_c, t_f = self.tile
        p_h, p_w, p_c, p_f = self.parallelism
        for t, p, name in ((t_h, p_h, "h"), (t_w, p_w, "w"), (t_c, p_c, "c"), (t_f, p_f, "f")):
            if t < 1 or p < 1:
                raise UnsupportedConfig(f"tile/parallelism must be >= 1 (axis {name})")
            if t % p != 0:
                raise UnsupportedConfig(f"P_{name}={p} must divide T_{name}={t}")

    @property
    def t_h(self): return self.tile[0]
    @property
    def t_w(self): return self.tile[1]
    @property
    def t_c(self): return self.tile[2]
    @property
    def t_f(self): return self.tile[3]
    @property
    def p_h(self): return self.parallelism[0]
    @property
    def p_w(self): return self.parallelism[1]
    @property
    def p_c(self): return self.parallelism[2]
    @property
    def p_f(self): return self.parallelism[3]


@dataclass(frozen=True)
class LayerPipeline:
    """Instantiated module chain for one layer."""

    layer: LayerSpec
    hw: LayerHwConfig
    modules: tuple[ModuleDesc, ...]
    weight_path: tuple[ModuleDesc, ...] = ()

    @property
    def fill_latency(self) -> int:
        return sum(m.latency for m in self.modules)

    def check_chain(self) -> None:
        for a, b in zip(self.modules, self.modules[1:]):
            if a.effective_out != b.effective_in:
                raise UnsupportedConfig(
                    f"stream width break: {a.kind.value} out {a.effective_out} "
                    f"!= {b.kind.value} in {b.effective_in}")


def _validate_winograd(layer: LayerSpec, hw: LayerHwConfig) -> None:
    if layer.kind not in (LayerKind.STANDARD_CONV, LayerKind.DEPTHWISE_CONV):
        raise UnsupportedConfig(f"Winograd not supported for {layer.kind.value}")
    if layer.kernel_size != 3 or layer.stride != 1:
        raise UnsupportedConfig("Winograd path requires K=3, stride 1")
    m = hw.winograd_m
    if hw.p_h != m or hw.p_w != m:
        raise UnsupportedConfig(
            f"Winograd convention: P_h = P_w = m (= {m}), got ({hw.p_h}, {hw.p_w})")


def instantiate_layer(layer: LayerSpec, hw: LayerHwConfig) -> LayerPipeline:
    """Emit the module chain for one layer.

    Pointwise convolution has a trivial 1x1 window and therefore no line
    buffer or transforms; the Winograd path inserts the three transform
    modules around the dot-product array.  The dot-product array folds the
    P_c channel lanes in its adder tree, so downstream modules see
    channel-accumulated streams.
    """
    p_h, p_w, p_c, p_f = hw.parallelism
    kind = layer.kind
    k = layer.kernel_size

    if hw.use_winograd:
        _validate_winograd(layer, hw)
        cfg = winograd_config(hw.winograd_m, k)
        m, tk = cfg.m, cfg.tile
        depthwise = kind is LayerKind.DEPTHWISE_CONV
        lanes_f = 1 if depthwise else p_f
        modules = [
            input_buffer(p_c, 1),
            line_buffer(1, 1, 1, tk, replication=p_c, row_length=hw.t_w),
            winograd_input_transform(p_c, k, m),
            dot_product_array(
                in_width=p_c * tk * tk, out_width=lanes_f * tk * tk,
                multipliers=p_c * lanes_f * tk * tk,
                cfg={"P_c": p_c, "P_f": lanes_f, "domain": "winograd"}),
            winograd_output_transform(1, lanes_f, k, m),
            output_buffer(lanes_f, m * m),
        ]
        weight_path = (winograd_weight_transform(p_c, lanes_f, k, m),)
        return LayerPipeline(layer, hw, tuple(modules), weight_path)

    if kind in (LayerKind.POINTWISE_CONV, LayerKind.FULLY_CONNECTED):
        modules = [
            input_buffer(p_c, p_h * p_w),
            dot_product_array(
                in_width=p_c * p_h * p_w, out_width=p_f * p_h * p_w,
                multipliers=p_c * p_f * p_h * p_w,
                cfg={"P_c": p_c, "P_f": p_f}),
            output_buffer(p_f, p_h * p_w),
        ]
        return LayerPipeline(layer, hw, tuple(modules))

    if kind in (LayerKind.STANDARD_CONV, LayerKind.DEPTHWISE_CONV):
        depthwise = kind is LayerKind.DEPTHWISE_CONV
        lanes_f = 1 if depthwise else p_f
        window = (k + p_h - 1) * (k + p_w - 1)
        modules = [
            input_buffer(p_c, p_h * p_w),
            line_buffer(1, p_h, p_w, k, replication=p_c, row_length=hw.t_w),
            dot_product_array(
                in_width=p_c * window, out_width=lanes_f * p_h * p_w,
                multipliers=p_c * lanes_f * k * k * p_h * p_w,
                cfg={"P_c": p_c, "P_f": lanes_f, "K": k}),
            output_buffer(lanes_f, p_h * p_w),
        ]
        return LayerPipeline(layer, hw, tuple(modules))

    if kind is LayerKind.ELEMENTWISE_ADD:
        w = p_c * p_h * p_w
        return LayerPipeline(layer, hw, (ModuleDesc(ModuleKind.ELEMENTWISE_ADD, {}, w, w),))
    if kind is LayerKind.ACTIVATION:
        w = p_c * p_h * p_w
        return LayerPipeline(layer, hw, (ModuleDesc(ModuleKind.ACTIVATION, {}, w, w),))
    if kind is LayerKind.BATCH_NORM:
        w = p_c * p_h * p_w
        return LayerPipeline(layer, hw, (ModuleDesc(ModuleKind.NORM, {}, w, w),))
    raise UnsupportedConfig(f"no hardware pipeline for layer kind {kind.value}")


def layer_cycle_counts(layer: LayerSpec, hw: LayerHwConfig) -> tuple[int, int]:
    """(compute_cycles per tile, work units per tile).

    compute_cycles is the nested-loop trip count
    ceil(T_c/P_c) ceil(T_f/P_f) ceil(T_h/P_h) ceil(T_w/P_w); depthwise drops
    the T_f factor; the Winograd path processes one m x m output tile per
    P_h = P_w = m lane group, replacing the spatial trips with
    ceil(T_h/m) ceil(T_w/m).  A work unit is one outer-loop chunk of the
    seq-major index (filter chunk for FM, channel chunk for CM; depthwise
    layers have a single combined channel axis).
    """
    t_h, t_w, t_c, t_f = hw.tile
    p_h, p_w, p_c, p_f = hw.parallelism
    depthwise = layer.kind is LayerKind.DEPTHWISE_CONV

    if hw.use_winograd:
        _validate_winograd(layer, hw)
        m = hw.winograd_m
        spatial = math.ceil(t_h / m) * math.ceil(t_w / m)
    else:
        spatial = math.ceil(t_h / p_h) * math.ceil(t_w / p_w)

    c_trips = math.ceil(t_c / p_c)
    f_trips = 1 if depthwise else math.ceil(t_f / p_f)
    compute_cycles = c_trips * f_trips * spatial

    if depthwise:
        work_units = c_trips
    elif hw.seq is Seq.FM:
        work_units = f_trips
    else:
        work_units = c_trips
    return compute_cycles, work_units


class BufferOption(enum.Enum):
    """Intermediate-buffer sizing choice for one layer boundary."""

    MATCH_PREV = "MatchPrev"   # adopt the previous layer's output-side size
    MATCH_NEXT = "MatchNext"   # adopt the next layer's input-side size
    DOUBLE = "Double"          # double the previous-output size (ping-pong)


def buffer_words(prev_seq: Seq, cur_seq: Seq, tile: tuple[int, int, int, int],
                 parallelism: tuple[int, int, int, int],
                 double_buffering: bool = False) -> int:
    """Intermediate buffer size in words, by the published sizing table.

    tile/parallelism are those of the consuming layer i:
      (FM,CM)  P_c T_h T_w      (CM,FM)  T_c T_h T_w
      (FM,FM)  P_c T_h T_w      (CM,CM)  T_c T_h T_w
    with double buffering doubling the value.
    """
    t_h, t_w, t_c, _ = tile
    p_c = parallelism[2]
    base = p_c * t_h * t_w if prev_seq is Seq.FM else t_c * t_h * t_w
    return 2 * base if double_buffering else base


def intermediate_buffer_words(prev_seq: Seq, cur_seq: Seq,
                              tile: tuple[int, int, int, int],
                              parallelism: tuple[int, int, int, int],
                              option: BufferOption) -> int:
    """Buffer size for a concrete option choice, rejecting inefficient ones.

    A configuration is inefficient when the buffer is too small to store
    the input or output the adjacent sequences require: a channel-major
    producer must accumulate its full output tile, and a filter-major
    consumer re-reads its full input tile, so only full-tile options are
    valid on those sides.
    """
    t_h, t_w, t_c, _ = tile
    p_c = parallelism[2]
    chunk = p_c * t_h * t_w
    full = t_c * t_h * t_w

    if option is BufferOption.MATCH_NEXT:
        if prev_seq is Seq.CM and cur_seq is Seq.CM:
            raise InefficientConfig(
                "(CM,CM) with a next-matched buffer cannot hold the producer's "
                "accumulating output tile")
        return full
    # MATCH_PREV and DOUBLE size from the producer side
    base = chunk if prev_seq is Seq.FM else full
    if cur_seq is Seq.FM and base < full:
        raise InefficientConfig(
            f"({prev_seq.value},{cur_seq.value}) with a {option.value} buffer of "
            f"{base} words cannot hold the consumer's reused input tile ({full} words)")
    return 2 * base if option is BufferOption.DOUBLE else base
