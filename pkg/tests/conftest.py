import numpy as np
import pytest

from turf.ir import (BlockKind, BlockSpec, LayerKind, LayerSpec, ModelSpec,
                     Replacement, Stage, TensorShape)


def std_conv(out_ch, k=3, stride=1, padding=None, bias=False):
    if padding is None:
        padding = k // 2
    return LayerSpec(LayerKind.STANDARD_CONV, kernel_size=k, stride=stride,
                     out_channels=out_ch, padding=padding, has_bias=bias)


def pw_conv(out_ch, bias=False):
    return LayerSpec(LayerKind.POINTWISE_CONV, out_channels=out_ch, has_bias=bias)


def dw_conv(k=3, stride=1, padding=None):
    if padding is None:
        padding = k // 2
    return LayerSpec(LayerKind.DEPTHWISE_CONV, kernel_size=k, stride=stride,
                     padding=padding)


def stacked_block(mid, out):
    return BlockSpec(BlockKind.STACKED, (std_conv(mid), std_conv(out)),
                     has_shortcut=True)


def dwsep_block(out):
    return BlockSpec(BlockKind.DEPTHWISE_SEPARABLE, (dw_conv(), pw_conv(out)))


def bottleneck_block(mid, out):
    return BlockSpec(BlockKind.BOTTLENECK, (pw_conv(mid), std_conv(mid), pw_conv(out)),
                     has_shortcut=True)


def small_custom_model(n_convs=3, base_channels=8, size=32):
    """Shape-consistent custom model with one replaceable position per conv."""
    stages = []
    groups = []
    shape = TensorShape(size, size, base_channels)
    f = base_channels
    for i in range(n_convs):
        f = f * 2
        conv = std_conv(f, bias=True)
        stages.append(Stage(shape, conv, f"conv{i + 1}"))
        groups.append((len(stages) - 1,))
        shape = conv.output_shape(shape)
    fc = LayerSpec(LayerKind.FULLY_CONNECTED, out_channels=10, has_bias=True)
    stages.append(Stage(shape, fc, "fc"))
    return ModelSpec("Custom", tuple(stages), tuple(groups),
                     tuple(Replacement.ORIGIN for _ in groups))


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
