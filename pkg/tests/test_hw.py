"""Hardware building-module descriptors: width formulas, pipelines, cycle
counts, and the intermediate-buffer sizing table."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import dw_conv, pw_conv, std_conv
from turf.errors import InefficientConfig, UnsupportedConfig
from turf.hw import (BufferOption, LayerHwConfig, ModuleKind, Seq,
                     buffer_words, input_buffer, instantiate_layer,
                     intermediate_buffer_words, layer_cycle_counts,
                     line_buffer, output_buffer, winograd_input_transform,
                     winograd_output_transform, winograd_weight_transform)
from turf.ir import LayerKind, LayerSpec


class TestWidthFormulas:
    def test_line_buffer_example(self):
        # single-lane line buffer with a 6-wide window
        desc = line_buffer(1, 1, 1, 6)
        assert desc.in_width == 1
        assert desc.out_width == 36

    def test_weight_transform_example(self):
        desc = winograd_weight_transform(2, 2, 3, 4)
        assert desc.in_width == 2 * 2 * 9
        assert desc.out_width == 2 * 2 * 36

    @settings(max_examples=150, deadline=None)
    @given(p_c=st.integers(1, 16), p_h=st.integers(1, 8), p_w=st.integers(1, 8),
           p_f=st.integers(1, 16), k=st.integers(1, 7), m=st.sampled_from([2, 4]))
    def test_published_tuples_hold(self, p_c, p_h, p_w, p_f, k, m):
        tk = m + k - 1
        lb = line_buffer(p_c, p_h, p_w, tk)
        assert lb.in_width == p_c * p_h * p_w
        assert lb.out_width == (tk + p_h - 1) * (tk + p_w - 1)

        ib = input_buffer(p_c, p_w)
        assert ib.in_width == ib.out_width == p_c * p_w
        ob = output_buffer(p_f, p_w)
        assert ob.in_width == ob.out_width == p_f * p_w

        it = winograd_input_transform(p_c, k, m)
        assert it.in_width == it.out_width == p_c * tk * tk
        wt = winograd_weight_transform(p_c, p_f, k, m)
        assert wt.in_width == p_c * p_f * k * k
        assert wt.out_width == p_c * p_f * tk * tk
        ot = winograd_output_transform(p_c, p_f, k, m)
        assert ot.in_width == p_c * p_f * tk * tk
        assert ot.out_width == p_c * p_f * m * m


class TestPipelines:
    def test_stream_width_chaining_direct(self):
        hw = LayerHwConfig((16, 16, 8, 16), (1, 1, 4, 4))
        pipe = instantiate_layer(std_conv(16), hw)
        pipe.check_chain()
        kinds = [m.kind for m in pipe.modules]
        assert kinds == [ModuleKind.INPUT_BUFFER, ModuleKind.LINE_BUFFER,
                         ModuleKind.DOT_PRODUCT_ARRAY, ModuleKind.OUTPUT_BUFFER]

    def test_pointwise_has_no_line_buffer(self):
        hw = LayerHwConfig((16, 16, 8, 16), (1, 1, 4, 4))
        pipe = instantiate_layer(pw_conv(16), hw)
        pipe.check_chain()
        assert ModuleKind.LINE_BUFFER not in [m.kind for m in pipe.modules]

    def test_winograd_chain(self):
        hw = LayerHwConfig((16, 16, 8, 16), (4, 4, 2, 2), use_winograd=True,
                           winograd_m=4)
        pipe = instantiate_layer(std_conv(16), hw)
        pipe.check_chain()
        kinds = [m.kind for m in pipe.modules]
        assert ModuleKind.WINOGRAD_INPUT_TRANSFORM in kinds
        assert ModuleKind.WINOGRAD_OUTPUT_TRANSFORM in kinds
        assert [m.kind for m in pipe.weight_path] \
            == [ModuleKind.WINOGRAD_WEIGHT_TRANSFORM]
        # weight transform feeds the dot array at its published width
        assert pipe.weight_path[0].out_width == 2 * 2 * 36

    @settings(max_examples=60, deadline=None)
    @given(p_c=st.sampled_from([1, 2, 4]), p_f=st.sampled_from([1, 2, 4]),
           kind=st.sampled_from(["std", "pw", "dw"]),
           wino=st.booleans())
    def test_chaining_property(self, p_c, p_f, kind, wino):
        layer = {"std": std_conv(8), "pw": pw_conv(8), "dw": dw_conv()}[kind]
        if wino and kind == "pw":
            wino = False
        spatial = 4 if wino else 1
        hw = LayerHwConfig((16, 16, 8, 8), (spatial, spatial, p_c, p_f),
                           use_winograd=wino, winograd_m=4)
        pipe = instantiate_layer(layer, hw)
        pipe.check_chain()  # raises on any width break

    def test_winograd_requires_k3_stride1(self):
        hw = LayerHwConfig((16, 16, 8, 16), (4, 4, 2, 2), use_winograd=True)
        with pytest.raises(UnsupportedConfig):
            instantiate_layer(std_conv(16, k=5), hw)
        with pytest.raises(UnsupportedConfig):
            instantiate_layer(pw_conv(16), hw)

    def test_parallelism_must_divide_tile(self):
        with pytest.raises(UnsupportedConfig):
            LayerHwConfig((16, 16, 8, 16), (1, 1, 3, 4))


class TestCycleCounts:
    def test_trip_count_product(self):
        hw = LayerHwConfig((8, 8, 16, 32), (1, 1, 4, 4))
        cycles, units = layer_cycle_counts(std_conv(32), hw)
        assert cycles == 4 * 8 * 8 * 8  # 2048

    def test_work_units_by_major_index(self):
        fm = LayerHwConfig((8, 8, 16, 32), (1, 1, 4, 4), seq=Seq.FM)
        cm = LayerHwConfig((8, 8, 16, 32), (1, 1, 4, 4), seq=Seq.CM)
        assert layer_cycle_counts(std_conv(32), fm)[1] == 8   # 32/4 filter chunks
        assert layer_cycle_counts(std_conv(32), cm)[1] == 4   # 16/4 channel chunks

    def test_winograd_spatial_trip_count(self):
        hw = LayerHwConfig((8, 8, 4, 4), (4, 4, 1, 1), use_winograd=True,
                           winograd_m=4)
        cycles, _ = layer_cycle_counts(std_conv(4), hw)
        assert cycles == 4 * 4 * 4  # 4 tiles instead of 64 pixels

    def test_depthwise_drops_filter_trips(self):
        hw = LayerHwConfig((8, 8, 16, 16), (1, 1, 4, 4))
        cycles, units = layer_cycle_counts(dw_conv(), hw)
        assert cycles == 4 * 8 * 8
        assert units == 4

    def test_cycles_divide_evenly_into_units(self):
        for seq in (Seq.FM, Seq.CM):
            hw = LayerHwConfig((8, 8, 16, 32), (1, 1, 4, 8), seq=seq)
            cycles, units = layer_cycle_counts(std_conv(32), hw)
            assert cycles % units == 0


class TestBufferWords:
    TILE = (1, 1)  # placeholders, overwritten per case

    @settings(max_examples=150, deadline=None)
    @given(t_h=st.integers(1, 64), t_w=st.integers(1, 64),
           t_c=st.integers(1, 512), p_c=st.integers(1, 64),
           prev=st.sampled_from([Seq.FM, Seq.CM]),
           cur=st.sampled_from([Seq.FM, Seq.CM]),
           double=st.booleans())
    def test_sizing_table(self, t_h, t_w, t_c, p_c, prev, cur, double):
        tile = (t_h, t_w, t_c, 1)
        par = (1, 1, p_c, 1)
        got = buffer_words(prev, cur, tile, par, double)
        base = p_c * t_h * t_w if prev is Seq.FM else t_c * t_h * t_w
        assert got == (2 * base if double else base)

    def test_table_examples(self):
        # previous layer filter-major, next channel-major, single buffer
        assert buffer_words(Seq.FM, Seq.CM, (8, 8, 99, 1), (1, 1, 4, 1)) == 256
        # previous channel-major, doubled
        assert buffer_words(Seq.CM, Seq.FM, (8, 8, 16, 1), (1, 1, 4, 1),
                            double_buffering=True) == 2048

    def test_cm_cm_small_buffer_rejected(self):
        with pytest.raises(InefficientConfig):
            intermediate_buffer_words(Seq.CM, Seq.CM, (8, 8, 16, 1),
                                      (1, 1, 4, 1), BufferOption.MATCH_NEXT)

    def test_fm_consumer_needs_full_tile(self):
        # a filter-major consumer re-reads its whole input, so a chunk-sized
        # buffer is too small
        with pytest.raises(InefficientConfig):
            intermediate_buffer_words(Seq.FM, Seq.FM, (8, 8, 16, 1),
                                      (1, 1, 4, 1), BufferOption.MATCH_PREV)
        # unless the tile is a single chunk
        words = intermediate_buffer_words(Seq.FM, Seq.FM, (8, 8, 4, 1),
                                          (1, 1, 4, 1), BufferOption.MATCH_PREV)
        assert words == 4 * 8 * 8

    def test_valid_options_match_table(self):
        tile, par = (8, 8, 16, 1), (1, 1, 4, 1)
        assert intermediate_buffer_words(Seq.FM, Seq.CM, tile, par,
                                         BufferOption.MATCH_PREV) == 256
        assert intermediate_buffer_words(Seq.FM, Seq.CM, tile, par,
                                         BufferOption.DOUBLE) == 512
        assert intermediate_buffer_words(Seq.FM, Seq.CM, tile, par,
                                         BufferOption.MATCH_NEXT) == 1024
        assert intermediate_buffer_words(Seq.CM, Seq.FM, tile, par,
                                         BufferOption.MATCH_PREV) == 1024
        assert intermediate_buffer_words(Seq.CM, Seq.CM, tile, par,
                                         BufferOption.MATCH_PREV) == 1024
