"""Incremental decoder: equivalence, caches, causality, state files,
positional encoding, and receptive field analysis."""

import numpy as np
import pytest

import reference
from chunkmel import decoder, io, masks, tensor
from chunkmel.tensor import ShapeError


def tiny_cfg(**kw):
    base = dict(
        n_layers=2,
        n_heads=2,
        d_model=8,
        d_ff=12,
        kernel1=3,
        kernel2=3,
        chunk_size=4,
        past_size=3,
        mel_bins=5,
        dtype="f64",
    )
    base.update(kw)
    return decoder.DecoderConfig(**base)


def make_inputs(cfg, t, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((t, cfg.d_model)).astype(cfg.np_dtype)


def run_both_routes(cfg, t, seed=0):
    model = decoder.init_weights(cfg, seed=seed + 1)
    feats = make_inputs(cfg, t, seed)
    chunks, _ = decoder.decode_incremental(feats, model)
    inc = np.concatenate(chunks, axis=0)
    mask = masks.build_static_mask(t, cfg.chunk_size, cfg.past_size)
    par = decoder.decode_parallel_masked(feats, model, mask)
    return inc, par


class TestEquivalence:
    @pytest.mark.parametrize(
        "cfg_kw, t",
        [
            (dict(), 13),  # partial last chunk
            (dict(past_size=0), 12),
            (dict(past_size=masks.ALL), 11),
            (dict(kernel1=1, kernel2=1), 12),
            (dict(chunk_size=1, past_size=2), 7),
            (dict(n_layers=1, n_heads=1), 9),
        ],
    )
    def test_incremental_matches_parallel(self, cfg_kw, t):
        cfg = tiny_cfg(**cfg_kw)
        inc, par = run_both_routes(cfg, t)
        assert inc.shape == par.shape == (t, cfg.mel_bins)
        assert np.max(np.abs(inc - par)) <= 1e-9

    def test_one_cell_is_bit_exact(self):
        # The two routes share every primitive and sum in the same
        # order, so equality is exact, not approximate.
        inc, par = run_both_routes(tiny_cfg(), 13)
        assert np.array_equal(inc, par)

    def test_single_chunk_equals_all_true_mask(self):
        cfg = tiny_cfg(chunk_size=10, past_size=0)
        model = decoder.init_weights(cfg, seed=3)
        feats = make_inputs(cfg, 10, seed=4)
        chunks, _ = decoder.decode_incremental(feats, model)
        mask = masks.build_static_mask(10, 10, 0)
        assert np.all(mask.permitted)
        par = decoder.decode_parallel_masked(feats, model, mask)
        assert np.array_equal(chunks[0], par)

    def test_f32_route_agreement(self):
        cfg = tiny_cfg(dtype="f32")
        inc, par = run_both_routes(cfg, 13)
        assert inc.dtype == np.float32
        assert np.max(np.abs(inc.astype(np.float64) - par.astype(np.float64))) <= 1e-4


class TestCaches:
    def test_cache_boundedness(self):
        cfg = tiny_cfg(chunk_size=4, past_size=5)
        model = decoder.init_weights(cfg, seed=0)
        feats = make_inputs(cfg, 23, seed=1)
        state = decoder.init_state(cfg)
        consumed = 0
        for start in range(0, 23, 4):
            _, state = decoder.decode_chunk(feats[start : start + 4], model, state)
            consumed = min(23, start + 4)
            for ls in state.layers:
                for pk, pv in zip(ls.attn.pk, ls.attn.pv):
                    assert len(pk) == len(pv) == min(5, consumed)
                assert ls.conv.pc1.shape == (cfg.kernel1 - 1, cfg.d_model)
                assert ls.conv.pc2.shape == (cfg.kernel2 - 1, cfg.d_ff)
        assert state.frame_offset == 23

    def test_cache_holds_exactly_the_last_past_keys(self):
        # Three chunks of 4 with past 5: afterwards the layer-0 cache
        # must hold the keys of frames 7..11, nothing else.
        cfg = tiny_cfg(chunk_size=4, past_size=5)
        model = decoder.init_weights(cfg, seed=7)
        feats = make_inputs(cfg, 12, seed=8)
        _, state = decoder.decode_incremental(feats, model)
        pe = decoder.positional_encoding(0, 12, cfg.d_model, cfg.dtype)
        x0 = feats + pe
        for i in range(cfg.n_heads):
            pk = state.layers[0].attn.pk[i]
            pv = state.layers[0].attn.pv[i]
            assert pk.shape == (5, cfg.d_head)
            assert np.array_equal(pk, tensor.matmul(x0[7:12], model.layers[0].wk[i]))
            assert np.array_equal(pv, tensor.matmul(x0[7:12], model.layers[0].wv[i]))

    def test_all_sentinel_grows_without_bound(self):
        cfg = tiny_cfg(past_size=masks.ALL)
        model = decoder.init_weights(cfg, seed=2)
        feats = make_inputs(cfg, 16, seed=3)
        _, state = decoder.decode_incremental(feats, model)
        assert len(state.layers[0].attn.pk[0]) == 16

    def test_kernel_one_states_are_empty(self):
        cfg = tiny_cfg(kernel1=1, kernel2=1)
        state = decoder.init_state(cfg)
        assert state.layers[0].conv.pc1.shape == (0, cfg.d_model)
        assert state.layers[0].conv.pc2.shape == (0, cfg.d_ff)


class TestCausality:
    def test_future_chunks_never_change_past_output(self):
        cfg = tiny_cfg()
        model = decoder.init_weights(cfg, seed=5)
        feats = make_inputs(cfg, 16, seed=6)
        base_chunks, _ = decoder.decode_incremental(feats, model)
        tampered = feats.copy()
        tampered[12:] += 10.0
        got_chunks, _ = decoder.decode_incremental(tampered, model)
        for j in range(3):
            assert np.array_equal(base_chunks[j], got_chunks[j])
        mask = masks.build_static_mask(16, cfg.chunk_size, cfg.past_size)
        base_par = decoder.decode_parallel_masked(feats, model, mask)
        got_par = decoder.decode_parallel_masked(tampered, model, mask)
        assert np.array_equal(base_par[:12], got_par[:12])

    def test_zero_past_chunks_attend_independently(self):
        # With S_p=0 and pointwise convs, any frame's output depends
        # only on its own chunk; scrambling chunk 0 leaves chunk 1 rows
        # untouched in the masked parallel route.
        cfg = tiny_cfg(kernel1=1, kernel2=1, n_layers=1, past_size=0, chunk_size=4)
        model = decoder.init_weights(cfg, seed=9)
        feats = make_inputs(cfg, 8, seed=10)
        mask = masks.build_static_mask(8, 4, 0)
        base = decoder.decode_parallel_masked(feats, model, mask)
        scrambled = feats.copy()
        scrambled[:4] = scrambled[:4][::-1] * -2.0
        got = decoder.decode_parallel_masked(scrambled, model, mask)
        assert np.array_equal(base[4:], got[4:])
        assert not np.array_equal(base[:4], got[:4])


class TestStateFiles:
    def test_resume_is_bit_identical(self, tmp_path):
        cfg = tiny_cfg()
        model = decoder.init_weights(cfg, seed=11)
        feats = make_inputs(cfg, 16, seed=12)
        full_chunks, full_state = decoder.decode_incremental(feats, model)
        half_chunks, half_state = decoder.decode_incremental(feats[:8], model)
        path = str(tmp_path / "mid.cfps")
        decoder.save_decoder_state(path, half_state)
        resumed = decoder.load_decoder_state(path, cfg)
        assert resumed.frame_offset == 8
        rest_chunks, end_state = decoder.decode_incremental(feats[8:], model, resumed)
        joined = np.concatenate(half_chunks + rest_chunks, axis=0)
        assert joined.tobytes() == np.concatenate(full_chunks, axis=0).tobytes()
        assert end_state.frame_offset == full_state.frame_offset
        for a, b in zip(
            decoder.state_tensor_list(end_state), decoder.state_tensor_list(full_state)
        ):
            assert a.tobytes() == b.tobytes()

    def test_model_file_roundtrip(self, tmp_path):
        cfg = tiny_cfg()
        model = decoder.init_weights(cfg, seed=13)
        path = str(tmp_path / "m.cfpw")
        decoder.save_model(path, model)
        loaded = decoder.load_model(path)
        assert loaded.config == cfg
        a = decoder.weights_to_named(model)
        b = decoder.weights_to_named(loaded)
        assert a.keys() == b.keys()
        for name in a:
            assert a[name].tobytes() == b[name].tobytes()

    def test_state_validation_errors(self, tmp_path):
        cfg = tiny_cfg()
        model = decoder.init_weights(cfg, seed=14)
        feats = make_inputs(cfg, 8, seed=15)
        _, state = decoder.decode_incremental(feats, model)
        path = str(tmp_path / "s.cfps")
        decoder.save_decoder_state(path, state)
        with pytest.raises(io.FormatError):
            decoder.load_decoder_state(path, tiny_cfg(n_layers=3))
        with pytest.raises(io.FormatError):
            decoder.load_decoder_state(path, tiny_cfg(dtype="f32"))
        with pytest.raises(io.FormatError):
            decoder.load_decoder_state(path, tiny_cfg(kernel1=5))

    def test_named_weights_roundtrip_and_coverage(self):
        cfg = tiny_cfg()
        model = decoder.init_weights(cfg, seed=16)
        named = decoder.weights_to_named(model)
        back = decoder.named_to_weights(cfg, named)
        assert np.array_equal(back.proj_w, model.proj_w)
        assert np.array_equal(back.layers[1].wk[0], model.layers[1].wk[0])
        missing = dict(named)
        del missing["proj_b"]
        with pytest.raises((KeyError, ValueError)):
            decoder.named_to_weights(cfg, missing)


class TestPositionalEncoding:
    def test_first_row_pattern(self):
        pe = decoder.positional_encoding(0, 1, 8)
        assert np.array_equal(pe[0], np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]))

    def test_offset_row_identity(self):
        for k in (1, 5, 17):
            one = decoder.positional_encoding(k, 1, 10)
            table = decoder.positional_encoding(0, k + 1, 10)
            assert np.array_equal(one[0], table[k])

    def test_chunked_concat_equals_one_shot(self):
        whole = decoder.positional_encoding(0, 13, 6)
        parts = [
            decoder.positional_encoding(0, 4, 6),
            decoder.positional_encoding(4, 4, 6),
            decoder.positional_encoding(8, 5, 6),
        ]
        assert np.array_equal(np.concatenate(parts, axis=0), whole)

    def test_against_high_precision_reference(self):
        pe = decoder.positional_encoding(7, 9, 12)
        ref = reference.posenc_mp(7, 9, 12)
        assert np.max(np.abs(pe - ref)) <= 1e-12

    def test_f32_casts_after_f64_angles(self):
        pe32 = decoder.positional_encoding(3, 5, 8, "f32")
        pe64 = decoder.positional_encoding(3, 5, 8, "f64")
        assert pe32.dtype == np.float32
        assert np.array_equal(pe32, pe64.astype(np.float32))


class TestBlockUnits:
    def test_single_chunk_zero_past_is_plain_attention(self):
        cfg = tiny_cfg(past_size=0, n_heads=2)
        w = decoder.init_weights(cfg, seed=20).layers[0]
        x = make_inputs(cfg, 6, seed=21)
        st = decoder.init_state(cfg).layers[0].attn
        got, st2 = decoder.mha_chunk_step(x, w, st, cfg)
        heads = []
        for i in range(cfg.n_heads):
            q = x @ w.wq[i]
            k = x @ w.wk[i]
            v = x @ w.wv[i]
            logits = (q @ k.T) / np.sqrt(cfg.d_head)
            probs = reference.softmax_rows_mp(logits)
            heads.append(probs @ v)
        expect = np.concatenate(heads, axis=1) @ w.wo
        assert np.max(np.abs(got - expect)) <= 1e-12
        assert all(len(pk) == 0 for pk in st2.pk)

    def test_zero_weights_block_is_double_layernorm(self):
        cfg = tiny_cfg()
        w = decoder.init_weights(cfg, seed=22).layers[0]
        z = lambda a: np.zeros_like(a)
        w = decoder.LayerWeights(
            wq=[z(a) for a in w.wq],
            wk=[z(a) for a in w.wk],
            wv=[z(a) for a in w.wv],
            wo=z(w.wo),
            conv1_w=z(w.conv1_w),
            conv1_b=z(w.conv1_b),
            conv2_w=z(w.conv2_w),
            conv2_b=z(w.conv2_b),
            ln1_gamma=np.ones_like(w.ln1_gamma),
            ln1_beta=z(w.ln1_beta),
            ln2_gamma=np.ones_like(w.ln2_gamma),
            ln2_beta=z(w.ln2_beta),
        )
        x = make_inputs(cfg, 5, seed=23)
        st = decoder.init_state(cfg).layers[0]
        y, _ = decoder.fft_block_step(x, w, st, cfg)
        ones = np.ones(cfg.d_model)
        zeros = np.zeros(cfg.d_model)
        expect = tensor.layer_norm(
            tensor.layer_norm(x, ones, zeros, cfg.ln_eps), ones, zeros, cfg.ln_eps
        )
        assert np.array_equal(y, expect)

    def test_chunked_ffn_equals_one_shot(self):
        cfg = tiny_cfg(chunk_size=3)
        w = decoder.init_weights(cfg, seed=24).layers[0]
        x = make_inputs(cfg, 12, seed=25)
        whole, _ = decoder.ffn_chunk_step(x, w, decoder.init_state(cfg).layers[0].conv, cfg)
        st = decoder.init_state(cfg).layers[0].conv
        parts = []
        for s in range(0, 12, 3):
            out, st = decoder.ffn_chunk_step(x[s : s + 3], w, st, cfg)
            parts.append(out)
        assert np.array_equal(np.concatenate(parts, axis=0), whole)


class TestReceptiveField:
    def test_formula_examples(self):
        assert decoder.receptive_field_formula(6, 15, 30) == 210
        assert decoder.receptive_field_formula(2, 60, 30) == 150
        for n, c in [(1, 4), (3, 30), (6, 1)]:
            assert decoder.receptive_field_formula(n, 0, c) == (n + 1) * c

    def test_oracle_adds_one_chunk_per_hop_inside_band(self):
        # For 0 < S_p <= S_c one attention hop reaches exactly one
        # chunk back, so the reach is (N_d+1) chunks.
        for n in range(1, 7):
            for c in (1, 4, 30):
                for p in sorted({1, (c + 1) // 2, c}):
                    rep = decoder.receptive_field_oracle(
                        decoder.DecoderConfig(
                            n_layers=n, n_heads=1, d_model=8, chunk_size=c, past_size=p
                        )
                    )
                    assert rep.r_oracle == (n + 1) * c, (n, c, p)

    def test_oracle_zero_past_reaches_only_own_chunk(self):
        for n in (1, 3, 6):
            rep = decoder.receptive_field_oracle(
                decoder.DecoderConfig(n_layers=n, n_heads=1, d_model=8, chunk_size=4, past_size=0)
            )
            assert rep.r_oracle == 4
            assert rep.r_exact_frames == 4

    def test_oracle_past_beyond_chunk(self):
        # Each hop reaches ceil(S_p/S_c) chunks back, so the exact
        # reach is (N_d * ceil(S_p/S_c) + 1) chunks.
        c = 30
        rep = decoder.receptive_field_oracle(
            decoder.DecoderConfig(n_layers=1, n_heads=1, d_model=8, chunk_size=c, past_size=2 * c)
        )
        assert rep.r_oracle == 3 * c
        rep = decoder.receptive_field_oracle(
            decoder.DecoderConfig(n_layers=2, n_heads=1, d_model=8, chunk_size=c, past_size=2 * c)
        )
        assert rep.r_oracle == 150
        assert rep.r_formula == 150  # the one (N_d, multiple) pair where both agree
        rep = decoder.receptive_field_oracle(
            decoder.DecoderConfig(n_layers=3, n_heads=1, d_model=8, chunk_size=c, past_size=2 * c)
        )
        assert rep.r_oracle == 7 * c
        assert rep.r_formula == 6 * c  # closed form undercounts here; reported, not reconciled

    def test_oracle_all_history(self):
        rep = decoder.receptive_field_oracle(
            decoder.DecoderConfig(n_layers=2, n_heads=1, d_model=8, chunk_size=5, past_size=masks.ALL)
        )
        assert rep.unbounded
        assert rep.r_formula is None
        assert rep.earliest_frame == 0
        assert rep.r_exact_frames == rep.horizon_frames

    def test_per_layer_reach_is_monotone(self):
        rep = decoder.receptive_field_oracle(
            decoder.DecoderConfig(n_layers=4, n_heads=1, d_model=8, chunk_size=6, past_size=6)
        )
        assert len(rep.per_layer) == 4
        assert all(a >= b for a, b in zip(rep.per_layer, rep.per_layer[1:]))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            decoder.DecoderConfig(d_model=10, n_heads=3)
        with pytest.raises(ValueError):
            decoder.DecoderConfig(chunk_size=0)
        with pytest.raises(ValueError):
            decoder.DecoderConfig(past_size=-1)
        with pytest.raises(ValueError):
            decoder.DecoderConfig(past_size="half")
        with pytest.raises(ValueError):
            decoder.DecoderConfig(dtype="f16")

    def test_dict_roundtrip_rejects_unknown_keys(self):
        cfg = tiny_cfg()
        assert decoder.DecoderConfig.from_dict(cfg.to_dict()) == cfg
        bad = cfg.to_dict() | {"dropout": 0.1}
        with pytest.raises(ValueError):
            decoder.DecoderConfig.from_dict(bad)

    def test_shape_errors(self):
        cfg = tiny_cfg()
        model = decoder.init_weights(cfg, seed=0)
        with pytest.raises(ShapeError):
            decoder.decode_incremental(np.zeros((0, cfg.d_model)), model)
        with pytest.raises(ShapeError):
            decoder.decode_incremental(np.zeros((4, cfg.d_model + 1)), model)
        feats = make_inputs(cfg, 6)
        with pytest.raises(ShapeError):
            decoder.decode_parallel_masked(feats, model, masks.build_static_mask(5, 2, 1))
