import logging

import numpy as np
import pytest
from conftest import natural_frame
from hypothesis import given, strategies as st

from hybridvc import ilf, nn
from hybridvc.codec.coder import CodecConfig, decode_frame, encode_frame
from hybridvc.codec.frame import Frame
from hybridvc.ilf import (IlfDataset, IlfModelSet, ModelNotFound, apply_ilf, build_ilf_network, ctu_grid,
                          decide_ctu_flags, prepare_ilf_dataset, train_ilf)


def perturbed(channels=4, seed=0, scale=0.05):
    net = build_ilf_network(channels, seed)
    rng = np.random.default_rng(seed + 100)
    for p in net.parameters().values():
        p += rng.normal(0, scale, p.shape)
    return net


# -- topology ----------------------------------------------------------------------------------


def test_conv_count_is_34():
    net = build_ilf_network(8)
    assert len(net.conv_layers()) == 34
    kinds = [ly.kind for ly in net.layers]
    assert kinds.count(nn.RELU) == 16
    assert kinds.count(nn.ADD) == 17
    assert net.layers[-1].kind == nn.ADD and net.layers[-1].skip == 0


def test_default_width_is_64():
    net = build_ilf_network()
    assert net.layers[0].weight.shape == (64, 1, 3, 3)
    assert net.layers[-2].weight.shape == (1, 64, 3, 3)


@given(h=st.integers(1, 20), w=st.integers(1, 20))
def test_zero_network_is_identity_any_size(h, w):
    net = nn.zero_parameters(build_ilf_network(4))
    x = np.random.default_rng(h * 31 + w).random((2, 1, h, w))
    assert np.array_equal(nn.forward(net, x), x)


def test_fresh_network_is_identity():
    x = np.random.default_rng(0).random((1, 1, 12, 9))
    assert np.array_equal(nn.forward(build_ilf_network(4), x), x)


def test_output_shape_matches_input():
    assert nn.forward(perturbed(), np.zeros((3, 1, 13, 7))).shape == (3, 1, 13, 7)


def test_channels_must_be_positive():
    with pytest.raises(ValueError):
        build_ilf_network(0)


# -- model sets --------------------------------------------------------------------------------


def test_nearest_qp_ties_go_up():
    ms = IlfModelSet({22: "a", 26: "b", 37: "c"})
    assert ms.nearest_qp(24) == 26
    assert ms.nearest_qp(23) == 22
    assert ms.nearest_qp(51) == 37
    assert ms.nearest_qp(0) == 22
    assert ms.select(32) == "c"  # 26 is 6 away, 37 is 5


def test_model_set_round_trip(tmp_path):
    ms = IlfModelSet({22: perturbed(seed=1), 37: perturbed(seed=2)})
    for net in ms.values():
        for p in net.parameters().values():
            p[...] = p.astype(np.float32)  # the file format stores float32
    ms.save(tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ilf_q22.dlnn", "ilf_q37.dlnn"]
    back = IlfModelSet.load(tmp_path)
    x = np.random.default_rng(0).random((1, 1, 8, 8))
    for qp in (22, 37):
        assert np.array_equal(nn.forward(back[qp], x), nn.forward(ms[qp], x))


def test_missing_models_raise(tmp_path):
    with pytest.raises(ModelNotFound, match="model not found"):
        IlfModelSet.load(tmp_path)
    with pytest.raises(ModelNotFound):
        IlfModelSet().select(22)
    f = natural_frame(64, 64)
    with pytest.raises(ModelNotFound):
        apply_ilf(f, None, 22, [[True, True]])


def test_frame_qp_dispatches_to_matching_model():
    ms = IlfModelSet({q: perturbed(seed=q) for q in ilf.TRAINED_QPS})
    f = natural_frame(64, 64)
    for qp, want in ((22, 22), (27, 27), (30, 32), (29, 27), (45, 37), (10, 22)):
        seen = []
        out = apply_ilf(f, ms, qp, [[True, True]], on_select=seen.append)
        assert seen == [want]
        assert out.same_samples(apply_ilf(f, IlfModelSet({want: ms[want]}), qp, [[True, True]]))


# -- application ---------------------------------------------------------------------------------


def test_flags_off_leave_frame_unchanged():
    f = natural_frame(128, 192)
    out = apply_ilf(f, IlfModelSet({32: perturbed()}), 32, np.zeros((6, 2), bool))
    assert out.same_samples(f) and out is not f


def test_zero_model_all_flags_is_exact_identity():
    f = natural_frame(128, 192)
    ms = IlfModelSet({32: nn.zero_parameters(build_ilf_network(4))})
    assert apply_ilf(f, ms, 32, np.ones((6, 2), bool)).same_samples(f)


def test_single_ctu_flag_is_local():
    f = natural_frame(128, 192)
    flags = np.zeros((6, 2), bool)
    flags[4] = True  # CTU at x=64, y=64
    out = apply_ilf(f, IlfModelSet({32: perturbed()}), 32, flags)
    mask = np.ones((128, 192), bool)
    mask[64:128, 64:128] = False
    assert np.array_equal(out.y[mask], f.y[mask])
    assert np.array_equal(out.u[mask[::2, ::2]], f.u[mask[::2, ::2]])
    assert not np.array_equal(out.y[~mask], f.y[~mask])


def test_changes_inside_one_ctu_stay_inside_it():
    f = natural_frame(128, 192)
    g = f.copy()
    g.y[64 + 8 : 128 - 8, 8 : 64 - 8] ^= 0x0F  # interior of CTU 3, clear of the context margin
    g.u[32 + 8 : 64 - 8, 8 : 32 - 8] ^= 0x0F
    ms = IlfModelSet({32: perturbed()})
    a = apply_ilf(f, ms, 32, np.ones((6, 2), bool))
    b = apply_ilf(g, ms, 32, np.ones((6, 2), bool))
    diff = a.y != b.y
    assert diff[64:128, 0:64].any()
    diff[64:128, 0:64] = False
    assert not diff.any()
    dc = a.u != b.u
    dc[32:64, 0:32] = False
    assert not dc.any()


def test_partial_ctus_at_frame_edge():
    assert ctu_grid(80, 48, 64) == [(0, 0, 64, 48), (64, 0, 16, 48)]
    f = natural_frame(48, 80)
    out = apply_ilf(f, IlfModelSet({32: perturbed()}), 32, [[True, True], [True, True]])
    assert out.y.shape == f.y.shape


def test_flag_count_must_match_grid():
    with pytest.raises(ValueError):
        apply_ilf(natural_frame(64, 128), IlfModelSet({32: perturbed()}), 32, [[True, True]])


def test_filtering_is_independent_of_ctu_order():
    f = natural_frame(128, 128)
    ms = IlfModelSet({32: perturbed()})
    full = apply_ilf(f, ms, 32, np.ones((4, 2), bool))
    acc = f.copy()
    for k in reversed(range(4)):
        flags = np.zeros((4, 2), bool)
        flags[k] = True
        part = apply_ilf(f, ms, 32, flags)
        x0, y0, w, h = ctu_grid(128, 128, 64)[k]
        acc.y[y0 : y0 + h, x0 : x0 + w] = part.y[y0 : y0 + h, x0 : x0 + w]
        acc.u[y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2] = part.u[y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2]
        acc.v[y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2] = part.v[y0 // 2 : (y0 + h) // 2, x0 // 2 : (x0 + w) // 2]
    assert acc.same_samples(full)


# -- flag decisions ----------------------------------------------------------------------------------


def test_perfect_filter_turns_every_flag_on():
    orig = natural_frame(128, 128)
    pre = Frame(orig.y ^ 1, orig.u ^ 1, orig.v ^ 1)
    assert decide_ctu_flags(orig, pre, orig).all()


def test_no_op_filter_turns_every_flag_off():
    orig = natural_frame(128, 128)
    pre = Frame(orig.y ^ 1, orig.u ^ 1, orig.v ^ 1)
    assert not decide_ctu_flags(orig, pre, pre).any()


def brute_flags(orig, pre, filt, ctu):
    out = []
    for x0, y0, w, h in ctu_grid(orig.width, orig.height, ctu):
        def err(a, b, s):
            return sum(float(v) ** 2 for v in (a[s].astype(int) - b[s]).ravel())
        ys = (slice(y0, y0 + h), slice(x0, x0 + w))
        cs = (slice(y0 // 2, (y0 + h) // 2), slice(x0 // 2, (x0 + w) // 2))
        lum = err(filt.y, orig.y, ys) < err(pre.y, orig.y, ys)
        chroma = err(filt.u, orig.u, cs) + err(filt.v, orig.v, cs) < err(pre.u, orig.u, cs) + err(pre.v, orig.v, cs)
        out.append((lum, chroma))
    return np.array(out)


def test_left_half_fixture():
    rng = np.random.default_rng(4)
    orig = natural_frame(128, 256)
    noise = lambda p: np.clip(p + rng.integers(-6, 7, p.shape), 0, 255)  # noqa: E731
    pre = Frame(noise(orig.y), noise(orig.u), noise(orig.v))
    filt = pre.copy()
    filt.y[:, :128] = orig.y[:, :128]
    filt.u[:, :64] = orig.u[:, :64]
    filt.v[:, :64] = orig.v[:, :64]
    filt.y[:, 128:] = np.clip(pre.y[:, 128:] + 9 * np.sign(pre.y[:, 128:] - orig.y[:, 128:]), 0, 255)
    flags = decide_ctu_flags(orig, pre, filt, 64)
    want = np.array([[x < 128] * 2 for y in (0, 64) for x in (0, 64, 128, 192)])
    assert np.array_equal(flags, want)
    assert np.array_equal(flags, brute_flags(orig, pre, filt, 64))


@given(seed=st.integers(0, 2**31), ctu=st.sampled_from([16, 32, 64]))
def test_enabled_flags_never_raise_ctu_error(seed, ctu):
    rng = np.random.default_rng(seed)
    orig = Frame(rng.integers(0, 256, (64, 96)), rng.integers(0, 256, (32, 48)), rng.integers(0, 256, (32, 48)))
    jitter = lambda p, s: np.clip(p + rng.integers(-s, s + 1, p.shape), 0, 255)  # noqa: E731
    pre = Frame(jitter(orig.y, 5), jitter(orig.u, 5), jitter(orig.v, 5))
    filt = Frame(jitter(orig.y, 5), jitter(orig.u, 5), jitter(orig.v, 5))
    flags = decide_ctu_flags(orig, pre, filt, ctu)
    assert np.array_equal(flags, brute_flags(orig, pre, filt, ctu))
    for (x0, y0, w, h), (fy, fc) in zip(ctu_grid(96, 64, ctu), flags):
        s = np.s_[y0 : y0 + h, x0 : x0 + w]
        chosen = filt.y[s] if fy else pre.y[s]
        assert np.sum((chosen - orig.y[s]) ** 2) <= np.sum((pre.y[s] - orig.y[s]) ** 2)


# -- encoder integration ------------------------------------------------------------------------------


def test_ilf_round_trip_and_flag_rule_in_encoder():
    f = natural_frame(128, 128)
    ms = IlfModelSet({37: perturbed(seed=3, scale=0.02)})
    cfg = CodecConfig(qp=37, cnn_ilf=True, ilf_models=ms)
    payload, rec, st = encode_frame(f, cfg)
    assert decode_frame(payload, cfg, None, "I", 128, 128).same_samples(rec)
    assert st["psnr_filtered"][0] >= st["psnr_deblocked"][0]
    assert len(st["ilf_flags"]) == 4


def test_encoder_without_models_reports_missing():
    with pytest.raises(ModelNotFound, match="model not found"):
        encode_frame(natural_frame(64, 64), CodecConfig(qp=37, cnn_ilf=True))


# -- dataset and training --------------------------------------------------------------------------------


def test_140_square_gives_four_pairs():
    img = natural_frame(140, 140).y
    ds = prepare_ilf_dataset([img], 37)
    assert len(ds) == 4
    assert ds.compressed.shape == (4, 70, 70) and ds.original.dtype == np.uint8
    tiles = {ds.original[i].tobytes() for i in range(4)}
    assert tiles == {img[y : y + 70, x : x + 70].astype(np.uint8).tobytes() for y in (0, 70) for x in (0, 70)}


def test_small_images_are_skipped_with_warning(caplog):
    big = natural_frame(144, 144).y
    with caplog.at_level(logging.WARNING, logger="hybridvc.ilf"):
        ds = prepare_ilf_dataset([np.zeros((69, 200)), big, np.zeros((200, 50))], 37)
    assert ds.skipped == 2 and len(ds) == 4
    assert "skipped 2" in caplog.text


def test_pairs_are_compressed_with_filters_off():
    img = natural_frame(144, 144).y
    ds = prepare_ilf_dataset([img], 37, seed=0)
    _, rec, _ = encode_frame(Frame.from_luma(img), CodecConfig(qp=37, deblock=False))
    assert {ds.compressed[i].tobytes() for i in range(4)} == {
        rec.y[y : y + 70, x : x + 70].astype(np.uint8).tobytes() for y in (0, 70) for x in (0, 70)}


def test_low_qp_pairs_nearly_identical():
    ds = prepare_ilf_dataset([natural_frame(140, 140).y], 0)
    mse = np.mean((ds.compressed.astype(float) - ds.original) ** 2)
    assert mse < 0.5


def test_shuffle_is_seeded():
    imgs = [natural_frame(140, 280).y]
    a, b, c = (prepare_ilf_dataset(imgs, 37, seed=s) for s in (5, 5, 6))
    assert np.array_equal(a.compressed, b.compressed) and np.array_equal(a.original, b.original)
    assert not np.array_equal(a.original, c.original)


def small_dataset(n=6, size=24, seed=0, identical=False):
    rng = np.random.default_rng(seed)
    orig = natural_frame(96, 144).y
    tiles = [orig[y : y + size, x : x + size] for y in range(0, 96 - size + 1, size) for x in range(0, 144 - size + 1, size)]
    orig = np.stack(tiles[:n]).astype(np.uint8)
    comp = orig if identical else np.clip(orig.astype(int) + rng.integers(-8, 9, orig.shape), 0, 255).astype(np.uint8)
    return IlfDataset(comp.copy(), orig.copy())


def test_identical_pairs_are_a_fixed_point():
    net, hist = train_ilf(small_dataset(identical=True), epochs=2, lr=1e-2, channels=4)
    assert hist["probe_before"] == 0.0 and max(hist["epoch_loss"]) == 0.0
    x = np.random.default_rng(1).random((1, 1, 16, 16))
    assert np.array_equal(nn.forward(net, x), x)


def test_zero_learning_rate_keeps_parameters():
    start = build_ilf_network(4, seed=3)
    before = {k: v.copy() for k, v in start.parameters().items()}
    net, _ = train_ilf(small_dataset(), epochs=1, lr=0.0, channels=4, net=start)
    for k, v in net.parameters().items():
        assert np.array_equal(v, before[k])


def test_training_lowers_probe_loss():
    net, hist = train_ilf(small_dataset(n=8), qp=37, epochs=6, lr=5e-3, batch_size=4, channels=4, seed=0)
    assert hist["probe_after"] < hist["probe_before"]
    assert net.name == "ilf_q37" and hist["steps"] == 12


def test_training_is_deterministic():
    a, ha = train_ilf(small_dataset(), epochs=2, lr=1e-3, channels=4, seed=9)
    b, hb = train_ilf(small_dataset(), epochs=2, lr=1e-3, channels=4, seed=9)
    assert ha == hb
    assert all(np.array_equal(a.parameters()[k], b.parameters()[k]) for k in a.parameters())


def test_divergence_aborts():
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError, match="diverged"):
        train_ilf(small_dataset(), epochs=50, lr=1e8, momentum=0.0, clip=None, channels=4)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_ilf(IlfDataset(np.zeros((0, 70, 70), np.uint8), np.zeros((0, 70, 70), np.uint8)))
