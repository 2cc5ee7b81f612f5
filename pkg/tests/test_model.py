import numpy as np
import pytest

from f3kit import tensor as T
from f3kit.cfd import cfd_forward, sub_decoder
from f3kit.cfm import cfm, init_cfm
from f3kit.encoder import FeaturePyramid, encode
from f3kit.gradcheck import grad_check, numeric_grad
from f3kit.model import ModelConfig, build_model, forward, infer
from f3kit.params import ParamStore, cbr
from f3kit.tensor import ShapeError, Tensor

TINY = ModelConfig(widths=(2, 2, 3, 3), channels=3, n_decoders=2)


def image(n=1, size=96, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(0, 1, (n, 3, size, size)))


def zero_block(store, name):
    store[f"{name}.conv.w"].data[:] = 0
    store[f"{name}.bn.gamma"].data[:] = 0
    store[f"{name}.bn.beta"].data[:] = 0


# -------------------------------------------------------------------- encoder


def test_encoder_pyramid_sizes_and_batch():
    m = build_model(ModelConfig(), seed=0)
    pyr = encode(image(n=2), m.store)
    assert [f.shape for f in pyr.levels] == [(2, 64, 24, 24), (2, 64, 12, 12), (2, 64, 6, 6), (2, 64, 3, 3)]


@pytest.mark.parametrize("size", [32, 64, 160])
def test_encoder_halving(size):
    m = build_model(TINY, seed=0)
    pyr = encode(image(size=size), m.store)
    sizes = [f.shape[2] for f in pyr.levels]
    assert sizes == [size // 4, size // 8, size // 16, size // 32]


def test_encoder_rejects_indivisible():
    m = build_model(TINY, seed=0)
    with pytest.raises(ShapeError, match="32"):
        encode(image(size=100), m.store)


def test_encoder_gradient_reaches_first_stage():
    m = build_model(TINY, seed=1)
    x = image(n=2, size=32, seed=1)
    w = m.store["enc.stem.conv.w"]
    wgt = [Tensor(np.random.default_rng(i).standard_normal(s)) for i, s in enumerate([(2, 3, 8, 8), (2, 3, 4, 4), (2, 3, 2, 2), (2, 3, 1, 1)])]

    def f(_):
        pyr = encode(x, m.store)
        acc = T.reduce_sum(T.mul(pyr.f2, wgt[0]))
        for lvl, wg in zip(pyr.levels[1:], wgt[1:]):
            acc = T.add(acc, T.reduce_sum(T.mul(lvl, wg)))
        return acc

    m.store.zero_grad()
    T.backward(f(None))
    analytic = w.grad.reshape(-1)[0]
    numeric = numeric_grad(f, w, 1e-6, indices=[0]).reshape(-1)[0]
    assert analytic != 0
    assert abs(analytic - numeric) / max(abs(analytic), abs(numeric)) < 1e-5


def test_encoder_deterministic():
    a = encode(image(), build_model(ModelConfig(), seed=3).store)
    b = encode(image(), build_model(ModelConfig(), seed=3).store)
    for x, y in zip(a.levels, b.levels):
        assert np.array_equal(x.data, y.data)


# ------------------------------------------------------------------------ cfm


def cfm_store(c=4, seed=0):
    store = ParamStore()
    init_cfm(store, "c", c, np.random.default_rng(seed))
    return store


def test_cfm_shapes():
    store = cfm_store(64)
    rng = np.random.default_rng(0)
    lo, hi = cfm(Tensor(rng.standard_normal((1, 64, 24, 24))), Tensor(rng.standard_normal((1, 64, 12, 12))), store, "c")
    assert lo.shape == hi.shape == (1, 64, 24, 24)


def test_cfm_rejects_channel_mismatch():
    store = cfm_store(4)
    with pytest.raises(ShapeError):
        cfm(T.zeros((1, 4, 8, 8)), T.zeros((1, 3, 4, 4)), store, "c")


def test_cfm_zero_product_reduces_to_residual():
    store = cfm_store(4, seed=2)
    zero_block(store, "c.g_l")
    rng = np.random.default_rng(1)
    f_l = Tensor(rng.standard_normal((2, 4, 8, 8)))
    f_h = Tensor(rng.standard_normal((2, 4, 4, 4)))
    lo, hi = cfm(f_l, f_h, store, "c")

    # hand-composed degenerate path: M applied to an all-zero product
    zero = T.zeros((2, 4, 8, 8))
    m_l0 = cbr(zero, store, "c.m_l", True)
    m_h0 = cbr(zero, store, "c.m_h", True)
    # batch norm of a constant map is just relu(beta)
    assert np.array_equal(m_l0.data, np.broadcast_to(np.maximum(store["c.m_l.bn.beta"].data, 0).reshape(1, 4, 1, 1), zero.shape))
    e_l = cbr(f_l, store, "c.entry_l", True)
    e_h = cbr(T.bilinear_resize(f_h, 8, 8), store, "c.entry_h", True)
    exp_lo = cbr(T.add(e_l, m_l0), store, "c.restore_l", True)
    exp_hi = cbr(T.add(e_h, m_h0), store, "c.restore_h", True)
    assert np.array_equal(lo.data, exp_lo.data)
    assert np.array_equal(hi.data, exp_hi.data)


def test_cfm_symmetry_under_role_swap():
    store = cfm_store(3, seed=4)
    swapped = ParamStore()
    swap = {"_l": "_h", "_h": "_l"}
    for name, t in store.params.items():
        parts = name.split(".")
        blk = parts[1]
        parts[1] = blk[:-2] + swap[blk[-2:]]
        swapped.add(".".join(parts), t.data.copy())
    for name, a in store.buffers.items():
        parts = name.split(".")
        parts[1] = parts[1][:-2] + swap[parts[1][-2:]]
        swapped.add_buffer(".".join(parts), a)
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((2, 3, 6, 6)))
    b = Tensor(rng.standard_normal((2, 3, 6, 6)))
    lo, hi = cfm(a, b, store, "c")
    lo2, hi2 = cfm(b, a, swapped, "c")
    assert np.array_equal(lo.data, hi2.data)
    assert np.array_equal(hi.data, lo2.data)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cfm_gradient(seed):
    store = cfm_store(2, seed=seed)
    rng = np.random.default_rng(seed + 10)
    f_l = Tensor(rng.standard_normal((2, 2, 4, 4)))
    f_h = Tensor(rng.standard_normal((2, 2, 2, 2)))
    w = Tensor(rng.standard_normal((2, 2, 4, 4)))
    v = Tensor(rng.standard_normal((2, 2, 4, 4)))

    def f(fl=f_l, fh=f_h):
        lo, hi = cfm(fl, fh, store, "c")
        return T.add(T.reduce_sum(T.mul(lo, w)), T.reduce_sum(T.mul(hi, v)))

    assert grad_check(lambda t: f(fl=t), f_l) < 1e-5
    assert grad_check(lambda t: f(fh=t), f_h) < 1e-5
    g = store["c.g_h.conv.w"]
    assert grad_check(lambda t: f(), g) < 1e-5


def test_cfm_finite_for_initializer_draws():
    for seed in range(5):
        store = cfm_store(8, seed=seed)
        rng = np.random.default_rng(seed)
        lo, hi = cfm(Tensor(rng.standard_normal((1, 8, 8, 8)) * 100), Tensor(rng.standard_normal((1, 8, 4, 4))), store, "c")
        assert np.all(np.isfinite(lo.data)) and np.all(np.isfinite(hi.data))


def test_cfm_plain_addition_switch():
    store = ParamStore()
    init_cfm(store, "c", 3, np.random.default_rng(0), crossing=False)
    assert not any(".g_l." in n or ".m_h." in n for n in store.params)
    a = Tensor(np.random.default_rng(0).standard_normal((1, 3, 4, 4)))
    lo, hi = cfm(a, a, store, "c", crossing=False)
    assert lo.shape == hi.shape == (1, 3, 4, 4)


# ------------------------------------------------------------------------ cfd


def test_sub_decoder_shapes_and_gradient_to_f5():
    m = build_model(ModelConfig(), seed=0)
    pyr = encode(image(), m.store)
    feats, p = sub_decoder(pyr.levels, m.store, "dec1")
    assert p.shape == (1, 64, 24, 24)
    assert [f.shape for f in feats] == [f.shape for f in pyr.levels]

    small = build_model(TINY, seed=0)
    rng = np.random.default_rng(0)
    levels = [Tensor(rng.standard_normal((2, 3, s, s))) for s in (8, 4, 2, 1)]
    wgt = Tensor(rng.standard_normal((2, 3, 8, 8)))
    f5 = levels[3]

    def f(t):
        _, pp = sub_decoder((levels[0], levels[1], levels[2], t), small.store, "dec1")
        return T.reduce_sum(T.mul(pp, wgt))

    f5.requires_grad = True
    T.backward(f(f5))
    assert np.any(f5.grad != 0)
    num = numeric_grad(f, f5, 1e-6, indices=[0])
    assert abs(num.reshape(-1)[0] - f5.grad.reshape(-1)[0]) <= 1e-5 * max(abs(num.reshape(-1)[0]), 1e-8)


def test_sub_decoder_degenerate_path_matches_composition():
    small = build_model(TINY, seed=5)
    store = small.store
    for pair in ("cfm45", "cfm34", "cfm23"):
        zero_block(store, f"dec1.{pair}.g_l")
    rng = np.random.default_rng(2)
    f2, f3, f4, f5 = [Tensor(rng.standard_normal((2, 3, s, s))) for s in (8, 4, 2, 1)]
    _, p = sub_decoder((f2, f3, f4, f5), store, "dec1")

    def degenerate(prefix, lo, hi):
        hi = T.bilinear_resize(hi, *lo.shape[2:]) if hi.shape != lo.shape else hi
        e_l = cbr(lo, store, f"{prefix}.entry_l", True)
        m0 = cbr(T.zeros(lo.shape), store, f"{prefix}.m_l", True)
        return cbr(T.add(e_l, m0), store, f"{prefix}.restore_l", True)

    a45 = degenerate("dec1.cfm45", f4, f5)
    a345 = degenerate("dec1.cfm34", f3, a45)
    expect = degenerate("dec1.cfm23", f2, a345)
    assert np.array_equal(p.data, expect.data)


def test_cfd_n1_no_feedback():
    m = build_model(TINY, seed=0)
    out = cfd_forward(encode(image(size=64), m.store), m.store, n_decoders=1)
    assert len(out.maps) == 1 and out.feedback_additions == 0 and out.cfm_calls == 3


def test_cfd_rejects_n0():
    m = build_model(TINY, seed=0)
    with pytest.raises(ValueError):
        cfd_forward(encode(image(size=32), m.store), m.store, n_decoders=0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_cfd_map_counts_and_resolution(n):
    m = build_model(ModelConfig(widths=(4, 4, 8, 8), channels=8, n_decoders=n), seed=0)
    out = forward(image(), m)
    assert len(out.maps) == n and len(out.aux) == 4
    assert all(t.shape == (1, 1, 96, 96) for t in out.maps + out.aux)
    assert out.cfm_calls == 3 * n and out.head_calls == n
    assert out.feedback_additions == 4 * (n - 1)


def test_first_map_invariant_to_n_and_later_decoders():
    m = build_model(ModelConfig(widths=(4, 4, 8, 8), channels=8, n_decoders=3), seed=0)
    x = image(seed=4)
    m1 = [forward(x, m, train=False, n_decoders=n).maps[0].data for n in (1, 2, 3)]
    assert np.array_equal(m1[0], m1[1]) and np.array_equal(m1[0], m1[2])
    before = forward(x, m, train=False).maps
    for name, t in m.store.params.items():
        if name.startswith("dec3.") or name == "head3.w":
            t.data += 1.0
    after = forward(x, m, train=False).maps
    assert np.array_equal(before[0].data, after[0].data)
    assert np.array_equal(before[1].data, after[1].data)
    assert not np.array_equal(before[2].data, after[2].data)


def test_shared_decoders_switch():
    m = build_model(ModelConfig(widths=(4, 4, 8, 8), channels=8, n_decoders=2, shared_decoders=True), seed=0)
    assert not any(n.startswith("dec2.") for n in m.store.params)
    assert len(forward(image(size=64), m).maps) == 2


def test_infer_range_and_determinism():
    a = infer(image(n=2, seed=1), build_model(ModelConfig(), seed=7))
    b = infer(image(n=2, seed=1), build_model(ModelConfig(), seed=7))
    assert a.shape == (2, 1, 96, 96)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert 0 < a.mean() < 1


def test_total_model_gradient():
    from f3kit.losses import total_loss

    m = build_model(ModelConfig(widths=(2, 2, 2, 2), channels=2, n_decoders=2), seed=3)
    x = image(n=2, size=32, seed=3)
    gt = np.zeros((2, 1, 32, 32))
    gt[:, :, 8:20, 10:26] = 1

    def f(_):
        loss, _ = total_loss(forward(x, m), gt, gamma=5.0, k=5)
        return loss

    for name in ("head2.w", "aux3.w", "dec2.cfm23.g_l.conv.w", "dec1.cfm45.restore_h.bn.gamma", "enc.proj0.w"):
        p = m.store[name]
        idx = list(range(min(p.size, 12)))
        assert grad_check(f, p, 1e-6, indices=idx) < 1e-5, name
