import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from f3kit import tensor as T
from f3kit.cfd import CfdOutput
from f3kit.gradcheck import grad_check
from f3kit.losses import (
    AUX_WEIGHTS,
    alpha_map,
    combine,
    default_window,
    map_loss,
    ppa_loss,
    total_loss,
    wbce,
    wiou,
)
from f3kit.tensor import ShapeError, Tensor

from oracles import alpha_naive, wbce_naive, wiou_naive


def one_pixel(logit=0.0, g=1.0):
    return Tensor(np.full((1, 1, 1, 1), logit)), np.full((1, 1, 1, 1), g), np.zeros((1, 1, 1, 1))


def random_instance(seed, h=8, w=8, n=1):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((n, 1, h, w)) * 2
    gt = (rng.random((n, 1, h, w)) < 0.4).astype(float)
    return logits, gt


# ---------------------------------------------------------------------- alpha


def test_alpha_constant_masks_are_zero():
    for v in (0.0, 1.0):
        assert np.array_equal(alpha_map(np.full((6, 7), v), 5), np.zeros((6, 7)))


def test_alpha_center_pixel():
    gt = np.zeros((5, 5))
    gt[2, 2] = 1
    a = alpha_map(gt, 3)
    assert abs(a[2, 2] - 8 / 9) < 1e-12
    for i, j in [(1, 2), (3, 2), (2, 1), (2, 3)]:
        assert abs(a[i, j] - 1 / 9) < 1e-12


def test_alpha_rejects_non_binary():
    with pytest.raises(ValueError):
        alpha_map(np.full((3, 3), 0.5), 3)


def test_alpha_square_boundary_ring():
    gt = np.zeros((40, 40))
    gt[10:30, 10:30] = 1
    a = alpha_map(gt, 9)
    assert a[20, 20] == 0 and a[2, 2] == 0
    # straight edge: 4 of the 9 window columns lie on the other side
    assert abs(a[20, 10] - 4 / 9) < 1e-12
    assert abs(a[20, 9] - 4 / 9) < 1e-12
    assert abs(a[20, 14] - 0) < 1e-12
    assert a[10:30, 10:30].max() > 0.4


def test_alpha_thin_bar_is_bright_everywhere():
    gt = np.zeros((30, 30))
    gt[14:16, 3:27] = 1
    a = alpha_map(gt, 9)
    assert a[14:16, 5:25].min() > 0.7


@settings(max_examples=40, deadline=None)
@given(arrays(np.int8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 1)), st.sampled_from([3, 5, 7, 9]))
def test_alpha_range_and_oracle(mask, k):
    gt = mask.astype(float)
    a = alpha_map(gt, k)
    assert a.min() >= 0 and a.max() <= 1
    assert np.max(np.abs(a - alpha_naive(gt, k))) <= 1e-12


def test_alpha_zero_where_window_constant():
    rng = np.random.default_rng(0)
    gt = (rng.random((16, 16)) < 0.5).astype(float)
    gt[:8, :8] = 1
    a = alpha_map(gt, 3)
    assert np.all(a[1:6, 1:6] == 0)


# ----------------------------------------------------------------------- wbce


def test_wbce_single_pixel_is_ln2():
    x, g, a = one_pixel()
    assert abs(wbce(x, g, a, 5.0).item() - math.log(2)) < 1e-12


def test_wbce_alpha_zero_is_plain_mean_bce():
    logits, gt = random_instance(0)
    plain = np.mean(np.maximum(logits, 0) - logits * gt + np.log1p(np.exp(-np.abs(logits))))
    assert abs(wbce(Tensor(logits), gt, np.zeros_like(gt), 5.0).item() - plain) < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("gamma", [0.0, 5.0])
def test_wbce_matches_oracle_and_gradient(seed, gamma):
    logits, gt = random_instance(seed)
    alpha = alpha_map(gt, 3)
    got = wbce(Tensor(logits), gt, alpha, gamma).item()
    assert abs(got - wbce_naive(logits, gt, alpha, gamma)) < 1e-12
    assert grad_check(lambda t: wbce(t, gt, alpha, gamma), Tensor(logits)) < 1e-5


def test_wbce_printed_denominator():
    logits, gt = random_instance(3)
    alpha = alpha_map(gt, 3)
    x = Tensor(logits)
    weighted = wbce(x, gt, alpha, 5.0).item()
    printed = wbce(x, gt, alpha, 5.0, denominator="gamma_alpha").item()
    w = 1 + 5 * alpha
    assert abs(printed - weighted * w.sum() / (5 * alpha).sum()) < 1e-12
    with pytest.raises(ValueError):
        wbce(x, np.zeros_like(gt), np.zeros_like(gt), 5.0, denominator="gamma_alpha")


def test_wbce_batch_mean():
    logits, gt = random_instance(4, n=2)
    alpha = alpha_map(gt, 3)
    both = wbce(Tensor(logits), gt, alpha, 5.0).item()
    each = [wbce(Tensor(logits[i : i + 1]), gt[i : i + 1], alpha[i : i + 1], 5.0).item() for i in range(2)]
    assert abs(both - np.mean(each)) < 1e-14


def test_wbce_shape_mismatch():
    with pytest.raises(ShapeError):
        wbce(Tensor(np.zeros((1, 1, 2, 2))), np.zeros((1, 1, 2, 3)), np.zeros((1, 1, 2, 3)))


def test_monotone_weighting_two_pixels():
    # pixel 0 has alpha > 0, pixel 1 has alpha = 0, identical per-pixel BCE
    logits = Tensor(np.zeros((1, 1, 1, 2)))
    gt = np.ones((1, 1, 1, 2))
    alpha = np.array([0.5, 0.0]).reshape(1, 1, 1, 2)
    ratios = []
    for gamma in (0.0, 1.0, 3.0, 5.0, 8.0):
        logits.requires_grad = True
        logits.grad = None
        T.backward(wbce(logits, gt, alpha, gamma))
        g = logits.grad.ravel()
        ratios.append(g[0] / g[1])
    assert all(b > a for a, b in zip(ratios, ratios[1:]))


# ----------------------------------------------------------------------- wiou


def test_wiou_single_pixel_half():
    x, g, a = one_pixel()
    assert abs(wiou(x, g, a, 5.0).item() - 0.5) < 1e-12


def test_wiou_perfect_overlap():
    gt = np.zeros((1, 1, 6, 6))
    gt[0, 0, 1:4, 2:5] = 1
    logits = Tensor(np.where(gt > 0, 800.0, -800.0))
    assert wiou(logits, gt, alpha_map(gt, 3), 5.0).item() == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("gamma", [0.0, 5.0])
def test_wiou_matches_oracle_and_gradient(seed, gamma):
    logits, gt = random_instance(seed + 10)
    alpha = alpha_map(gt, 5)
    got = wiou(Tensor(logits), gt, alpha, gamma).item()
    assert abs(got - wiou_naive(logits, gt, alpha, gamma)) < 1e-12
    assert 0 <= got <= 1
    assert grad_check(lambda t: wiou(t, gt, alpha, gamma), Tensor(logits)) < 1e-5


# ------------------------------------------------------------------------ ppa


def test_ppa_default_gamma_and_single_pixel():
    import inspect

    assert inspect.signature(ppa_loss).parameters["gamma"].default == 5
    x, g, _ = one_pixel()
    lb = ppa_loss(x, g, k=3)
    assert abs(lb.ppa.item() - (math.log(2) + 0.5)) < 1e-12
    assert abs(lb.ppa.item() - 1.193147) < 1e-6
    assert lb.ppa.item() == lb.wbce.item() + lb.wiou.item()


def test_ppa_perfect_prediction_near_zero():
    gt = np.zeros((1, 1, 8, 8))
    gt[0, 0, 2:6, 3:7] = 1
    logits = Tensor(np.where(gt > 0, 40.0, -40.0))
    lb = ppa_loss(logits, gt, k=3)
    assert lb.wiou.item() < 1e-15 and lb.wbce.item() < 1e-15


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ppa_gradient(seed):
    logits, gt = random_instance(seed + 20)
    assert grad_check(lambda t: ppa_loss(t, gt, 5.0, 3).ppa, Tensor(logits)) < 1e-5


def test_loss_modes_reduce():
    logits, gt = random_instance(5)
    x = Tensor(logits)
    alpha = alpha_map(gt, 3)
    bce = map_loss(x, gt, alpha, 5.0, "bce")
    assert bce.wiou is None and bce.total.item() == wbce(x, gt, np.zeros_like(gt), 0.0).item()
    iou = map_loss(x, gt, alpha, 5.0, "iou")
    assert iou.wbce is None and iou.total.item() == wiou(x, gt, alpha, 0.0).item()
    with pytest.raises(ValueError):
        map_loss(x, gt, alpha, 5.0, "dice")


def test_default_window():
    assert default_window(352) == 31
    assert default_window(96) == 9


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["flipud", "fliplr", "rot90", "transpose"]))
def test_losses_dihedral_invariance(seed, op):
    logits, gt = random_instance(seed, h=6, w=6)
    f = {
        "flipud": lambda a: a[..., ::-1, :],
        "fliplr": lambda a: a[..., ::-1],
        "rot90": lambda a: np.rot90(a, axes=(2, 3)),
        "transpose": lambda a: a.swapaxes(2, 3),
    }[op]
    base = ppa_loss(Tensor(logits), gt, 5.0, 3)
    moved = ppa_loss(Tensor(f(logits).copy()), f(gt).copy(), 5.0, 3)
    assert abs(base.wbce.item() - moved.wbce.item()) < 1e-12
    assert abs(base.wiou.item() - moved.wiou.item()) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_unweighted_losses_permutation_invariant(seed):
    logits, gt = random_instance(seed)
    perm = np.random.default_rng(seed).permutation(64)
    pl = logits.reshape(-1)[perm].reshape(logits.shape)
    pg = gt.reshape(-1)[perm].reshape(gt.shape)
    z = np.zeros_like(gt)
    assert abs(wbce(Tensor(logits), gt, z, 0).item() - wbce(Tensor(pl), pg, z, 0).item()) < 1e-12
    assert abs(wiou(Tensor(logits), gt, z, 0).item() - wiou(Tensor(pl), pg, z, 0).item()) < 1e-12


# ---------------------------------------------------------------- total loss


def fake_output(n_maps, size=4, seed=0):
    rng = np.random.default_rng(seed)
    mk = lambda: Tensor(rng.standard_normal((1, 1, size, size)))
    return CfdOutput(maps=[mk() for _ in range(n_maps)], aux=[mk() for _ in range(4)])


def test_aux_weights():
    assert AUX_WEIGHTS == (0.5, 0.25, 0.125, 0.0625)
    assert sum(AUX_WEIGHTS) == 15 / 16


def test_combine_averaging_and_aux_sum():
    l0 = Tensor(np.full((1, 1, 1, 1), 0.7))
    zero = Tensor(np.zeros((1, 1, 1, 1)))
    assert abs(combine([l0, l0, l0], [zero] * 4).item() - 0.7) < 1e-15
    a = Tensor(np.full((1, 1, 1, 1), 1.6))
    assert abs(combine([zero, zero], [a] * 4).item() - 15 / 16 * 1.6) < 1e-15


def test_total_loss_matches_manual_combination():
    out = fake_output(2, seed=1)
    gt = (np.random.default_rng(1).random((1, 1, 4, 4)) < 0.5).astype(float)
    loss, parts = total_loss(out, gt, 5.0, 3)
    expect = (parts["map1"] + parts["map2"]) / 2 + sum(w * parts[f"aux{j}"] for j, w in zip(range(2, 6), AUX_WEIGHTS))
    assert abs(loss.item() - expect) < 1e-14
    no_mls, parts2 = total_loss(out, gt, 5.0, 3, mls=False)
    assert abs(no_mls.item() - (parts["map1"] + parts["map2"]) / 2) < 1e-14


def test_total_loss_rejects_bad_counts():
    out = fake_output(1)
    out.aux = out.aux[:3]
    with pytest.raises(ValueError):
        total_loss(out, np.zeros((1, 1, 4, 4)), 5.0, 3)
    with pytest.raises(ValueError):
        total_loss(CfdOutput(maps=[], aux=[]), np.zeros((1, 1, 4, 4)), 5.0, 3)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_total_loss_gradient_wrt_maps(seed):
    out = fake_output(2, seed=seed)
    gt = (np.random.default_rng(seed).random((1, 1, 4, 4)) < 0.5).astype(float)
    for t in out.maps + out.aux:
        assert grad_check(lambda _: total_loss(out, gt, 5.0, 3)[0], t) < 1e-5
