import math

import mpmath
import numpy as np
import pytest

from parsgd import glm
from parsgd.glm import Hyperparams, LossTrace, Task, convergence_epochs


def central_difference(task, w, x, y, h=1e-6):
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (glm.point_loss(task, w + e, x, y) - glm.point_loss(task, w - e, x, y)) / (2 * h)
    return g


def dense_grad(task, w, x, y):
    idx, val = glm.point_gradient(task, w, x, y)
    g = np.zeros_like(w)
    g[idx] = val
    return g


@pytest.mark.parametrize("d", [5, 50])
def test_lr_gradient_matches_finite_differences(backend, rng, d):
    for _ in range(30):
        w, x = rng.standard_normal(d), rng.standard_normal(d)
        y = rng.choice([-1.0, 1.0])
        np.testing.assert_allclose(dense_grad("lr", w, x, y), central_difference("lr", w, x, y),
                                   rtol=1e-5, atol=1e-8)


def test_svm_gradient_away_from_kink(backend, rng):
    checked = 0
    while checked < 30:
        w, x = rng.standard_normal(5), rng.standard_normal(5)
        y = rng.choice([-1.0, 1.0])
        if abs(1 - y * glm.margin(w, x)) < 1e-3:
            continue
        np.testing.assert_allclose(dense_grad("svm", w, x, y),
                                   central_difference("svm", w, x, y), rtol=1e-5, atol=1e-8)
        checked += 1


def test_svm_subgradient_is_zero_at_the_kink(backend):
    w = np.array([0.5, 0.0])
    x = np.array([2.0, 3.0])
    assert glm.margin(w, x) == 1.0
    assert not np.any(dense_grad("svm", w, x, 1.0))
    assert glm.point_loss("svm", w, x, 1.0) == 0.0


def test_sparse_and_dense_examples_agree(backend, rng):
    w = rng.standard_normal(6)
    x = np.array([0.0, 1.5, 0.0, -2.0, 0.0, 0.25])
    sp = (np.array([1, 3, 5]), x[[1, 3, 5]])
    assert glm.margin(w, x) == glm.margin(w, sp)
    assert glm.point_loss("lr", w, x, -1.0) == glm.point_loss("lr", w, sp, -1.0)
    assert np.array_equal(dense_grad("lr", w, x, 1.0), dense_grad("lr", w, sp, 1.0))


@pytest.mark.parametrize("ym", [-800.0, -40.0, -1e-3, 0.0, 1e-9, 3.0, 40.0, 750.0])
def test_lr_loss_and_coefficient_are_stable(backend, ym):
    # extended-precision oracle
    with mpmath.workdps(50):
        loss = float(mpmath.log1p(mpmath.exp(-mpmath.mpf(ym))))
        coef = float(-1 / (1 + mpmath.exp(mpmath.mpf(ym))))
    got = backend.point_loss_margin(0, ym)
    assert math.isfinite(got)
    assert got == pytest.approx(loss, rel=1e-14, abs=1e-300)
    assert glm.gradient_coefficient("lr", ym, 1.0) == pytest.approx(coef, rel=1e-14, abs=1e-300)


def test_sigmoid_saturates_without_overflow(backend):
    assert backend.sigmoid(1000.0) == 1.0
    assert backend.sigmoid(-1000.0) == 0.0
    assert backend.sigmoid(0.0) == 0.5


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        glm.margin(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        glm.margin(np.zeros(3), (np.array([0, 5]), np.array([1.0, 1.0])))


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        Hyperparams(0.0, 1)
    with pytest.raises(ValueError):
        Hyperparams(float("nan"), 1)
    with pytest.raises(ValueError):
        Hyperparams(0.1, 0)
    with pytest.raises(ValueError):
        Hyperparams(0.1, 1, batch=0)
    with pytest.raises(ValueError):
        Hyperparams(0.1, 1, batch=5).batch_size(4)
    h = Hyperparams(0.5, 3, "svm", decay=0.5)
    assert h.task is Task.SVM
    assert h.batch_size(7) == 7
    assert [h.step(e) for e in range(3)] == [0.5, 0.25, 0.125]


def test_check_finite_raises_divergence():
    with pytest.raises(glm.DivergenceError) as info:
        glm.check_finite(np.array([1.0, np.inf]), 1.0, epoch=4)
    assert info.value.epoch == 4


def test_loss_trace_cumulative_times():
    t = LossTrace(5.0)
    t.record(4.0, 0.5, 10)
    t.record(3.0, 0.25)
    assert len(t) == 2 and t.cumulative_times == [0.5, 0.75] and t.work == [10]


def test_convergence_epochs_examples():
    assert convergence_epochs([2.0, 1.5, 1.01], 1.0, 0.01) == 3
    assert convergence_epochs([2.0, 1.5, 1.02], 1.0, 0.01) is None
    assert convergence_epochs(LossTrace(9.0, [3.0, 1.0]), 1.0, 0.0) == 2
    assert convergence_epochs([], 1.0, 0.1) is None
    with pytest.raises(ValueError):
        convergence_epochs([1.0], 1.0, -0.1)
