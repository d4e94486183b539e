import numpy as np
import pytest

from attractorlab.history import (
    ConstantHistory,
    DelayHistory,
    HistoryRangeError,
    ModalHistory,
    PerturbedHistory,
    RandomHistory,
    delay_steps,
    history_difference,
    init_from_phi,
    sample,
    window_sup_norms,
)
from attractorlab.model import EpsilonProfile
from attractorlab.spectral import build_basis


def _linear_history(basis, dt=0.1, k=0.5):
    """u(t) = t * e_1 on [-k, 0]."""
    return init_from_phi(lambda theta: basis.unit(0, theta), 0.0, dt, basis, k)


def test_delay_steps_requires_divisor():
    assert delay_steps(0.5, 0.1) == 5
    assert delay_steps(0.5, 1e-3) == 500
    with pytest.raises(HistoryRangeError):
        delay_steps(0.5, 0.3)
    with pytest.raises(HistoryRangeError):
        delay_steps(0.05, 0.1)


def test_init_from_phi_covers_the_delay_window():
    basis = build_basis(1, 2)
    history = _linear_history(basis)

    assert len(history) == 6
    np.testing.assert_allclose(history.times(), np.linspace(-0.5, 0.0, 6), atol=1e-15)
    assert history.span == pytest.approx(0.5)
    assert sample(history, -0.5).coeffs[0] == pytest.approx(-0.5)


def test_sample_interpolates_linearly():
    basis = build_basis(1, 2)
    history = _linear_history(basis)

    assert history.sample_coeffs(-0.25)[0] == pytest.approx(-0.25)
    assert history.sample_coeffs(-0.33)[0] == pytest.approx(-0.33)


def test_sample_outside_span_raises():
    basis = build_basis(1, 2)
    history = _linear_history(basis)

    with pytest.raises(HistoryRangeError):
        history.sample_coeffs(-0.6)
    with pytest.raises(HistoryRangeError):
        history.sample_coeffs(0.05)


def test_push_keeps_capacity_and_order():
    basis = build_basis(1, 2)
    history = _linear_history(basis)

    for step in range(1, 4):
        history.push(step, basis.unit(0, step * 0.1).coeffs)

    assert len(history) == 7
    assert history.oldest == pytest.approx(-0.3)
    assert history.newest == pytest.approx(0.3)
    with pytest.raises(HistoryRangeError):
        history.push(5, basis.zeros().coeffs)


def test_window_coeffs_at_half_step():
    basis = build_basis(1, 2)
    history = _linear_history(basis)
    history.push(1, basis.unit(0, 0.1).coeffs)

    window = history.window_coeffs(0.05, 5)

    np.testing.assert_allclose(window[:, 0], [-0.45, -0.35, -0.25, -0.15, -0.05], atol=1e-12)


def test_window_at_requires_full_span():
    basis = build_basis(1, 2)
    history = _linear_history(basis)

    times, stack = history.window_at(0.0)
    assert times.shape == (6,)
    assert stack[0, 0] == pytest.approx(-0.5)
    with pytest.raises(HistoryRangeError):
        history.window_at(-0.1)
    with pytest.raises(HistoryRangeError):
        history.window_at(-0.05)


def test_window_sup_norms_grow_with_the_history():
    basis = build_basis(3, 2)
    u = RandomHistory(basis, seed=4)(0.0)
    smaller = init_from_phi(lambda theta: u * (1.0 + theta), 0.0, 0.1, basis, 0.5)
    larger = init_from_phi(lambda theta: u * (2.0 + theta), 0.0, 0.1, basis, 0.5)
    bump = basis.unit(basis.mode_count - 1, float(np.copysign(0.3, u.coeffs[-1])))
    shifted = init_from_phi(lambda theta: u * (1.0 + theta) + bump, 0.0, 0.1, basis, 0.5)

    small = window_sup_norms(smaller, 0.0, EpsilonProfile(), sigma=0.5)
    for bigger in (larger, shifted):
        big = window_sup_norms(bigger, 0.0, EpsilonProfile(), sigma=0.5)
        assert small.eps_abs == big.eps_abs
        for name in ("l2_sq", "grad_sq", "ht_sq", "h1t_sq", "frac_sq", "frac1_sq"):
            assert getattr(small, name) <= getattr(big, name)
    assert small.ht_sq < window_sup_norms(larger, 0.0, EpsilonProfile()).ht_sq


def test_window_sup_norms_use_largest_eps_in_window():
    basis = build_basis(1, 2)
    history = init_from_phi(ConstantHistory(basis.field([1.0, 1.0])), 0.0, 0.1, basis, 0.5)

    norms = window_sup_norms(history, 0.0, EpsilonProfile(), sigma=0.5)

    assert norms.l2_sq == pytest.approx(2.0)
    assert norms.grad_sq == pytest.approx(5.0)
    assert norms.eps_abs == pytest.approx(1.0 + 0.5 / (1.0 + np.exp(-0.5)))
    assert norms.ht_sq == pytest.approx(2.0 + norms.eps_abs * 5.0)
    assert norms.frac_sq == pytest.approx(3.0)
    assert norms.frac_ht_sq == pytest.approx(3.0 + norms.eps_abs * 9.0)


def test_generators():
    basis = build_basis(2, 2)

    modal = ModalHistory(basis, (1.0, 0.5))
    assert modal(-0.2).coeffs.tolist() == [1.0, 0.5, 0.0, 0.0]

    random = RandomHistory(basis, seed=3)
    assert np.array_equal(random(0.0).coeffs, random(-0.4).coeffs)
    assert not np.array_equal(random(0.0).coeffs, RandomHistory(basis, seed=3, stream=1)(0.0).coeffs)

    perturbed = PerturbedHistory(modal, basis.unit(3), 0.1)
    assert perturbed(0.0).coeffs.tolist() == pytest.approx([1.0, 0.5, 0.0, 0.1])


def test_init_from_phi_rejects_foreign_basis():
    basis = build_basis(1, 2)
    other = build_basis(1, 3)
    with pytest.raises(HistoryRangeError):
        init_from_phi(ConstantHistory(other.zeros()), 0.0, 0.1, basis, 0.5)


def test_history_difference():
    basis = build_basis(1, 2)
    first = _linear_history(basis)
    second = init_from_phi(ConstantHistory(basis.unit(0, 1.0)), 0.0, 0.1, basis, 0.5)

    diff = history_difference(first, second)

    assert diff.sample_coeffs(0.0)[0] == pytest.approx(-1.0)
    assert diff.sample_coeffs(-0.5)[0] == pytest.approx(-1.5)
    with pytest.raises(HistoryRangeError):
        history_difference(first, DelayHistory(basis, 0.0, 0.1, 0.5))
