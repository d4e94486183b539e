import math
from dataclasses import replace

import numpy as np
import pytest

from attractorlab.bounds import (
    InfeasibleBoundsError,
    absorbing_radius,
    beta1_of,
    beta_feasible,
    default_delta,
    default_sigma,
    delta_bar,
    discounted_integral,
    energy_identity_residual,
    energy_series,
    evaluate_bounds,
    fit_decay,
    max_regularity_rate,
    prefactor,
    regularity_envelopes,
    sigma_range,
    v1_decay_envelope,
)
from attractorlab.config import config_from_values, model_from_config, phi_from_config
from attractorlab.history import ConstantHistory, ModalHistory, RandomHistory, WindowNorms
from attractorlab.model import DelayOperator, Forcing
from attractorlab.solver import SystemKind, integrate, integrate_joint


def test_default_constants(default_spec):
    delta = default_delta(default_spec)
    choice = beta_feasible(default_spec, delta)

    assert delta == pytest.approx(1.5)
    assert delta_bar(default_spec, delta) == pytest.approx(7.0 / 3.0, abs=1e-6)
    assert choice.delta_bar == pytest.approx(2.333333, abs=1e-6)
    assert choice.beta_max == pytest.approx(1.191489, abs=1e-6)
    assert choice.feasible
    assert choice.beta == pytest.approx(choice.beta_max)
    assert choice.beta1 == pytest.approx(1.1853, abs=1e-3)
    assert choice.beta1 == pytest.approx(float(beta1_of(default_spec, choice.beta)))


def test_increasing_scenario_uses_alpha_in_beta_max():
    spec = model_from_config(config_from_values({"epsilon_kind": "increasing"}))
    choice = beta_feasible(spec, default_delta(spec))
    dbar = 2 * 2.6 - 0.0625 - 2.0 - 1.0 / 6.0 - 0.5

    assert choice.delta_bar == pytest.approx(dbar, abs=1e-6)
    assert choice.beta_max == pytest.approx(dbar / (1.0 / 3.0 + 0.75), abs=1e-6)
    assert choice.feasible


def test_no_delay_gives_beta1_equal_to_beta_max(default_spec):
    spec = replace(default_spec, delay=DelayOperator(b=0.0, k=0.5))
    choice = beta_feasible(spec, 1.5)

    assert choice.beta1 == pytest.approx(choice.beta_max)
    assert prefactor(spec, choice.beta, choice.beta1) == 2.0


def test_strong_delay_is_infeasible(default_spec):
    spec = replace(default_spec, delay=DelayOperator(b=3.0, k=0.5))
    choice = beta_feasible(spec, 1.5)

    assert not choice.feasible
    with pytest.raises(InfeasibleBoundsError):
        absorbing_radius(spec, WindowNorms(1.0, 1.0, 2.0, 2.0, 1.0), 0.0, np.linspace(0, 1, 11), choice, 1.5)


def test_delta_must_lie_below_lambda1(default_spec):
    with pytest.raises(ValueError):
        beta_feasible(default_spec, 3.0)
    with pytest.raises(ValueError):
        beta_feasible(default_spec, 0.0)


def test_prefactor_identity(default_spec):
    choice = beta_feasible(default_spec, 1.5)

    assert prefactor(default_spec, choice.beta, choice.beta1) == pytest.approx(2.0, abs=1e-12)
    assert prefactor(default_spec, 0.9, float(beta1_of(default_spec, 0.9))) == pytest.approx(2.0, abs=1e-12)
    with pytest.raises(InfeasibleBoundsError):
        prefactor(default_spec, 1.0, 1.0)


def test_discounted_integral_of_constant():
    dt = 1e-3
    times = np.arange(0, 2001) * dt
    values = np.full(times.shape, 0.25)

    out = discounted_integral(values, dt, 1.2)
    expected = 0.25 * (1.0 - np.exp(-1.2 * times)) / 1.2

    assert out[0] == 0.0
    np.testing.assert_allclose(out, expected, rtol=1e-6, atol=1e-12)


def test_absorbing_radius_vanishes_without_data_or_forcing(default_spec):
    spec = replace(default_spec, forcing=Forcing(amplitude=0.0, offset=0.0))
    choice = beta_feasible(spec, 1.5)
    times = np.linspace(0.0, 5.0, 501)

    radius = absorbing_radius(spec, WindowNorms(0.0, 0.0, 0.0, 0.0, 1.5), 0.0, times, choice, 1.5)

    assert not np.any(radius)


def test_absorbing_radius_closed_form_for_constant_forcing(default_spec):
    spec = replace(default_spec, forcing=Forcing(amplitude=0.0, offset=0.5))
    choice = beta_feasible(spec, 1.5)
    times = np.arange(0, 3001) * 1e-3
    phi_norms = WindowNorms(l2_sq=2.0, grad_sq=4.0, ht_sq=8.0, h1t_sq=20.0, eps_abs=1.5)

    radius = absorbing_radius(spec, phi_norms, 0.0, times, choice, 1.5)

    b1 = choice.beta1
    decay = np.exp(-b1 * times)
    forced = (2.0 / 1.5) * math.exp(choice.beta * 0.5) * 0.25 * (1.0 - decay) / b1
    np.testing.assert_allclose(radius, 2.0 * 8.0 * decay + forced, rtol=1e-6)


def test_sigma_range():
    assert sigma_range(3, 1.0) == pytest.approx((0.0, 1.0 / 3.0))
    assert sigma_range(3, 4.5) == pytest.approx((0.0, 0.25))
    assert default_sigma(3, 1.0) == pytest.approx(1.0 / 6.0)
    with pytest.raises(ValueError):
        sigma_range(2, 1.0)
    with pytest.raises(ValueError):
        sigma_range(3, 5.0)


def test_max_regularity_rate(default_spec):
    assert max_regularity_rate(default_spec) == pytest.approx(1.9362, abs=1e-4)


def test_energy_identity_in_linear_case(linear_spec):
    spec = linear_spec()
    phi = ConstantHistory(spec.basis.unit(0))
    fine = integrate(SystemKind.FULL, spec, phi, 0.0, 2.0, dt=1e-3)
    coarse = integrate(SystemKind.FULL, spec, phi, 0.0, 2.0, dt=2e-3)

    residual = energy_identity_residual(fine, 0.0, 2.0)
    assert residual <= 2e-6
    assert energy_identity_residual(coarse, 0.0, 2.0) / residual == pytest.approx(4.0, rel=0.05)
    assert energy_identity_residual(fine, 1.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        energy_identity_residual(fine, 1.5, 0.5)


def test_energy_identity_with_defaults(default_spec):
    phi = RandomHistory(default_spec.basis, seed=12)
    traj = integrate(SystemKind.FULL, default_spec, phi, 0.0, 5.0, dt=1e-2)

    assert energy_identity_residual(traj, 0.0, 5.0) <= 1e-3
    assert energy_identity_residual(traj, 1.0, 3.0) <= 1e-3


def test_energy_residual_is_second_order_in_the_step(default_cfg, default_spec):
    phi = phi_from_config(default_cfg, default_spec.basis)
    residuals = [
        energy_identity_residual(integrate(SystemKind.FULL, default_spec, phi, 0.0, 2.0, dt=dt), 0.0, 2.0)
        for dt in (2e-3, 1e-3)
    ]

    assert residuals[1] <= 1e-5
    assert residuals[0] / residuals[1] >= 3.5


def test_unforced_energy_decreases_once_the_delay_window_has_passed(unforced_spec):
    spec = unforced_spec
    traj = integrate(SystemKind.FULL, spec, RandomHistory(spec.basis, seed=5), 0.0, 5.0, dt=1e-2)
    energy = energy_series(traj)
    after = traj.times >= 2.0 * spec.delay.k

    assert np.all(np.diff(energy[after]) <= 1e-15)
    assert energy[-1] < energy[after][0]


def test_v1_split_decays_exponentially(default_spec):
    phi = RandomHistory(default_spec.basis, seed=3)
    runs = integrate_joint([SystemKind.V1_SPLIT], default_spec, phi, 0.0, 10.0, 1e-2)

    fit = v1_decay_envelope(runs[SystemKind.V1_SPLIT])

    assert not fit.skipped
    assert fit.rate > 0.05
    assert fit.r_squared >= 0.99
    assert fit.window_start == pytest.approx(2.5)
    with pytest.raises(ValueError):
        v1_decay_envelope(runs[SystemKind.FULL])


def test_fit_decay_skips_identically_zero_series(unforced_spec):
    traj = integrate(SystemKind.FULL, unforced_spec, ConstantHistory(unforced_spec.basis.zeros()), 0.0, 5.0, dt=1e-2)

    fit = fit_decay(traj)

    assert fit.skipped
    assert math.isinf(fit.rate)


@pytest.mark.parametrize(
    "phi_factory",
    [
        lambda basis: ConstantHistory(basis.zeros()),
        lambda basis: RandomHistory(basis, seed=1),
        lambda basis: ModalHistory(basis, (5.0,)),
        lambda basis: ModalHistory(basis, (10.0,)),
        lambda basis: ModalHistory(basis, (0.0,) * 7 + (-10.0,)),
    ],
)
def test_absorbing_bound_holds(default_spec, phi_factory):
    phi = phi_factory(default_spec.basis)
    traj = integrate(SystemKind.FULL, default_spec, phi, 0.0, 5.0, dt=1e-2)

    report = evaluate_bounds(default_spec, traj)

    assert traj.completed
    assert report.verdicts == {
        "beta1_positive": True,
        "absorbing_bound_holds": True,
        "prefactor_identity": True,
    }
    assert report.worst_ratio() <= 1.0
    assert report.sigma_range == pytest.approx((0.0, 1.0 / 3.0))
    assert np.all(report.r_sq >= 1.0)


def test_infeasible_bounds_report_nan(default_spec):
    spec = replace(default_spec, delay=DelayOperator(b=3.0, k=0.5))
    traj = integrate(SystemKind.FULL, spec, RandomHistory(spec.basis, seed=1), 0.0, 1.0, dt=1e-2)

    report = evaluate_bounds(spec, traj)

    assert report.verdicts["beta1_positive"] is False
    assert not report.passed
    assert np.all(np.isnan(report.r0_sq))
    assert math.isnan(report.worst_ratio())


def test_evaluate_bounds_requires_full_system(default_spec):
    runs = integrate_joint([SystemKind.V1_SPLIT], default_spec, RandomHistory(default_spec.basis, seed=1), 0.0, 1.0, 1e-2)
    with pytest.raises(ValueError):
        evaluate_bounds(default_spec, runs[SystemKind.V1_SPLIT])


def test_regularity_envelopes(default_spec):
    traj = integrate(SystemKind.FULL, default_spec, RandomHistory(default_spec.basis, seed=1), 0.0, 5.0, dt=1e-2)

    env = regularity_envelopes(default_spec, traj, r1_sq=0.0)

    assert env.rate1 == pytest.approx(max_regularity_rate(default_spec))
    np.testing.assert_allclose(env.k_bar, env.k1 + env.k2)
    assert np.all(env.k2 > 0.0)
    settled = traj.times >= 2.5
    assert np.all(traj.window_norms()["h1t_sq"][settled] <= env.k_bar[settled])
    with pytest.raises(ValueError):
        regularity_envelopes(default_spec, traj, 0.0, rates=(5.0, None))
