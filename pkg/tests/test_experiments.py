import math
from dataclasses import replace

import numpy as np
import pytest

from attractorlab.config import config_from_values
from attractorlab.experiments import (
    DISSIPATION_XI,
    ModelValidationError,
    default_phi_set,
    envelope_constant,
    report_fields,
    run_decomposition,
    run_dependence,
    run_pullback,
    run_regularity,
    run_simulation,
    run_sweep,
    unit_direction,
    validated,
)
from attractorlab.history import ConstantHistory, RandomHistory
from attractorlab.model import LowpassForcing
from attractorlab.solver import BlowUpError, SystemKind

PULLBACK_TAUS = (-2.0, -4.0, -8.0, -12.0)


def test_validated_raises_with_report(default_spec):
    spec = replace(default_spec, coefficient=replace(default_spec.coefficient, m=2.0))

    with pytest.raises(ModelValidationError) as excinfo:
        validated(spec)

    assert "absorbing_threshold" in str(excinfo.value)
    assert not excinfo.value.report.passed
    assert validated(replace(spec, skip_validation=True)) is None


def test_simulation_report(default_cfg, default_spec):
    phi = RandomHistory(default_spec.basis, seed=default_cfg.seed)

    report = run_simulation(default_spec, phi, 0.0, 3.0, 1e-2)

    assert report.validation is not None and report.validation.passed
    assert all(report.verdicts.values())
    fields = report_fields(report)
    assert fields["prefactor"] == pytest.approx(2.0)
    assert fields["provenance.lambda1"] == "3"


def test_simulation_surfaces_blowup(linear_spec):
    spec = linear_spec()
    spec = replace(spec, coefficient=replace(spec.coefficient, a_lo=-20.0, a_hi=-20.0))

    with pytest.raises(BlowUpError):
        run_simulation(spec, ConstantHistory(spec.basis.unit(0)), 0.0, 5.0, 1e-2)


def test_decomposition(default_spec):
    phi = RandomHistory(default_spec.basis, seed=8, scale=2.0)

    report = run_decomposition(default_spec, phi, 0.0, 10.0, dt=1e-2)

    assert report.verdicts == {
        "additivity": True,
        "v1_decays": True,
        "v2_bounded": True,
        "dissipation_envelope": True,
    }
    assert report.sigma == pytest.approx(1.0 / 6.0)
    assert report.v1_fit.rate > 0.05
    assert report.dissipation[0] == 0.0
    assert np.all(np.diff(report.dissipation) >= 0.0)
    assert report.xi == DISSIPATION_XI
    assert report.c_xi == report.c_xi_half > 0.0
    times = report.trajectories[SystemKind.V1_SPLIT].times
    gain = report.dissipation[:, np.newaxis] - report.dissipation[np.newaxis, :]
    allowed = report.xi * (times[:, np.newaxis] - times[np.newaxis, :]) + report.c_xi + 1e-12
    assert np.all(np.tril(gain) <= np.tril(allowed))
    assert set(report_fields(report)) >= {"additivity_defect", "v1_rate", "xi", "c_xi", "c_xi_half", "j_xi"}
    with pytest.raises(ValueError, match="xi"):
        run_decomposition(default_spec, phi, 0.0, 10.0, dt=1e-2, xi=0.0)


def test_envelope_constant_takes_the_largest_rise():
    assert envelope_constant(np.array([0.0, 2.0, 1.0, -3.0, 0.5, 0.0])) == 3.5
    assert envelope_constant(np.array([1.0, 0.5, 0.0])) == 0.0
    assert envelope_constant(np.array([])) == 0.0
    rising = np.linspace(0.0, 1.0, 11)
    assert envelope_constant(rising) > envelope_constant(rising[:6])


def test_decomposition_rejects_short_horizon_and_bad_sigma(default_spec):
    phi = ConstantHistory(default_spec.basis.zeros())
    with pytest.raises(ValueError, match="10k"):
        run_decomposition(default_spec, phi, 0.0, 4.0, dt=1e-2)
    with pytest.raises(ValueError, match="sigma"):
        run_decomposition(default_spec, phi, 0.0, 5.0, sigma=0.5, dt=1e-2)


def test_decomposition_with_zero_history_skips_fit(unforced_spec):
    report = run_decomposition(unforced_spec, ConstantHistory(unforced_spec.basis.zeros()), 0.0, 5.0, dt=1e-2)

    assert report.v1_fit.skipped
    assert report.verdicts["v1_decays"]
    assert report.additivity_defect == 0.0


def test_pullback_diameters_shrink(default_cfg, default_spec):
    phi_set = default_phi_set(default_cfg, default_spec)

    report = run_pullback(default_spec, 0.0, PULLBACK_TAUS, phi_set, dt=1e-2)

    assert report.labels == ("zero", "large", "modal")
    assert report.verdicts == {"diameters_decreasing": True, "diameter_contracts": True}
    assert report.final_ratio <= 1e-3
    assert report.reference.tau == -12.0
    for tau in PULLBACK_TAUS:
        matrix = report.pairwise[tau]
        assert np.allclose(matrix, matrix.T)
        assert not np.any(np.diag(matrix))
        assert report.to_reference[tau].shape == (3,)
    assert report.to_reference[-12.0][0] == 0.0


def test_pullback_is_independent_of_worker_count(default_cfg, default_spec):
    phi_set = default_phi_set(default_cfg, default_spec)
    taus = PULLBACK_TAUS[:2]

    serial = run_pullback(default_spec, 0.0, taus, phi_set, dt=1e-2, workers=1)
    parallel = run_pullback(default_spec, 0.0, taus, phi_set, dt=1e-2, workers=2)

    assert serial.diameters == parallel.diameters


def test_pullback_validates_start_times(default_cfg, default_spec):
    phi_set = default_phi_set(default_cfg, default_spec)
    with pytest.raises(ValueError, match="decreasing"):
        run_pullback(default_spec, 0.0, (-4.0, -2.0), phi_set, dt=1e-2)
    with pytest.raises(ValueError, match="below"):
        run_pullback(default_spec, 0.0, (-0.2, -2.0), phi_set, dt=1e-2)
    with pytest.raises(ValueError, match="two"):
        run_pullback(default_spec, 0.0, (-2.0,), phi_set[:1], dt=1e-2)


def test_regularity_with_identity_lowpass(default_spec):
    phi = RandomHistory(default_spec.basis, seed=6)

    report = run_regularity(default_spec, phi, 0.0, 10.0, dt=1e-2)

    assert report.verdicts == {
        "bounded_by_envelope": True,
        "additivity": True,
        "no_growth": True,
        "u1_decays": True,
    }
    assert report.r1_sq == 0.0
    assert report.measured_sup <= report.envelope_min
    assert report.window_start == pytest.approx(2.5)


def test_regularity_with_cutoff_drops_u1_fit(default_spec):
    phi = RandomHistory(default_spec.basis, seed=6)
    lowpass = LowpassForcing(default_spec.forcing, cutoff=6.0)

    report = run_regularity(default_spec, phi, 0.0, 5.0, lowpass, dt=1e-2)

    assert "u1_decays" not in report.verdicts
    assert report.r1_sq == pytest.approx(0.0625)
    assert report.verdicts["additivity"]
    assert report.verdicts["bounded_by_envelope"]
    assert "u1_rate" not in report_fields(report)


def test_unit_direction_has_unit_norm(default_spec):
    direction = unit_direction(default_spec, seed=3, tau=0.0)
    eps_max = 1.0 + 0.5 / (1.0 + math.exp(-0.5))
    c = direction.coeffs
    lam = default_spec.basis.eigenvalues

    assert (c**2).sum() + eps_max * (c**2 * lam).sum() == pytest.approx(1.0)


def test_dependence_is_linear_for_small_perturbations(default_spec):
    phi = RandomHistory(default_spec.basis, seed=2)
    sizes = (1e-2, 5e-3, 2.5e-3, 0.0)

    report = run_dependence(default_spec, phi, sizes, 0.0, 2.0, seed=1, dt=1e-2)

    assert report.verdicts == {"linear_response": True, "rate_finite": True, "zero_perturbation": True}
    assert report.initial == pytest.approx(sizes, rel=1e-9, abs=1e-15)
    assert report.final[-1] == 0.0
    assert all(ratio < 1.0 for ratio in report.ratios)
    assert report.horizon == 2.0
    assert report.rate == 0.0


def test_dependence_rejects_bad_inputs(default_spec):
    phi = ConstantHistory(default_spec.basis.zeros())
    with pytest.raises(ValueError):
        run_dependence(default_spec, phi, (-1e-3,), 0.0, 1.0, dt=1e-2)
    with pytest.raises(ValueError):
        run_dependence(default_spec, phi, (1e-3,), 1.0, 1.0, dt=1e-2)


def test_sweep_over_delay_strength():
    cfg = config_from_values({"t_end": 2.0, "dt": 1e-2})

    report = run_sweep(cfg, "delay.b", [0.0, 0.1, 0.5])

    assert [row.status for row in report.rows] == ["done", "done", "done"]
    assert report.verdicts == {"row_0": True, "row_1": True, "row_2": True}
    assert report.rows[0].beta1 == pytest.approx(report.rows[0].beta)
    assert report.rows[2].beta1 < report.rows[1].beta1
    fields = report_fields(report)
    assert fields["param"] == "delay.b"
    assert fields["row[2].value"] == 0.5


def test_stronger_delay_keeps_more_energy():
    values = {"t_end": 2.0, "dt": 1e-2, "forcing_amplitude": 0.0, "forcing_offset": 0.0, "phi_kind": "modal"}
    cfg = config_from_values(values)

    report = run_sweep(cfg, "delay.b", [0.0, 0.1, 0.2, 0.5])

    assert [row.status for row in report.rows] == ["done"] * 4
    energies = [row.terminal_energy for row in report.rows]
    assert all(later > earlier for earlier, later in zip(energies, energies[1:]))


def test_sweep_marks_failed_rows():
    cfg = config_from_values({"t_end": 2.0, "dt": 1e-2})

    hypotheses = run_sweep(cfg, "a.m", [2.0, 2.5], workers=2)
    broken = run_sweep(cfg, "a.M", [1.0])

    assert [row.status for row in hypotheses.rows] == ["validation_failed", "done"]
    assert "absorbing_threshold" in hypotheses.rows[0].message
    assert hypotheses.verdicts == {"row_0": False, "row_1": True}
    assert broken.rows[0].status == "error"
    assert "exceeds a.M" in broken.rows[0].message
    assert broken.verdicts == {"row_0": False}


def test_sweep_rejects_unknown_parameter(default_cfg):
    with pytest.raises(ValueError):
        run_sweep(default_cfg, "n", [2])
    with pytest.raises(ValueError):
        run_sweep(default_cfg, "delay.b", [])


def test_report_fields_rejects_unknown_reports():
    with pytest.raises(TypeError):
        report_fields(object())
