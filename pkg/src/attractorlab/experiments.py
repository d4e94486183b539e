"""Experiment drivers: each assembles solver runs and bounds into one report."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .bounds import (
    BoundsReport,
    DecayFit,
    RegularityEnvelope,
    beta_feasible,
    default_delta,
    evaluate_bounds,
    fit_decay,
    regularity_envelopes,
    sigma_range,
    v1_decay_envelope,
)
from .config import RunConfig, model_from_config, phi_from_config, with_override
from .history import (
    ConstantHistory,
    DelayHistory,
    HistoryGenerator,
    ModalHistory,
    PerturbedHistory,
    RandomHistory,
    history_difference,
    window_eps_abs,
    window_sup_norms,
)
from .jobs import Job, run_jobs
from .model import LowpassForcing, ModelSpec, ValidationReport, validate_model
from .solver import SystemKind, Trajectory, integrate, integrate_joint, require_completed
from .spectral import SpectralField, coefficient_norms

log = logging.getLogger("attractorlab.experiments")

ADDITIVITY_TOL = 1e-10
PLATEAU_RATIO = 1.05
DISSIPATION_XI = 1e-3
ENVELOPE_TOL = 1e-12
NO_GROWTH_RATIO = 1.02
LINEARITY_TOL = 0.10
PULLBACK_FINAL_RATIO = 1e-3
# Diameters below this are at round-off and count as converged.
PULLBACK_FLOOR = 1e-12
DEPENDENCE_STREAM = 7
LARGE_PHI_STREAM = 1
LARGE_PHI_FACTOR = 10.0

SWEEP_PARAMS = ("delay.b", "delay.k", "a.m", "a.M", "f.kappa", "forcing.amplitude")


class ModelValidationError(RuntimeError):
    def __init__(self, report: ValidationReport) -> None:
        names = ", ".join(check.name for check in report.failures)
        super().__init__(f"model hypotheses failed: {names}")
        self.report = report


def validated(spec: ModelSpec) -> ValidationReport | None:
    """Run hypothesis checks unless the model opts out; raise on failure."""
    if spec.skip_validation:
        log.info("model validation skipped")
        return None
    report = validate_model(spec)
    if not report.passed:
        raise ModelValidationError(report)
    return report


def envelope_constant(slack: np.ndarray) -> float:
    """Smallest C with slack(t) - slack(s) <= C for all s <= t.

    With slack = D - xi * elapsed, this is the C in D(t) - D(s) <= xi (t - s) + C.
    """
    slack = np.asarray(slack, dtype=float)
    return float((slack - np.minimum.accumulate(slack)).max(initial=0.0))


def _quarter_max(series: np.ndarray, start: float, stop: float) -> float:
    size = series.shape[0]
    lo, hi = int(math.floor(start * size)), int(math.ceil(stop * size))
    chunk = series[lo:max(hi, lo + 1)]
    return float(chunk.max(initial=0.0))


def _ratio(numerator: float, denominator: float) -> float:
    if denominator == 0.0:
        return 0.0 if numerator == 0.0 else math.inf
    return numerator / denominator


def _defect(total: Trajectory, *parts: Trajectory) -> float:
    residual = total.coeffs - sum(part.coeffs for part in parts)
    return float(np.sqrt((residual**2).sum(axis=-1)).max(initial=0.0))


def _resolve_sigma(spec: ModelSpec, sigma: float | None) -> float:
    n, gamma = spec.basis.n, spec.nonlinearity.gamma
    if n >= 3:
        low, high = sigma_range(n, gamma)
    else:
        low, high = 0.0, 1.0 / 3.0
    if sigma is None:
        return 0.5 * (low + high)
    if not low < sigma < high:
        raise ValueError(f"sigma={sigma} outside ({low:g}, {high:.6g})")
    return sigma


@dataclass(frozen=True)
class SimulationReport:
    trajectory: Trajectory
    bounds: BoundsReport
    validation: ValidationReport | None

    @property
    def verdicts(self) -> dict[str, bool]:
        return dict(self.bounds.verdicts)


def run_simulation(spec: ModelSpec, phi: HistoryGenerator, tau: float, t_end: float, dt: float) -> SimulationReport:
    validation = validated(spec)
    traj = require_completed(integrate(SystemKind.FULL, spec, phi, tau, t_end, dt))
    return SimulationReport(trajectory=traj, bounds=evaluate_bounds(spec, traj), validation=validation)


@dataclass(frozen=True)
class DecompositionReport:
    trajectories: dict[SystemKind, Trajectory]
    sigma: float
    additivity_defect: float
    v1_fit: DecayFit
    v2_frac_series: np.ndarray
    v2_frac_sup: float
    plateau_ratio: float
    dissipation: np.ndarray
    xi: float
    c_xi: float
    c_xi_half: float
    j_xi: float

    @property
    def verdicts(self) -> dict[str, bool]:
        return {
            "additivity": self.additivity_defect <= ADDITIVITY_TOL,
            "v1_decays": self.v1_fit.skipped or self.v1_fit.rate > 0.0,
            "v2_bounded": self.plateau_ratio <= PLATEAU_RATIO,
            "dissipation_envelope": self.c_xi <= self.c_xi_half + ENVELOPE_TOL * max(1.0, self.c_xi_half),
        }


def run_decomposition(
    spec: ModelSpec,
    phi: HistoryGenerator,
    tau: float,
    horizon: float,
    sigma: float | None = None,
    dt: float = 1e-3,
    transient: float | None = None,
    xi: float = DISSIPATION_XI,
) -> DecompositionReport:
    k = spec.delay.k
    if not xi > 0.0:
        raise ValueError(f"xi must be positive, got {xi}")
    if horizon < 10.0 * k - 1e-12:
        raise ValueError(f"horizon {horizon} shorter than 10k = {10.0 * k}")
    sigma = _resolve_sigma(spec, sigma)
    runs = integrate_joint([SystemKind.V2_SPLIT], spec, phi, tau, tau + horizon, dt)
    for traj in runs.values():
        require_completed(traj)
    u, v1, v2 = runs[SystemKind.FULL], runs[SystemKind.V1_SPLIT], runs[SystemKind.V2_SPLIT]

    frac = v2.window_norms(sigma)["frac_ht_sq"]
    plateau = _ratio(_quarter_max(frac, 0.75, 1.0), _quarter_max(frac, 0.25, 0.75))

    grad_v1 = coefficient_norms(spec.basis.eigenvalues, v1.coeffs)["h1_sq"]
    dissipation = cumulative_trapezoid(grad_v1, v1.times, initial=0.0)
    elapsed = v1.times - tau
    slack = dissipation - xi * elapsed
    half = slack.size // 2 + 1

    frac1 = coefficient_norms(spec.basis.eigenvalues, v2.coeffs, 0.0, sigma)["frac1_sq"]
    report = DecompositionReport(
        trajectories=runs,
        sigma=sigma,
        additivity_defect=_defect(u, v1, v2),
        v1_fit=v1_decay_envelope(v1, transient),
        v2_frac_series=frac,
        v2_frac_sup=float(frac.max(initial=0.0)),
        plateau_ratio=plateau,
        dissipation=dissipation,
        xi=xi,
        c_xi=envelope_constant(slack),
        c_xi_half=envelope_constant(slack[:half]),
        j_xi=float(frac1.max(initial=0.0)),
    )
    log.info(
        "decomposition: defect=%.3e v1 rate=%.6g plateau=%.6g c_xi=%.6g (half %.6g)",
        report.additivity_defect,
        report.v1_fit.rate,
        report.plateau_ratio,
        report.c_xi,
        report.c_xi_half,
    )
    return report


@dataclass(frozen=True)
class PullbackReport:
    t_star: float
    taus: tuple[float, ...]
    labels: tuple[str, ...]
    pairwise: dict[float, np.ndarray]
    to_reference: dict[float, np.ndarray]
    diameters: tuple[float, ...]
    reference: Trajectory | None = None

    @property
    def final_ratio(self) -> float:
        return _ratio(self.diameters[-1], self.diameters[0])

    @property
    def verdicts(self) -> dict[str, bool]:
        decreasing = all(
            later < earlier or max(earlier, later) <= PULLBACK_FLOOR
            for earlier, later in zip(self.diameters, self.diameters[1:])
        )
        return {
            "diameters_decreasing": decreasing,
            "diameter_contracts": self.diameters[-1] <= PULLBACK_FINAL_RATIO * self.diameters[0]
            or self.diameters[-1] <= PULLBACK_FLOOR,
        }


def default_phi_set(cfg: RunConfig, spec: ModelSpec) -> list[tuple[str, HistoryGenerator]]:
    basis = spec.basis
    return [
        ("zero", ConstantHistory(basis.zeros())),
        ("large", RandomHistory(basis, cfg.seed, LARGE_PHI_STREAM, cfg.phi_decay, LARGE_PHI_FACTOR * cfg.phi_scale)),
        ("modal", ModalHistory(basis, (cfg.phi_scale,))),
    ]


def c_ht_distance(first: Trajectory, second: Trajectory, t: float) -> float:
    diff = history_difference(first.history, second.history)
    return math.sqrt(window_sup_norms(diff, t, first.epsilon).ht_sq)


def run_pullback(
    spec: ModelSpec,
    t_star: float,
    taus: Sequence[float],
    phi_set: Sequence[tuple[str, HistoryGenerator]],
    dt: float = 1e-3,
    workers: int = 1,
) -> PullbackReport:
    taus = tuple(float(tau) for tau in taus)
    if not taus:
        raise ValueError("need at least one start time")
    if any(later >= earlier for earlier, later in zip(taus, taus[1:])):
        raise ValueError(f"start times must be strictly decreasing, got {taus}")
    if taus[0] >= t_star - spec.delay.k:
        raise ValueError(f"start times must lie below t* - k = {t_star - spec.delay.k}")
    if len(phi_set) < 2:
        raise ValueError("need at least two initial histories")

    jobs = [
        Job(id=i * len(phi_set) + j, kind="pullback", params={"tau": tau, "phi": label})
        for i, tau in enumerate(taus)
        for j, (label, _) in enumerate(phi_set)
    ]
    generators = dict(phi_set)

    def _run(job: Job) -> Trajectory:
        phi = generators[job.params["phi"]]
        return require_completed(integrate(SystemKind.FULL, spec, phi, job.params["tau"], t_star, dt))

    results = run_jobs(jobs, _run, workers)
    failed = [result for result in results if not result.ok]
    if failed:
        raise RuntimeError(f"pullback run {failed[0].id} failed: {failed[0].error}")
    runs = {
        (taus[result.id // len(phi_set)], phi_set[result.id % len(phi_set)][0]): result.value for result in results
    }

    labels = tuple(label for label, _ in phi_set)
    reference = runs[(taus[-1], labels[0])]
    pairwise: dict[float, np.ndarray] = {}
    to_reference: dict[float, np.ndarray] = {}
    diameters = []
    for tau in taus:
        matrix = np.zeros((len(labels), len(labels)))
        for a in range(len(labels)):
            for b in range(a + 1, len(labels)):
                matrix[a, b] = matrix[b, a] = c_ht_distance(runs[(tau, labels[a])], runs[(tau, labels[b])], t_star)
        pairwise[tau] = matrix
        to_reference[tau] = np.array([c_ht_distance(runs[(tau, label)], reference, t_star) for label in labels])
        diameters.append(float(matrix.max()))
        log.info("pullback tau=%s diameter=%.6e", tau, diameters[-1])
    return PullbackReport(
        t_star=t_star,
        taus=taus,
        labels=labels,
        pairwise=pairwise,
        to_reference=to_reference,
        diameters=tuple(diameters),
        reference=reference,
    )


@dataclass(frozen=True)
class RegularityReport:
    trajectories: dict[SystemKind, Trajectory]
    r1_sq: float
    envelope: RegularityEnvelope
    measured: np.ndarray
    window_start: float
    measured_sup: float
    envelope_min: float
    additivity_defect: float
    growth_ratio: float
    u1_fit: DecayFit | None

    @property
    def verdicts(self) -> dict[str, bool]:
        mask = self.envelope.times >= self.window_start - 1e-12
        within = bool(np.all(self.measured[mask] <= self.envelope.k_bar[mask]))
        out = {
            "bounded_by_envelope": within,
            "additivity": self.additivity_defect <= ADDITIVITY_TOL,
            "no_growth": self.growth_ratio <= NO_GROWTH_RATIO,
        }
        if self.u1_fit is not None:
            out["u1_decays"] = self.u1_fit.skipped or self.u1_fit.rate > 0.0
        return out


def run_regularity(
    spec: ModelSpec,
    phi: HistoryGenerator,
    tau: float,
    horizon: float,
    htilde: LowpassForcing | None = None,
    rates: tuple[float | None, float | None] = (None, None),
    dt: float = 1e-3,
    transient: float | None = None,
) -> RegularityReport:
    lowpass = htilde or LowpassForcing(spec.forcing)
    runs = integrate_joint([SystemKind.U1_REG, SystemKind.U2_REG], spec, phi, tau, tau + horizon, dt, lowpass)
    for traj in runs.values():
        require_completed(traj)
    u, u1, u2 = runs[SystemKind.FULL], runs[SystemKind.U1_REG], runs[SystemKind.U2_REG]
    r1_sq = lowpass.tail_power(spec.basis, u.times)
    envelope = regularity_envelopes(spec, u, r1_sq, lowpass, rates)
    measured = u.window_norms()["h1t_sq"]
    transient = 5.0 * spec.delay.k if transient is None else transient
    start = tau + transient
    mask = u.times >= start - 1e-12
    growth = _ratio(_quarter_max(measured, 0.75, 1.0), _quarter_max(measured, 0.5, 0.75))
    u1_fit = fit_decay(u1, "h1t_sq", transient) if lowpass.cutoff is None else None
    report = RegularityReport(
        trajectories=runs,
        r1_sq=r1_sq,
        envelope=envelope,
        measured=measured,
        window_start=start,
        measured_sup=float(measured[mask].max(initial=0.0)),
        envelope_min=float(envelope.k_bar[mask].min(initial=math.inf)),
        additivity_defect=_defect(u, u1, u2),
        growth_ratio=growth,
        u1_fit=u1_fit,
    )
    log.info(
        "regularity: sup=%.6g min K_bar=%.6g r1^2=%.6g growth=%.4f",
        report.measured_sup,
        report.envelope_min,
        r1_sq,
        growth,
    )
    return report


@dataclass(frozen=True)
class DependenceReport:
    sizes: tuple[float, ...]
    initial: tuple[float, ...]
    final: tuple[float, ...]
    horizon: float
    rate: float
    linearity_defect: float
    base: Trajectory | None = None

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(_ratio(d, d0) for d0, d in zip(self.initial, self.final) if d0 > 0.0)

    @property
    def verdicts(self) -> dict[str, bool]:
        return {
            "linear_response": self.linearity_defect <= LINEARITY_TOL,
            "rate_finite": math.isfinite(self.rate) and self.rate >= 0.0,
            "zero_perturbation": all(d == 0.0 for d0, d in zip(self.initial, self.final) if d0 == 0.0),
        }


def unit_direction(spec: ModelSpec, seed: int, tau: float) -> SpectralField:
    """Seeded direction with unit C_{H_t} norm on [tau - k, tau]."""
    rng = np.random.default_rng([seed, DEPENDENCE_STREAM])
    raw = rng.standard_normal(spec.basis.mode_count) * spec.basis.eigenvalues ** (-1.0)
    eps_abs = window_eps_abs(spec.epsilon, np.linspace(tau - spec.delay.k, tau, 101))
    norm_sq = float((raw**2).sum() + eps_abs * (raw**2 * spec.basis.eigenvalues).sum())
    return SpectralField(spec.basis, raw / math.sqrt(norm_sq))


def run_dependence(
    spec: ModelSpec,
    phi: HistoryGenerator,
    sizes: Sequence[float],
    tau: float,
    t_star: float,
    seed: int = 0,
    dt: float = 1e-3,
    workers: int = 1,
) -> DependenceReport:
    sizes = tuple(float(size) for size in sizes)
    if not sizes or any(size < 0.0 for size in sizes):
        raise ValueError(f"perturbation sizes must be nonnegative, got {sizes}")
    if t_star <= tau:
        raise ValueError(f"t*={t_star} must exceed tau={tau}")
    direction = unit_direction(spec, seed, tau)
    generators: list[HistoryGenerator] = [phi] + [PerturbedHistory(phi, direction, size) for size in sizes]
    jobs = [Job(id=i, kind="dependence", params={"size": 0.0 if i == 0 else sizes[i - 1]}) for i in range(len(generators))]

    def _run(job: Job) -> Trajectory:
        return require_completed(integrate(SystemKind.FULL, spec, generators[job.id], tau, t_star, dt))

    results = run_jobs(jobs, _run, workers)
    failed = [result for result in results if not result.ok]
    if failed:
        raise RuntimeError(f"dependence run {failed[0].id} failed: {failed[0].error}")
    base = results[0].value
    initial, final = [], []
    for result in results[1:]:
        traj = result.value
        start = history_difference(_initial_history(spec, traj), _initial_history(spec, base))
        initial.append(math.sqrt(window_sup_norms(start, tau, spec.epsilon).ht_sq))
        final.append(c_ht_distance(traj, base, t_star))

    horizon = t_star - tau
    ratios = [d / d0 for d0, d in zip(initial, final) if d0 > 0.0]
    rate = max(0.0, max((math.log(r) / horizon for r in ratios if r > 0.0), default=0.0))
    positive = sorted(((d0, d) for d0, d in zip(initial, final) if d0 > 0.0), reverse=True)
    defect = 0.0
    for (d0_a, d_a), (d0_b, d_b) in zip(positive, positive[1:]):
        defect = max(defect, abs(_ratio(d_a, d_b) / (d0_a / d0_b) - 1.0))
    report = DependenceReport(
        sizes=sizes,
        initial=tuple(initial),
        final=tuple(final),
        horizon=horizon,
        rate=rate,
        linearity_defect=defect,
        base=base,
    )
    log.info("dependence: rate=%.6g linearity defect=%.4f", rate, defect)
    return report


def _initial_history(spec: ModelSpec, traj: Trajectory) -> DelayHistory:
    history = DelayHistory(spec.basis, traj.tau, traj.dt, spec.delay.k)
    steps = traj.prehistory.shape[0]
    for offset, coeffs in enumerate(traj.prehistory):
        history.push(offset - steps, coeffs)
    history.push(0, traj.coeffs[0])
    return history


@dataclass(frozen=True)
class SweepRow:
    index: int
    value: float
    status: str
    message: str | None = None
    beta: float = math.nan
    beta1: float = math.nan
    terminal_energy: float = math.nan
    bounds_passed: bool | None = None


@dataclass(frozen=True)
class SweepReport:
    param: str
    rows: tuple[SweepRow, ...] = field(default_factory=tuple)

    @property
    def verdicts(self) -> dict[str, bool]:
        return {f"row_{row.index}": row.status == "done" and bool(row.bounds_passed) for row in self.rows}


def _sweep_one(cfg: RunConfig, param: str, value: float, index: int) -> SweepRow:
    local = with_override(cfg, param, value)
    spec = model_from_config(local)
    try:
        validated(spec)
    except ModelValidationError as exc:
        return SweepRow(index=index, value=value, status="validation_failed", message=str(exc))
    choice = beta_feasible(spec, local.delta or default_delta(spec))
    phi = phi_from_config(local, spec.basis)
    traj = require_completed(integrate(SystemKind.FULL, spec, phi, local.tau, local.t_end, local.dt))
    bounds = evaluate_bounds(spec, traj, local.delta)
    terminal = float(traj.norm_series()["ht_sq"][-1])
    return SweepRow(
        index=index,
        value=value,
        status="done",
        beta=choice.beta,
        beta1=choice.beta1,
        terminal_energy=terminal,
        bounds_passed=bounds.passed,
    )


def run_sweep(cfg: RunConfig, param: str, values: Sequence[float], workers: int = 1) -> SweepReport:
    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; choose one of {', '.join(SWEEP_PARAMS)}")
    values = tuple(float(value) for value in values)
    if not values:
        raise ValueError("sweep needs at least one value")
    jobs = [Job(id=i, kind="sweep", params={param: value}) for i, value in enumerate(values)]
    results = run_jobs(jobs, lambda job: _sweep_one(cfg, param, values[job.id], job.id), workers)
    rows = []
    for result in results:
        if result.ok:
            rows.append(result.value)
        else:
            rows.append(SweepRow(index=result.id, value=values[result.id], status="error", message=result.error))
    return SweepReport(param=param, rows=tuple(rows))


def report_fields(report: Any) -> dict[str, Any]:
    """Flat key/value view of a report for the text writer."""
    if isinstance(report, SimulationReport):
        return bounds_fields(report.bounds)
    if isinstance(report, DecompositionReport):
        return {
            "sigma": report.sigma,
            "additivity_defect": report.additivity_defect,
            "v1_rate": report.v1_fit.rate,
            "v1_prefactor": report.v1_fit.prefactor,
            "v1_r_squared": report.v1_fit.r_squared,
            "v1_fit_skipped": report.v1_fit.skipped,
            "v2_frac_sup": report.v2_frac_sup,
            "c1_tilde": report.v2_frac_sup,
            "plateau_ratio": report.plateau_ratio,
            "xi": report.xi,
            "c_xi": report.c_xi,
            "c_xi_half": report.c_xi_half,
            "j_xi": report.j_xi,
        }
    if isinstance(report, PullbackReport):
        out: dict[str, Any] = {"t_star": report.t_star, "taus": report.taus, "phi_set": ",".join(report.labels)}
        for tau, diameter in zip(report.taus, report.diameters):
            out[f"diameter[{tau:g}]"] = diameter
            out[f"to_reference[{tau:g}]"] = report.to_reference[tau]
        out["diameters"] = report.diameters
        out["final_ratio"] = report.final_ratio
        return out
    if isinstance(report, RegularityReport):
        out = {
            "r1_sq": report.r1_sq,
            "rate1": report.envelope.rate1,
            "rate2": report.envelope.rate2,
            "window_start": report.window_start,
            "measured_sup": report.measured_sup,
            "k1_final": float(report.envelope.k1[-1]),
            "k2_final": float(report.envelope.k2[-1]),
            "k_bar_min": report.envelope_min,
            "additivity_defect": report.additivity_defect,
            "growth_ratio": report.growth_ratio,
        }
        if report.u1_fit is not None:
            out["u1_rate"] = report.u1_fit.rate
            out["u1_r_squared"] = report.u1_fit.r_squared
        return out
    if isinstance(report, DependenceReport):
        return {
            "sizes": report.sizes,
            "initial_distance": report.initial,
            "final_distance": report.final,
            "ratios": report.ratios,
            "horizon": report.horizon,
            "gronwall_rate": report.rate,
            "linearity_defect": report.linearity_defect,
        }
    if isinstance(report, SweepReport):
        out = {"param": report.param}
        for row in report.rows:
            prefix = f"row[{row.index}]"
            out[f"{prefix}.value"] = row.value
            out[f"{prefix}.status"] = row.status
            out[f"{prefix}.beta"] = row.beta
            out[f"{prefix}.beta1"] = row.beta1
            out[f"{prefix}.terminal_energy"] = row.terminal_energy
            if row.message:
                out[f"{prefix}.message"] = row.message
        return out
    raise TypeError(f"no field view for {type(report).__name__}")


def bounds_fields(bounds: BoundsReport) -> dict[str, Any]:
    choice = bounds.choice
    out: dict[str, Any] = {
        "delta": bounds.delta,
        "delta_bar": choice.delta_bar,
        "beta_max": choice.beta_max,
        "beta": choice.beta,
        "beta1": choice.beta1,
        "prefactor": bounds.prefactor,
        "sigma_range": "none" if bounds.sigma_range is None else f"({bounds.sigma_range[0]:g}, {bounds.sigma_range[1]:.17g})",
        "forcing_growth_integral": bounds.forcing_tail,
        "R0_sq_final": float(bounds.r0_sq[-1]),
        "R_sq_final": float(bounds.r_sq[-1]),
        "measured_final": float(bounds.measured[-1]),
        "worst_measured_over_R0_sq": bounds.worst_ratio(),
    }
    for key, value in bounds.provenance.items():
        out[f"provenance.{key}"] = value
    return out
