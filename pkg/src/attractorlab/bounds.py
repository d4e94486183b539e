"""Closed-form dissipativity constants and envelopes, checked against trajectories."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import lfilter
from scipy.stats import linregress

from .history import WindowNorms
from .model import EPSILON_SAMPLE_TIMES, LowpassForcing, ModelSpec, epsilon_eval
from .solver import SystemKind, Trajectory

log = logging.getLogger("attractorlab.bounds")

BETA_RESOLUTION = 1e-3
BOUND_SLACK = 1e-6
PREFACTOR_TOL = 1e-12
UNDERFLOW_FLOOR = 1e-300


class InfeasibleBoundsError(RuntimeError):
    pass


@dataclass(frozen=True)
class BetaChoice:
    beta: float
    beta1: float
    beta_max: float
    delta_bar: float
    feasible: bool


@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    r_squared: float
    skipped: bool = False
    window_start: float | None = None


@dataclass(frozen=True)
class RegularityEnvelope:
    times: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    rate1: float
    rate2: float

    @property
    def k_bar(self) -> np.ndarray:
        return self.k1 + self.k2


@dataclass(frozen=True)
class BoundsReport:
    delta: float
    choice: BetaChoice
    prefactor: float
    times: np.ndarray
    r0_sq: np.ndarray
    r_sq: np.ndarray
    measured: np.ndarray
    sigma_range: tuple[float, float] | None
    forcing_tail: float
    verdicts: dict[str, bool] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def worst_ratio(self) -> float:
        if not np.all(np.isfinite(self.r0_sq)):
            return float("nan")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(self.r0_sq > 0, self.measured / self.r0_sq, 0.0)
        return float(ratio.max(initial=0.0))


def default_delta(spec: ModelSpec) -> float:
    return spec.lambda1 / 2.0


def delta_bar(spec: ModelSpec, delta: float) -> float:
    lam1 = spec.lambda1
    _, deps = epsilon_eval(spec.epsilon, EPSILON_SAMPLE_TIMES)
    return 2.0 * spec.coefficient.m + float(np.min(-deps)) - 2.0 - 1.0 / (2.0 * lam1) - delta / lam1


def beta1_of(spec: ModelSpec, beta):
    """beta - (2 C_g / (1 + lambda1 L)) e^(beta k)."""
    coupling = 2.0 * spec.delay.lipschitz / (1.0 + spec.lambda1 * spec.epsilon.L)
    return beta - coupling * np.exp(np.asarray(beta) * spec.delay.k)


def beta_feasible(spec: ModelSpec, delta: float) -> BetaChoice:
    lam1 = spec.lambda1
    if not 0.0 < delta < lam1:
        raise ValueError(f"delta={delta} outside (0, lambda1={lam1})")
    dbar = delta_bar(spec, delta)
    if spec.epsilon.kind == "increasing":
        beta_max = dbar / (1.0 / lam1 + spec.epsilon.alpha)
    else:
        beta_max = lam1 * dbar / (1.0 + lam1 * spec.epsilon.L)
    if beta_max <= 0.0:
        return BetaChoice(0.0, 0.0, beta_max, dbar, False)
    count = int(math.floor(beta_max / BETA_RESOLUTION + 1e-9))
    grid = BETA_RESOLUTION * np.arange(1, count + 1)
    if grid.size == 0 or grid[-1] < beta_max:
        grid = np.append(grid, beta_max)
    values = beta1_of(spec, grid)
    best = int(np.argmax(values))
    beta, beta1 = float(grid[best]), float(values[best])
    feasible = beta1 > 0.0
    log.debug("beta scan: delta_bar=%.6g beta_max=%.6g beta=%.6g beta1=%.6g", dbar, beta_max, beta, beta1)
    return BetaChoice(beta, beta1, beta_max, dbar, feasible)


def prefactor(spec: ModelSpec, beta: float, beta1: float) -> float:
    c_g = spec.delay.lipschitz
    if c_g == 0.0:
        return 2.0
    gap = beta - beta1
    if gap <= 0.0:
        raise InfeasibleBoundsError(f"beta - beta1 = {gap} must be positive")
    return 1.0 + 2.0 * c_g * math.exp(beta * spec.delay.k) / ((1.0 + spec.lambda1 * spec.epsilon.L) * gap)


def discounted_integral(values: np.ndarray, dt: float, rate: float) -> np.ndarray:
    """int_tau^t_i e^(-rate (t_i - s)) H(s) ds at every sample, trapezoid per step."""
    values = np.asarray(values, dtype=float)
    decay = math.exp(-rate * dt)
    increments = np.zeros_like(values)
    increments[1:] = 0.5 * dt * (decay * values[:-1] + values[1:])
    return lfilter([1.0], [1.0, -decay], increments)


def _require(choice: BetaChoice) -> None:
    if not choice.feasible or choice.beta1 <= 0.0:
        raise InfeasibleBoundsError(f"beta1={choice.beta1:.6g} is not positive")


def forcing_integral(spec: ModelSpec, times: np.ndarray, rate: float) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    dt = float(times[1] - times[0]) if times.size > 1 else 1.0
    return discounted_integral(spec.forcing.norm_sq(spec.basis, times), dt, rate)


def absorbing_radius(
    spec: ModelSpec,
    phi_norms: WindowNorms,
    tau: float,
    times: np.ndarray,
    choice: BetaChoice,
    delta: float,
) -> np.ndarray:
    _require(choice)
    times = np.asarray(times, dtype=float)
    P = prefactor(spec, choice.beta, choice.beta1)
    start = phi_norms.l2_sq + phi_norms.eps_abs * phi_norms.grad_sq
    transient = P * start * np.exp(-choice.beta1 * (times - tau))
    driven = (P / delta) * math.exp(choice.beta * spec.delay.k) * forcing_integral(spec, times, choice.beta1)
    return transient + driven


def absorbing_ball_radius(spec: ModelSpec, times: np.ndarray, choice: BetaChoice, delta: float) -> np.ndarray:
    _require(choice)
    P = prefactor(spec, choice.beta, choice.beta1)
    integral = forcing_integral(spec, times, choice.beta1)
    return 1.0 + (P / delta) * math.exp(choice.beta * spec.delay.k) * integral


def forcing_growth_condition(spec: ModelSpec, times: np.ndarray, beta1: float) -> float:
    """int e^(beta1 s) ||h(s)||^2 ds over the run window; finite means the tempered condition holds there."""
    times = np.asarray(times, dtype=float)
    weighted = np.exp(beta1 * times) * spec.forcing.norm_sq(spec.basis, times)
    return float(trapezoid(weighted, times))


def sigma_range(n: int, gamma: float) -> tuple[float, float]:
    if n < 3:
        raise ValueError(f"sigma range needs n >= 3, got n={n}")
    gamma_max = (n + 2) / (n - 2)
    if not 0.0 < gamma < gamma_max:
        raise ValueError(f"gamma={gamma} outside (0, {gamma_max:g})")
    return 0.0, min(1.0 / 3.0, (n + 2 - (n - 2) * gamma) / 2.0)


def default_sigma(n: int, gamma: float) -> float:
    low, high = sigma_range(n, gamma)
    return 0.5 * (low + high)


def energy_series(traj: Trajectory) -> np.ndarray:
    eps, _ = traj.epsilon_series()
    c2 = traj.coeffs**2
    return c2.sum(axis=-1) + eps * (c2 * traj.basis.eigenvalues).sum(axis=-1)


def energy_identity_residual(traj: Trajectory, s: float, t: float) -> float:
    """Relative defect of the energy identity between snapshots s <= t."""
    i, j = traj.index_of(s), traj.index_of(t)
    if j < i:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    if i == j:
        return 0.0
    window = slice(i, j + 1)
    times = traj.times[window]
    energy = energy_series(traj)
    _, deps = traj.epsilon_series()
    grad = (traj.coeffs[window] ** 2 * traj.basis.eigenvalues).sum(axis=-1)
    dissipation = (2.0 * traj.a_values[window] - deps[window]) * grad
    power = 2.0 * traj.power[window]
    change = energy[j] - energy[i]
    defect = change + trapezoid(dissipation, x=times) - trapezoid(power, x=times)
    scale = max(
        abs(energy[i]),
        abs(energy[j]),
        float(trapezoid(np.abs(dissipation), x=times)),
        float(trapezoid(np.abs(power), x=times)),
    )
    if scale == 0.0:
        return 0.0
    return abs(defect) / scale


def fit_decay(traj: Trajectory, key: str = "ht_sq", transient: float | None = None) -> DecayFit:
    """Least-squares fit of log ||.||^2_C against t after the transient."""
    k = traj.delay_steps * traj.dt
    if transient is None:
        transient = 5.0 * k
    series = traj.window_norms()[key]
    start = traj.tau + transient
    mask = traj.times >= start - 1e-12
    if not np.any(series > 0.0) or np.count_nonzero(mask) < 3:
        return DecayFit(rate=math.inf, prefactor=0.0, r_squared=1.0, skipped=True, window_start=start)
    values = np.log(np.maximum(series[mask], UNDERFLOW_FLOOR))
    fit = linregress(traj.times[mask], values)
    rate = -float(fit.slope)
    return DecayFit(
        rate=rate,
        prefactor=math.exp(float(fit.intercept) - rate * (k + traj.tau)),
        r_squared=float(fit.rvalue) ** 2,
        window_start=start,
    )


def v1_decay_envelope(traj_v1: Trajectory, transient: float | None = None) -> DecayFit:
    if traj_v1.kind is not SystemKind.V1_SPLIT:
        raise ValueError(f"expected a v1_split trajectory, got {traj_v1.kind.value}")
    return fit_decay(traj_v1, "ht_sq", transient)


def max_regularity_rate(spec: ModelSpec) -> float:
    lam1 = spec.lambda1
    L = spec.epsilon.L
    return (2.0 + L + 1.0 / (2.0 * lam1)) / (1.0 / lam1 + L)


def regularity_envelopes(
    spec: ModelSpec,
    traj: Trajectory,
    r1_sq: float,
    htilde: LowpassForcing | None = None,
    rates: tuple[float | None, float | None] = (None, None),
    delta: float | None = None,
) -> RegularityEnvelope:
    """K1, K2 and their sum at every snapshot of the full trajectory ``traj``."""
    limit = max_regularity_rate(spec)
    rate1 = limit if rates[0] is None else rates[0]
    rate2 = limit if rates[1] is None else rates[1]
    for name, rate in (("r1", rate1), ("r2", rate2)):
        if not 0.0 < rate <= limit * (1 + 1e-12):
            raise ValueError(f"rate {name}={rate} outside (0, {limit:.6g}]")
    delta = default_delta(spec) if delta is None else delta
    choice = beta_feasible(spec, delta)
    k = spec.delay.k
    times = traj.times
    tau = traj.tau
    phi_norms = initial_window_norms(traj)
    phi_h1t = phi_norms.h1t_sq
    ball = np.maximum(
        absorbing_ball_radius(spec, times, choice, delta),
        absorbing_radius(spec, phi_norms, tau, times, choice, delta),
    )
    lowpass = htilde or LowpassForcing(spec.forcing)
    htilde_sq = (lowpass.evaluate(spec.basis, times) ** 2).sum(axis=-1)
    source = (2.0 * spec.lambda1**2 + 4.0 * spec.delay.lipschitz) * ball + 4.0 * htilde_sq

    k1 = np.exp(-rate1 * (times + k - tau)) * phi_h1t + r1_sq / rate1
    k2 = np.exp(-rate2 * (times + k - tau)) * phi_h1t + math.exp(rate2 * k) * discounted_integral(
        source, traj.dt, rate2
    )
    return RegularityEnvelope(times=times, k1=k1, k2=k2, rate1=rate1, rate2=rate2)


def initial_window_norms(traj: Trajectory) -> WindowNorms:
    windows = traj.window_norms()
    return WindowNorms(
        l2_sq=float(windows["l2_sq"][0]),
        grad_sq=float(windows["grad_sq"][0]),
        ht_sq=float(windows["ht_sq"][0]),
        h1t_sq=float(windows["h1t_sq"][0]),
        eps_abs=float(windows["eps_abs"][0]),
    )


def evaluate_bounds(spec: ModelSpec, traj: Trajectory, delta: float | None = None) -> BoundsReport:
    if traj.kind is not SystemKind.FULL:
        raise ValueError(f"bounds are stated for the full system, got {traj.kind.value}")
    delta = default_delta(spec) if delta is None else delta
    choice = beta_feasible(spec, delta)
    measured = traj.window_norms()["ht_sq"]
    times = traj.times
    try:
        sigma = sigma_range(spec.basis.n, spec.nonlinearity.gamma)
    except ValueError:
        sigma = None

    nan = np.full(times.shape, np.nan)
    verdicts = {"beta1_positive": choice.feasible}
    provenance = {
        "beta": f"argmax of beta1 over (0, {choice.beta_max:.6g}] step {BETA_RESOLUTION:g}",
        "delta": f"{delta:.6g}",
        "C_g": f"{spec.delay.lipschitz:.6g}",
        "lambda1": f"{spec.lambda1:.6g}",
        "L": f"{spec.epsilon.L:.6g}",
        "k": f"{spec.delay.k:.6g}",
    }
    if choice.feasible:
        P = prefactor(spec, choice.beta, choice.beta1)
        r0 = absorbing_radius(spec, initial_window_norms(traj), traj.tau, times, choice, delta)
        r = absorbing_ball_radius(spec, times, choice, delta)
        tail = forcing_growth_condition(spec, times, choice.beta1)
        verdicts["absorbing_bound_holds"] = bool(np.all(measured <= r0 * (1.0 + BOUND_SLACK)))
        verdicts["prefactor_identity"] = abs(P - 2.0) <= PREFACTOR_TOL
    else:
        P, r0, r, tail = math.nan, nan, nan, math.nan
        verdicts["absorbing_bound_holds"] = False
        verdicts["prefactor_identity"] = False
    report = BoundsReport(
        delta=delta,
        choice=choice,
        prefactor=P,
        times=times,
        r0_sq=r0,
        r_sq=r,
        measured=measured,
        sigma_range=sigma,
        forcing_tail=tail,
        verdicts=verdicts,
        provenance=provenance,
    )
    log.info(
        "bounds: beta=%.6g beta1=%.6g P=%.6g worst measured/R0^2=%.6g",
        choice.beta,
        choice.beta1,
        P,
        report.worst_ratio(),
    )
    return report
