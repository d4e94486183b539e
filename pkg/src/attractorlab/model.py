"""Structural hypotheses of the model: epsilon profile, nonlocal coefficient,
nonlinearity split, delay operator and forcing, plus their sampled checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import expit

from .spectral import (
    EigenBasis,
    SpectralField,
    coeffs_to_grid,
    grid_to_coeffs,
    inner_product,
)

log = logging.getLogger("attractorlab.model")

EpsilonKind = Literal["decreasing", "increasing", "constant"]
DelayKind = Literal["discrete", "distributed"]

# Fixed sampling grids so a failed check is reproducible.
EPSILON_LIMIT_TIMES = (10.0, 50.0, 100.0)
EPSILON_SAMPLE_TIMES = np.linspace(-100.0, 100.0, 4001)
NONLINEARITY_SAMPLES = np.concatenate(
    [-np.logspace(-3, 4, 141)[::-1], [0.0], np.logspace(-3, 4, 141)]
)
LIMSUP_SAMPLES = (1e2, 1e3, 1e4)
LIPSCHITZ_PAIRS = 100
LIPSCHITZ_SEED = 20240601


class NonFiniteStateError(ArithmeticError):
    """Raised when grid values overflow to NaN/Inf during a nonlinear evaluation."""


@dataclass(frozen=True)
class EpsilonProfile:
    kind: EpsilonKind = "decreasing"
    base: float = 1.0
    amplitude: float = 0.5
    alpha: float = 0.75
    L: float = 1.625


def epsilon_eval(profile: EpsilonProfile, t):
    """Return ``(eps(t), eps'(t))``; works elementwise on arrays."""
    t = np.asarray(t, dtype=float)
    if profile.kind == "constant":
        eps = np.full_like(t, profile.base)
        deps = np.zeros_like(t)
    else:
        sign = 1.0 if profile.kind == "decreasing" else -1.0
        eps = profile.base + sign * profile.amplitude * expit(-t)
        deps = -sign * profile.amplitude * expit(t) * expit(-t)
    if eps.ndim == 0:
        return float(eps), float(deps)
    return eps, deps


@dataclass(frozen=True)
class NonlocalCoefficient:
    a_lo: float
    a_hi: float
    m: float
    M: float
    weight: SpectralField


def a_value(coef: NonlocalCoefficient, s: float) -> float:
    s2 = s * s
    return coef.a_lo + (coef.a_hi - coef.a_lo) * s2 / (1.0 + s2)


def a_eval(coef: NonlocalCoefficient, u: SpectralField) -> float:
    return a_value(coef, inner_product(coef.weight, u))


@dataclass(frozen=True)
class NonlinearitySplit:
    """f = f0 + f1 with f0(u) = -cubic*u^3 and f1(u) = kappa*u/(1+u^2)."""

    cubic: float = 1.0
    kappa: float = 0.5
    gamma: float = 1.0
    p: float = 4.0
    growth_constant: float = 4.0


def critical_exponent(n: int, fallback: float = 2.0) -> float:
    return 4.0 / (n - 2) if n >= 3 else fallback


def f0_pointwise(split: NonlinearitySplit, u: np.ndarray) -> np.ndarray:
    return -split.cubic * u**3


def f1_pointwise(split: NonlinearitySplit, u: np.ndarray) -> np.ndarray:
    return split.kappa * u / (1.0 + u * u)


def f_pointwise(split: NonlinearitySplit, u: np.ndarray) -> np.ndarray:
    return f0_pointwise(split, u) + f1_pointwise(split, u)


def nonlinear_coeffs(
    split: NonlinearitySplit, basis: EigenBasis, coeffs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Project f0(u) and f1(u) back onto the basis through one shared grid evaluation."""
    grid = coeffs_to_grid(basis, coeffs)
    if not np.all(np.isfinite(grid)):
        raise NonFiniteStateError("non-finite grid values in nonlinear evaluation")
    with np.errstate(over="raise", invalid="raise"):
        try:
            f0 = f0_pointwise(split, grid)
            f1 = f1_pointwise(split, grid)
        except FloatingPointError as exc:
            raise NonFiniteStateError(str(exc)) from exc
    return grid_to_coeffs(basis, f0), grid_to_coeffs(basis, f1)


def f0_eval(split: NonlinearitySplit, u: SpectralField) -> SpectralField:
    f0, _ = nonlinear_coeffs(split, u.basis, u.coeffs)
    return SpectralField(u.basis, f0)


def f1_eval(split: NonlinearitySplit, u: SpectralField) -> SpectralField:
    _, f1 = nonlinear_coeffs(split, u.basis, u.coeffs)
    return SpectralField(u.basis, f1)


def f_eval(split: NonlinearitySplit, u: SpectralField) -> SpectralField:
    f0, f1 = nonlinear_coeffs(split, u.basis, u.coeffs)
    return SpectralField(u.basis, f0 + f1)


@dataclass(frozen=True)
class DelayOperator:
    kind: DelayKind = "discrete"
    b: float = 0.1
    k: float = 0.5
    c_g: float | None = None

    @property
    def lipschitz(self) -> float:
        return self.b * self.b if self.c_g is None else self.c_g


def g_eval(op: DelayOperator, window: np.ndarray, dt: float) -> np.ndarray:
    """Delay term from a window ordered theta = -k, -k+dt, ..., 0."""
    window = np.asarray(window, dtype=float)
    if op.kind == "discrete":
        return op.b * window[0]
    return (op.b / op.k) * trapezoid(window, dx=dt, axis=0)


@dataclass(frozen=True)
class Forcing:
    """h(t) = amplitude*cos(omega*t) e_1 + offset e_last."""

    amplitude: float = 1.0
    omega: float = 2.0 * math.pi
    offset: float = 0.25

    def evaluate(self, basis: EigenBasis, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape + (basis.mode_count,))
        out[..., 0] = self.amplitude * np.cos(self.omega * t)
        out[..., -1] += self.offset
        return out

    def norm_sq(self, basis: EigenBasis, t) -> np.ndarray:
        return (self.evaluate(basis, t) ** 2).sum(axis=-1)


@dataclass(frozen=True)
class LowpassForcing:
    """h~: projection of h onto the modes with eigenvalue <= cutoff (identity when cutoff is None)."""

    source: Forcing
    cutoff: float | None = None

    def mask(self, basis: EigenBasis) -> np.ndarray:
        if self.cutoff is None:
            return np.ones(basis.mode_count)
        return (basis.eigenvalues <= self.cutoff).astype(float)

    def evaluate(self, basis: EigenBasis, t) -> np.ndarray:
        return self.source.evaluate(basis, t) * self.mask(basis)

    def tail_power(self, basis: EigenBasis, times: np.ndarray) -> float:
        tail = self.source.evaluate(basis, times) * (1.0 - self.mask(basis))
        return float((tail**2).sum(axis=-1).max(initial=0.0))


def forcing_lb2_norm(
    forcing: Forcing,
    basis: EigenBasis,
    window: tuple[float, float] = (-50.0, 50.0),
    dt: float = 0.01,
) -> float:
    """sup_t int_t^{t+1} ||h(s)||^2 ds over the sampling window."""
    steps = int(round((window[1] - window[0]) / dt))
    times = window[0] + dt * np.arange(steps + 1)
    running = cumulative_trapezoid(forcing.norm_sq(basis, times), dx=dt, initial=0.0)
    shift = int(round(1.0 / dt))
    if shift >= running.size:
        return float(running[-1])
    return float((running[shift:] - running[:-shift]).max())


@dataclass(frozen=True)
class ModelSpec:
    basis: EigenBasis
    epsilon: EpsilonProfile
    coefficient: NonlocalCoefficient
    nonlinearity: NonlinearitySplit
    delay: DelayOperator
    forcing: Forcing
    skip_validation: bool = False

    @property
    def lambda1(self) -> float:
        return self.basis.lambda1


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    witness: str | None = None


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[HypothesisCheck, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> list[HypothesisCheck]:
        return [check for check in self.checks if not check.passed]

    def as_dict(self) -> dict[str, bool]:
        return {check.name: check.passed for check in self.checks}


def absorbing_threshold(L: float, lambda1: float) -> float:
    return 1.5 + L / 2.0 + 1.0 / (4.0 * lambda1)


def _check(name: str, ok: bool, witness: str) -> HypothesisCheck:
    return HypothesisCheck(name=name, passed=bool(ok), witness=None if ok else witness)


def _epsilon_checks(profile: EpsilonProfile) -> list[HypothesisCheck]:
    checks: list[HypothesisCheck] = []
    limits = [epsilon_eval(profile, t)[0] for t in EPSILON_LIMIT_TIMES]
    low = min(limits)
    checks.append(
        _check(
            "epsilon_limit",
            profile.alpha > 0.5 and low > profile.alpha,
            f"min eps over t={EPSILON_LIMIT_TIMES} is {low:.6g}, alpha={profile.alpha}",
        )
    )
    eps, deps = epsilon_eval(profile, EPSILON_SAMPLE_TIMES)
    total = np.abs(eps) + np.abs(deps)
    worst = int(np.argmax(total))
    checks.append(
        _check(
            "epsilon_bound",
            total[worst] <= profile.L,
            f"|eps|+|eps'| = {total[worst]:.6g} > L={profile.L} at t={EPSILON_SAMPLE_TIMES[worst]:.4g}",
        )
    )
    diffs = np.diff(eps)
    if profile.kind == "decreasing":
        bad = np.flatnonzero(diffs > 0.0)
        ok = bad.size == 0 and np.any(diffs < 0.0)
    elif profile.kind == "increasing":
        bad = np.flatnonzero(diffs < 0.0)
        ok = bad.size == 0 and np.any(diffs > 0.0)
    else:
        bad = np.flatnonzero(diffs != 0.0)
        ok = bad.size == 0
    where = f"t={EPSILON_SAMPLE_TIMES[bad[0]]:.4g}" if bad.size else "no strict change"
    checks.append(_check("epsilon_monotone", ok, f"{profile.kind} profile violated at {where}"))
    return checks


def _coefficient_checks(spec: ModelSpec) -> list[HypothesisCheck]:
    coef = spec.coefficient
    L = spec.epsilon.L
    lower = coef.m + L if spec.epsilon.kind == "increasing" else coef.m
    ok = coef.m > 0 and coef.a_lo <= coef.a_hi and lower <= coef.a_lo + 1e-12 and coef.a_hi <= coef.M
    return [
        _check(
            "coefficient_range",
            ok,
            f"need {lower:.6g} <= a_lo={coef.a_lo} <= a_hi={coef.a_hi} <= M={coef.M} (m={coef.m})",
        )
    ]


def _nonlinearity_checks(spec: ModelSpec) -> list[HypothesisCheck]:
    split = spec.nonlinearity
    n = spec.basis.n
    C = split.growth_constant
    u = NONLINEARITY_SAMPLES
    au = np.abs(u)
    f0 = f0_pointwise(split, u)
    f1 = f1_pointwise(split, u)
    checks: list[HypothesisCheck] = []

    f_zero = float(f_pointwise(split, np.array(0.0)))
    checks.append(_check("f_zero", f_zero == 0.0, f"f(0) = {f_zero}"))

    total = f_pointwise(split, u)
    checks.append(
        _check("f_split", np.allclose(total, f0 + f1, rtol=0, atol=1e-12 * (1 + au**3).max()), "f != f0 + f1")
    )

    bound = C * (au + au ** (split.p + 1)) * (1 + 1e-12)
    bad = np.flatnonzero(np.abs(f0) > bound)
    checks.append(_check("f0_growth", bad.size == 0, f"|f0(u)| too large at u={u[bad[0]] if bad.size else 0:.4g}"))

    bad = np.flatnonzero(f0 * u > 0.0)
    checks.append(_check("f0_dissipative", bad.size == 0, f"f0(u)u > 0 at u={u[bad[0]] if bad.size else 0:.4g}"))

    bound = C * (1 + au**split.gamma) * (1 + 1e-12)
    bad = np.flatnonzero(np.abs(f1) > bound)
    checks.append(_check("f1_growth", bad.size == 0, f"|f1(u)| too large at u={u[bad[0]] if bad.size else 0:.4g}"))

    ratios = [float(f_pointwise(split, np.array(s)) / s) for s in LIMSUP_SAMPLES]
    ratios += [float(f_pointwise(split, np.array(-s)) / -s) for s in LIMSUP_SAMPLES]
    checks.append(
        _check(
            "f_limsup",
            max(ratios) < spec.lambda1,
            f"f(u)/u reaches {max(ratios):.6g} >= lambda1={spec.lambda1}",
        )
    )

    step = 1e-6 * np.maximum(1.0, au)
    deriv = (f_pointwise(split, u + step) - f_pointwise(split, u - step)) / (2 * step)
    bound = C * (1 + au**split.p) * (1 + 1e-6)
    bad = np.flatnonzero(np.abs(deriv) > bound)
    checks.append(
        _check("f_derivative_growth", bad.size == 0, f"|f'(u)| too large at u={u[bad[0]] if bad.size else 0:.4g}")
    )

    if n >= 3:
        gamma_max = (n + 2) / (n - 2)
        checks.append(
            _check(
                "gamma_range",
                0 < split.gamma < gamma_max,
                f"gamma={split.gamma} outside (0, {gamma_max:.6g})",
            )
        )
    return checks


def _delay_checks(spec: ModelSpec) -> list[HypothesisCheck]:
    op = spec.delay
    m = spec.basis.mode_count
    samples = 11
    dt = op.k / (samples - 1)
    zero = g_eval(op, np.zeros((samples, m)), dt)
    checks = [_check("delay_zero", np.all(zero == 0.0), "g(t, 0) != 0")]

    rng = np.random.default_rng(LIPSCHITZ_SEED)
    worst = 0.0
    for _ in range(LIPSCHITZ_PAIRS):
        first = rng.standard_normal((samples, m))
        second = rng.standard_normal((samples, m))
        diff = g_eval(op, first, dt) - g_eval(op, second, dt)
        sup = float(((first - second) ** 2).sum(axis=1).max())
        worst = max(worst, float((diff**2).sum()) / sup)
    checks.append(
        _check(
            "delay_lipschitz",
            worst <= op.lipschitz + 1e-12,
            f"empirical ratio {worst:.6g} > C_g={op.lipschitz:.6g}",
        )
    )
    return checks


def validate_model(spec: ModelSpec) -> ValidationReport:
    from .bounds import beta_feasible, default_delta

    checks: list[HypothesisCheck] = []
    checks.extend(_epsilon_checks(spec.epsilon))
    checks.extend(_coefficient_checks(spec))
    checks.extend(_nonlinearity_checks(spec))
    checks.extend(_delay_checks(spec))

    lb2 = forcing_lb2_norm(spec.forcing, spec.basis)
    checks.append(_check("forcing_lb2", math.isfinite(lb2), f"translation-bounded norm {lb2}"))

    threshold = absorbing_threshold(spec.epsilon.L, spec.lambda1)
    checks.append(
        _check(
            "absorbing_threshold",
            spec.coefficient.m > threshold,
            f"m={spec.coefficient.m} <= 3/2 + L/2 + 1/(4 lambda1) = {threshold:.6g}",
        )
    )

    choice = beta_feasible(spec, default_delta(spec))
    checks.append(
        _check(
            "beta_feasible",
            choice.feasible,
            f"beta1 <= 0 on (0, {choice.beta_max:.6g}] (delta_bar={choice.delta_bar:.6g})",
        )
    )

    report = ValidationReport(checks=tuple(checks))
    for failure in report.failures:
        log.info("hypothesis %s failed: %s", failure.name, failure.witness)
    return report
