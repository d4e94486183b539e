"""Galerkin time integration of the full problem and its split systems.

In the eigenbasis every mode obeys

    (1 + eps(t) lambda_j) c_j' + a(l(u)) lambda_j c_j = F_j

where F is the projection of the system's source term. Split systems share
a(l(u)) and the delayed argument with the full solution u, so they are always
integrated in lockstep with it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .history import DelayHistory, delay_steps, init_from_phi
from .model import (
    EpsilonProfile,
    LowpassForcing,
    ModelSpec,
    NonFiniteStateError,
    a_value,
    epsilon_eval,
    f_pointwise,
    g_eval,
    nonlinear_coeffs,
)
from .spectral import EigenBasis, SINE_AMPLITUDE, SpectralField, coefficient_norms

log = logging.getLogger("attractorlab.solver")

ENERGY_GUARD = 1e12
ORACLE_DT = 1e-5
ORACLE_MAX_MODES = 64

COMPLETED = "completed"
ABORTED_BLOWUP = "aborted_blowup"


class SystemKind(str, Enum):
    FULL = "full"
    V1_SPLIT = "v1_split"
    V2_SPLIT = "v2_split"
    U1_REG = "u1_reg"
    U2_REG = "u2_reg"


# Fields each kind is integrated alongside.
REQUIRED_PARTNERS: dict[SystemKind, tuple[SystemKind, ...]] = {
    SystemKind.FULL: (),
    SystemKind.V1_SPLIT: (SystemKind.FULL,),
    SystemKind.V2_SPLIT: (SystemKind.FULL, SystemKind.V1_SPLIT),
    SystemKind.U1_REG: (SystemKind.FULL,),
    SystemKind.U2_REG: (SystemKind.FULL,),
}

# Kinds whose initial segment is zero rather than phi.
ZERO_START = (SystemKind.V2_SPLIT, SystemKind.U2_REG)


class BlowUpError(RuntimeError):
    def __init__(self, message: str, step: int | None = None, time: float | None = None) -> None:
        super().__init__(message)
        self.step = step
        self.time = time


@dataclass
class Trajectory:
    kind: SystemKind
    basis: EigenBasis
    epsilon: EpsilonProfile
    tau: float
    t_end: float
    dt: float
    delay_steps: int
    times: np.ndarray
    coeffs: np.ndarray
    prehistory: np.ndarray
    a_values: np.ndarray
    power: np.ndarray
    history: DelayHistory
    status: str = COMPLETED
    abort_step: int | None = None
    message: str | None = None

    @property
    def completed(self) -> bool:
        return self.status == COMPLETED

    def field_at(self, index: int) -> SpectralField:
        return SpectralField(self.basis, self.coeffs[index])

    def final_field(self) -> SpectralField:
        return self.field_at(-1)

    def epsilon_series(self) -> tuple[np.ndarray, np.ndarray]:
        return epsilon_eval(self.epsilon, self.times)

    def norm_series(self, sigma: float | None = None) -> dict[str, np.ndarray]:
        """Pointwise-in-time norms, H_t weighted by |eps(t)|."""
        eps, _ = self.epsilon_series()
        return coefficient_norms(self.basis.eigenvalues, self.coeffs, np.abs(eps), sigma)

    def window_norms(self, sigma: float | None = None) -> dict[str, np.ndarray]:
        """Sup over [t - k, t] of every norm, one value per snapshot."""
        extended = np.vstack([self.prehistory, self.coeffs])
        steps = self.prehistory.shape[0]
        ext_times = self.tau + self.dt * np.arange(-steps, self.coeffs.shape[0])
        eps, _ = epsilon_eval(self.epsilon, ext_times)
        raw = coefficient_norms(self.basis.eigenvalues, extended, 0.0, sigma)
        width = steps + 1

        def sup(values: np.ndarray) -> np.ndarray:
            return sliding_window_view(values, width).max(axis=-1)

        eps_abs = sup(np.abs(eps))
        out = {
            "l2_sq": sup(raw["l2_sq"]),
            "grad_sq": sup(raw["h1_sq"]),
            "laplace_sq": sup(raw["laplace_sq"]),
            "eps_abs": eps_abs,
        }
        out["ht_sq"] = out["l2_sq"] + eps_abs * out["grad_sq"]
        out["h1t_sq"] = out["grad_sq"] + eps_abs * out["laplace_sq"]
        if sigma is not None:
            out["frac_sq"] = sup(raw["frac_sq"])
            out["frac1_sq"] = sup(raw["frac1_sq"])
            out["frac_ht_sq"] = out["frac_sq"] + eps_abs * out["frac1_sq"]
        return out

    def index_of(self, t: float) -> int:
        index = int(round((t - self.tau) / self.dt))
        if index < 0 or index >= self.times.shape[0] or abs(self.times[index] - t) > 1e-9:
            raise ValueError(f"time {t} is not a snapshot of this trajectory")
        return index


def require_completed(traj: Trajectory) -> Trajectory:
    if not traj.completed:
        raise BlowUpError(
            traj.message or "integration aborted",
            step=traj.abort_step,
            time=None if traj.abort_step is None else traj.tau + traj.abort_step * traj.dt,
        )
    return traj


def joint_kinds(kinds: Sequence[SystemKind]) -> tuple[SystemKind, ...]:
    wanted = {SystemKind(kind) for kind in kinds}
    for kind in list(wanted):
        wanted.update(REQUIRED_PARTNERS[kind])
    wanted.add(SystemKind.FULL)
    return tuple(kind for kind in SystemKind if kind in wanted)


def _delay_window(spec: ModelSpec, history: DelayHistory, s: float, u: np.ndarray) -> np.ndarray:
    if spec.delay.kind == "discrete":
        return history.sample_coeffs(s - spec.delay.k)[np.newaxis, :]
    past = history.window_coeffs(s, history.steps)
    return np.vstack([past, u[np.newaxis, :]])


def _evaluate(
    kinds: Sequence[SystemKind],
    t: float,
    state: Mapping[SystemKind, np.ndarray],
    history: DelayHistory,
    spec: ModelSpec,
    htilde: LowpassForcing | None,
) -> tuple[dict[SystemKind, np.ndarray], dict[SystemKind, np.ndarray], float]:
    basis = spec.basis
    lam = basis.eigenvalues
    u = state[SystemKind.FULL]
    eps, _ = epsilon_eval(spec.epsilon, t)
    denom = 1.0 + eps * lam
    a = a_value(spec.coefficient, float(np.dot(spec.coefficient.weight.coeffs, u)))

    f0_u, f1_u = nonlinear_coeffs(spec.nonlinearity, basis, u)
    f_u = f0_u + f1_u
    g = g_eval(spec.delay, _delay_window(spec, history, t, u), history.dt)
    h = spec.forcing.evaluate(basis, t)
    h_tilde = None
    if SystemKind.U1_REG in kinds or SystemKind.U2_REG in kinds:
        h_tilde = (htilde or LowpassForcing(spec.forcing)).evaluate(basis, t)
    f0_v1 = None
    if SystemKind.V1_SPLIT in kinds:
        f0_v1, _ = nonlinear_coeffs(spec.nonlinearity, basis, state[SystemKind.V1_SPLIT])

    sources: dict[SystemKind, np.ndarray] = {}
    for kind in kinds:
        if kind is SystemKind.FULL:
            sources[kind] = f_u + g + h
        elif kind is SystemKind.V1_SPLIT:
            sources[kind] = f0_v1
        elif kind is SystemKind.V2_SPLIT:
            sources[kind] = f_u - f0_v1 + g + h
        elif kind is SystemKind.U1_REG:
            sources[kind] = h - h_tilde
        else:
            sources[kind] = f_u + g + h_tilde
    derivs = {kind: (-a * lam * state[kind] + sources[kind]) / denom for kind in kinds}
    return derivs, sources, a


def joint_rhs(
    kinds: Sequence[SystemKind],
    t: float,
    state: Mapping[SystemKind, np.ndarray],
    history: DelayHistory,
    spec: ModelSpec,
    htilde: LowpassForcing | None = None,
) -> dict[SystemKind, np.ndarray]:
    """Time derivatives of every kind in ``joint_kinds(kinds)``.

    ``history`` is the delay window of the full solution u.
    """
    required = joint_kinds(kinds)
    missing = [kind.value for kind in required if kind not in state]
    if missing:
        raise ValueError(f"missing state for {', '.join(missing)}")
    try:
        derivs, _, _ = _evaluate(required, t, state, history, spec, htilde)
    except NonFiniteStateError as exc:
        raise BlowUpError(str(exc), time=t) from exc
    for kind, value in derivs.items():
        if not np.all(np.isfinite(value)):
            raise BlowUpError(f"non-finite right-hand side for {kind.value}", time=t)
    return derivs


def rhs(
    kind: SystemKind,
    t: float,
    state: Mapping[SystemKind, np.ndarray],
    history: DelayHistory,
    spec: ModelSpec,
    htilde: LowpassForcing | None = None,
) -> np.ndarray:
    kind = SystemKind(kind)
    return joint_rhs([kind], t, state, history, spec, htilde)[kind]


def _step_count(tau: float, t_end: float, dt: float) -> int:
    if t_end <= tau:
        raise ValueError(f"t_end={t_end} must exceed tau={tau}")
    ratio = (t_end - tau) / dt
    steps = int(round(ratio))
    if abs(ratio - steps) > 1e-6 * max(1.0, ratio):
        raise ValueError(f"horizon {t_end - tau} is not a multiple of dt={dt}")
    return steps


def _zero_history(basis: EigenBasis) -> Callable[[float], SpectralField]:
    zero = basis.zeros()
    return lambda theta: zero


def _guard(state: Mapping[SystemKind, np.ndarray], lam: np.ndarray, eps_abs: float) -> None:
    for kind, coeffs in state.items():
        if not np.all(np.isfinite(coeffs)):
            raise BlowUpError(f"non-finite coefficients in {kind.value}")
        c2 = coeffs * coeffs
        energy = float(c2.sum() + eps_abs * (c2 * lam).sum())
        if energy > ENERGY_GUARD:
            raise BlowUpError(f"H_t energy {energy:.3e} of {kind.value} exceeds guard {ENERGY_GUARD:.0e}")


def integrate_joint(
    kinds: Sequence[SystemKind],
    spec: ModelSpec,
    phi: Callable[[float], SpectralField],
    tau: float,
    t_end: float,
    dt: float,
    htilde: LowpassForcing | None = None,
) -> dict[SystemKind, Trajectory]:
    """Classical RK4 over all requested kinds with shared stages."""
    kinds = joint_kinds(kinds)
    basis = spec.basis
    lam = basis.eigenvalues
    k = spec.delay.k
    steps = _step_count(tau, t_end, dt)
    lag = delay_steps(k, dt)

    histories: dict[SystemKind, DelayHistory] = {}
    for kind in kinds:
        start = _zero_history(basis) if kind in ZERO_START else phi
        histories[kind] = init_from_phi(start, tau, dt, basis, k)
    prehistory = {kind: histories[kind].coefficients()[:-1].copy() for kind in kinds}
    state = {kind: histories[kind].coefficients()[-1].copy() for kind in kinds}
    u_history = histories[SystemKind.FULL]

    times = tau + dt * np.arange(steps + 1)
    coeffs = {kind: np.empty((steps + 1, basis.mode_count)) for kind in kinds}
    power = {kind: np.empty(steps + 1) for kind in kinds}
    a_values = np.empty(steps + 1)

    def evaluate(t: float, y: Mapping[SystemKind, np.ndarray]):
        return _evaluate(kinds, t, y, u_history, spec, htilde)

    log.info(
        "integrating %s from tau=%s to t_end=%s (dt=%s, %s steps)",
        ",".join(kind.value for kind in kinds),
        tau,
        t_end,
        dt,
        steps,
    )
    status, abort_step, message = COMPLETED, None, None
    done = 0
    report_every = max(1, steps // 10)
    try:
        for i in range(steps + 1):
            t = times[i]
            eps, _ = epsilon_eval(spec.epsilon, t)
            _guard(state, lam, abs(eps))
            k1, sources, a = evaluate(t, state)
            for kind in kinds:
                coeffs[kind][i] = state[kind]
                power[kind][i] = float(np.dot(sources[kind], state[kind]))
            a_values[i] = a
            done = i + 1
            if i == steps:
                break
            half = t + 0.5 * dt
            y2 = {kind: state[kind] + 0.5 * dt * k1[kind] for kind in kinds}
            k2, _, _ = evaluate(half, y2)
            y3 = {kind: state[kind] + 0.5 * dt * k2[kind] for kind in kinds}
            k3, _, _ = evaluate(half, y3)
            y4 = {kind: state[kind] + dt * k3[kind] for kind in kinds}
            k4, _, _ = evaluate(t + dt, y4)
            state = {
                kind: state[kind] + (dt / 6.0) * (k1[kind] + 2.0 * k2[kind] + 2.0 * k3[kind] + k4[kind])
                for kind in kinds
            }
            for kind in kinds:
                histories[kind].push(i + 1, state[kind])
            if (i + 1) % report_every == 0:
                log.debug("step %s/%s t=%.6g a=%.6g", i + 1, steps, t + dt, a)
    except (BlowUpError, NonFiniteStateError) as exc:
        status, abort_step, message = ABORTED_BLOWUP, done, str(exc)
        log.warning("integration aborted at step %s (t=%.6g): %s", done, tau + done * dt, exc)

    out: dict[SystemKind, Trajectory] = {}
    for kind in kinds:
        out[kind] = Trajectory(
            kind=kind,
            basis=basis,
            epsilon=spec.epsilon,
            tau=tau,
            t_end=t_end,
            dt=dt,
            delay_steps=lag,
            times=times[:done].copy(),
            coeffs=coeffs[kind][:done].copy(),
            prehistory=prehistory[kind],
            a_values=a_values[:done].copy(),
            power=power[kind][:done].copy(),
            history=histories[kind],
            status=status,
            abort_step=abort_step,
            message=message,
        )
    log.info("integration %s after %s snapshots", status, done)
    return out


def integrate(
    kind: SystemKind,
    spec: ModelSpec,
    phi: Callable[[float], SpectralField],
    tau: float,
    t_end: float,
    dt: float = 1e-3,
    htilde: LowpassForcing | None = None,
) -> Trajectory:
    kind = SystemKind(kind)
    return integrate_joint([kind], spec, phi, tau, t_end, dt, htilde)[kind]


class OracleSystem:
    """Reference right-hand side built from dense eigenfunction tables.

    Shares no transform or history code with the main integrator: synthesis
    and projection are explicit matrix products against the sampled
    eigenfunctions, and l(u) is a grid quadrature.
    """

    def __init__(self, spec: ModelSpec) -> None:
        basis = spec.basis
        if basis.mode_count > ORACLE_MAX_MODES:
            raise ValueError(f"oracle limited to {ORACLE_MAX_MODES} modes, got {basis.mode_count}")
        self.spec = spec
        G = basis.grid_size
        nodes = np.arange(1, G + 1) * math.pi / (G + 1)
        table = SINE_AMPLITUDE * np.sin(np.outer(nodes, np.arange(1, basis.kmax + 1)))
        dense = np.ones((1, basis.mode_count))
        for axis in range(basis.n):
            columns = table[:, basis.modes[:, axis] - 1]
            dense = (dense[:, np.newaxis, :] * columns[np.newaxis, :, :]).reshape(-1, basis.mode_count)
        self.table = dense
        self.weight = (math.pi / (G + 1)) ** basis.n
        self.lam = np.array([float(sum(int(k) ** 2 for k in mode)) for mode in basis.modes])
        self.weight_grid = dense @ spec.coefficient.weight.coeffs

    def project(self, values: np.ndarray) -> np.ndarray:
        return self.weight * (self.table.T @ values)

    def source(self, t: float, coeffs: np.ndarray, window: np.ndarray, dt: float) -> tuple[np.ndarray, float]:
        spec = self.spec
        grid = self.table @ coeffs
        s = self.weight * float(np.dot(self.weight_grid, grid))
        a = spec.coefficient.a_lo + (spec.coefficient.a_hi - spec.coefficient.a_lo) * s * s / (1.0 + s * s)
        f = self.project(f_pointwise(spec.nonlinearity, grid))
        op = spec.delay
        if op.kind == "discrete":
            g = op.b * window[0]
        else:
            weights = np.full(window.shape[0], dt)
            weights[0] = weights[-1] = 0.5 * dt
            g = (op.b / op.k) * (weights @ window)
        h = np.zeros(coeffs.shape[0])
        h[0] = spec.forcing.amplitude * math.cos(spec.forcing.omega * t)
        h[-1] += spec.forcing.offset
        return f + g + h, a

    def rhs(self, t: float, coeffs: np.ndarray, window: np.ndarray, dt: float) -> np.ndarray:
        src, a = self.source(t, coeffs, window, dt)
        eps = self.spec.epsilon
        if eps.kind == "constant":
            e = eps.base
        else:
            sign = 1.0 if eps.kind == "decreasing" else -1.0
            e = eps.base + sign * eps.amplitude / (1.0 + math.exp(t)) if t < 700 else eps.base
        return (-a * self.lam * coeffs + src) / (1.0 + e * self.lam)


def oracle_rhs(spec: ModelSpec, t: float, coeffs: np.ndarray, window: np.ndarray, dt: float) -> np.ndarray:
    return OracleSystem(spec).rhs(t, np.asarray(coeffs, dtype=float), np.asarray(window, dtype=float), dt)


def oracle_integrate(
    spec: ModelSpec,
    phi: Callable[[float], SpectralField],
    tau: float,
    t_end: float,
    dt: float = ORACLE_DT,
) -> Trajectory:
    """Independent RK4 reference for the full system; test use only."""
    system = OracleSystem(spec)
    basis = spec.basis
    steps = _step_count(tau, t_end, dt)
    lag = int(round(spec.delay.k / dt))
    if lag < 1 or abs(spec.delay.k / dt - lag) > 1e-9 * lag:
        raise ValueError(f"oracle dt={dt} must divide k={spec.delay.k}")
    past = [phi(-j * dt).coeffs.copy() for j in range(lag, 0, -1)]
    past.append(phi(0.0).coeffs.copy())
    prehistory = np.array(past[:-1])

    def window(i: int, frac: float, current: np.ndarray) -> np.ndarray:
        # entry index of time tau + i*dt is i + lag
        def at(position: float) -> np.ndarray:
            left = int(math.floor(position + 1e-12))
            w = position - left
            if w < 1e-12:
                return past[left]
            return (1.0 - w) * past[left] + w * past[left + 1]

        if spec.delay.kind == "discrete":
            return at(i + frac)[np.newaxis, :]
        rows = [at(i + frac + j) for j in range(lag)]
        rows.append(current)
        return np.array(rows)

    times = tau + dt * np.arange(steps + 1)
    coeffs = np.empty((steps + 1, basis.mode_count))
    power = np.empty(steps + 1)
    a_values = np.empty(steps + 1)
    state = past[-1].copy()
    status, abort_step, message = COMPLETED, None, None
    done = 0
    try:
        for i in range(steps + 1):
            t = float(times[i])
            if not np.all(np.isfinite(state)) or float(state @ state) > ENERGY_GUARD:
                raise BlowUpError("oracle state diverged", step=i, time=t)
            src, a = system.source(t, state, window(i, 0.0, state), dt)
            coeffs[i] = state
            power[i] = float(src @ state)
            a_values[i] = a
            done = i + 1
            if i == steps:
                break
            k1 = system.rhs(t, state, window(i, 0.0, state), dt)
            y = state + 0.5 * dt * k1
            k2 = system.rhs(t + 0.5 * dt, y, window(i, 0.5, y), dt)
            y = state + 0.5 * dt * k2
            k3 = system.rhs(t + 0.5 * dt, y, window(i, 0.5, y), dt)
            y = state + dt * k3
            k4 = system.rhs(t + dt, y, window(i, 1.0, y), dt)
            state = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            past.append(state)
    except BlowUpError as exc:
        status, abort_step, message = ABORTED_BLOWUP, done, str(exc)

    history = DelayHistory(basis, origin=tau, dt=dt, k=spec.delay.k)
    start = max(0, len(past) - (lag + 2))
    for position in range(start, len(past)):
        history.push(position - lag, past[position])
    return Trajectory(
        kind=SystemKind.FULL,
        basis=basis,
        epsilon=spec.epsilon,
        tau=tau,
        t_end=t_end,
        dt=dt,
        delay_steps=lag,
        times=times[:done].copy(),
        coeffs=coeffs[:done].copy(),
        prehistory=prehistory,
        a_values=a_values[:done].copy(),
        power=power[:done].copy(),
        history=history,
        status=status,
        abort_step=abort_step,
        message=message,
    )
