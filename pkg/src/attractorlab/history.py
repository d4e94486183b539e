"""Delay-window storage: the solution over [t - k, t] at step resolution."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .model import EpsilonProfile, epsilon_eval
from .spectral import EigenBasis, SpectralField, coefficient_norms, random_field

log = logging.getLogger("attractorlab.history")

DIVISOR_TOL = 1e-9


class HistoryRangeError(ValueError):
    pass


class HistoryGenerator(Protocol):
    def __call__(self, theta: float) -> SpectralField:
        ...


@dataclass(frozen=True)
class ConstantHistory:
    field: SpectralField

    def __call__(self, theta: float) -> SpectralField:
        return self.field


@dataclass(frozen=True)
class ModalHistory:
    basis: EigenBasis
    coeffs: tuple[float, ...]

    def __call__(self, theta: float) -> SpectralField:
        padded = np.zeros(self.basis.mode_count)
        padded[: len(self.coeffs)] = self.coeffs
        return SpectralField(self.basis, padded)


@dataclass(frozen=True)
class RandomHistory:
    """Seeded random field with coefficients scaled by lambda^(-decay), constant in theta."""

    basis: EigenBasis
    seed: int
    stream: int = 0
    decay: float = 2.0
    scale: float = 1.0

    def __call__(self, theta: float) -> SpectralField:
        rng = np.random.default_rng([self.seed, self.stream])
        return random_field(self.basis, rng, decay=self.decay, scale=self.scale)


@dataclass(frozen=True)
class PerturbedHistory:
    base: HistoryGenerator
    direction: SpectralField
    size: float

    def __call__(self, theta: float) -> SpectralField:
        return self.base(theta) + self.size * self.direction


@dataclass(frozen=True)
class WindowNorms:
    l2_sq: float
    grad_sq: float
    ht_sq: float
    h1t_sq: float
    eps_abs: float
    frac_sq: float | None = None
    frac1_sq: float | None = None

    @property
    def frac_ht_sq(self) -> float | None:
        if self.frac_sq is None or self.frac1_sq is None:
            return None
        return self.frac_sq + self.eps_abs * self.frac1_sq


def delay_steps(k: float, dt: float) -> int:
    ratio = k / dt
    steps = int(round(ratio))
    if steps < 1 or abs(ratio - steps) > DIVISOR_TOL * max(1.0, ratio):
        raise HistoryRangeError(f"delay k={k} is not an integer multiple of dt={dt}")
    return steps


class DelayHistory:
    """Ring of (step, coefficients) pairs at uniform spacing dt.

    Times are ``origin + step*dt`` so spacing never drifts. Capacity keeps
    ``k/dt + 2`` entries, i.e. a retained span of ``k + dt``.
    """

    def __init__(self, basis: EigenBasis, origin: float, dt: float, k: float) -> None:
        self.basis = basis
        self.origin = float(origin)
        self.dt = float(dt)
        self.k = float(k)
        self.steps = delay_steps(k, dt)
        self._entries: deque[tuple[int, np.ndarray]] = deque(maxlen=self.steps + 2)

    def __len__(self) -> int:
        return len(self._entries)

    def time_of(self, step: int) -> float:
        return self.origin + step * self.dt

    @property
    def oldest(self) -> float:
        return self.time_of(self._entries[0][0])

    @property
    def newest(self) -> float:
        return self.time_of(self._entries[-1][0])

    @property
    def span(self) -> float:
        if not self._entries:
            return 0.0
        return (self._entries[-1][0] - self._entries[0][0]) * self.dt

    def times(self) -> np.ndarray:
        return np.array([self.time_of(step) for step, _ in self._entries])

    def coefficients(self) -> np.ndarray:
        return np.stack([coeffs for _, coeffs in self._entries])

    def push(self, step: int, coeffs: np.ndarray) -> None:
        if self._entries and step != self._entries[-1][0] + 1:
            raise HistoryRangeError(
                f"non-consecutive push: step {step} after {self._entries[-1][0]}"
            )
        self._entries.append((step, np.array(coeffs, dtype=float)))

    def _locate(self, s: float) -> tuple[int, float]:
        if not self._entries:
            raise HistoryRangeError("empty history")
        first = self._entries[0][0]
        position = (s - self.time_of(first)) / self.dt
        last = len(self._entries) - 1
        tol = 1e-9
        if position < -tol or position > last + tol:
            raise HistoryRangeError(
                f"time {s:.12g} outside stored span [{self.oldest:.12g}, {self.newest:.12g}]"
            )
        position = min(max(position, 0.0), float(last))
        index = min(int(math.floor(position)), last)
        frac = position - index
        if abs(frac) < tol:
            frac = 0.0
        elif abs(1.0 - frac) < tol:
            index, frac = index + 1, 0.0
        return index, frac

    def sample_coeffs(self, s: float) -> np.ndarray:
        index, frac = self._locate(s)
        left = self._entries[index][1]
        if frac == 0.0:
            return left.copy()
        right = self._entries[index + 1][1]
        return (1.0 - frac) * left + frac * right

    def window_coeffs(self, s: float, count: int) -> np.ndarray:
        """Samples at s - k + j*dt for j = 0..count-1, linearly interpolated."""
        index, frac = self._locate(s - self.k)
        stack = self.coefficients()
        if index + count - 1 + (1 if frac else 0) > len(stack) - 1:
            raise HistoryRangeError(f"window starting at {s - self.k:.12g} exceeds stored span")
        left = stack[index : index + count]
        if frac == 0.0:
            return left.copy()
        right = stack[index + 1 : index + count + 1]
        return (1.0 - frac) * left + frac * right

    def window_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Stored (times, coefficients) with times in [t - k, t]."""
        end_index, frac = self._locate(t)
        if frac != 0.0:
            raise HistoryRangeError(f"time {t:.12g} is not a stored timestamp")
        start_index = end_index - self.steps
        if start_index < 0:
            raise HistoryRangeError(
                f"span {self.span:.6g} insufficient for window [{t - self.k:.6g}, {t:.6g}]"
            )
        stack = self.coefficients()[start_index : end_index + 1]
        times = self.times()[start_index : end_index + 1]
        return times, stack


def init_from_phi(
    phi: Callable[[float], SpectralField],
    tau: float,
    dt: float,
    basis: EigenBasis,
    k: float,
) -> DelayHistory:
    history = DelayHistory(basis, origin=tau, dt=dt, k=k)
    for step in range(-history.steps, 1):
        theta = step * dt
        value = phi(theta)
        if not value.basis.same_as(basis):
            raise HistoryRangeError("history generator returned a field from another basis")
        history.push(step, value.coeffs)
    return history


def sample(history: DelayHistory, s: float) -> SpectralField:
    return SpectralField(history.basis, history.sample_coeffs(s))


def window_eps_abs(profile: EpsilonProfile, times: np.ndarray) -> float:
    eps, _ = epsilon_eval(profile, np.asarray(times, dtype=float))
    return float(np.max(np.abs(eps)))


def window_sup_norms(
    history: DelayHistory,
    t: float,
    profile: EpsilonProfile,
    sigma: float | None = None,
) -> WindowNorms:
    times, stack = history.window_at(t)
    eps_abs = window_eps_abs(profile, times)
    raw = coefficient_norms(history.basis.eigenvalues, stack, 0.0, sigma)
    l2 = float(raw["l2_sq"].max())
    grad = float(raw["h1_sq"].max())
    lap = float(raw["laplace_sq"].max())
    return WindowNorms(
        l2_sq=l2,
        grad_sq=grad,
        ht_sq=l2 + eps_abs * grad,
        h1t_sq=grad + eps_abs * lap,
        eps_abs=eps_abs,
        frac_sq=None if sigma is None else float(raw["frac_sq"].max()),
        frac1_sq=None if sigma is None else float(raw["frac1_sq"].max()),
    )


def history_difference(first: DelayHistory, second: DelayHistory) -> DelayHistory:
    if (
        not first.basis.same_as(second.basis)
        or first.dt != second.dt
        or first.k != second.k
        or len(first) != len(second)
        or not np.allclose(first.times(), second.times(), rtol=0, atol=1e-9)
    ):
        raise HistoryRangeError("histories are not aligned")
    out = DelayHistory(first.basis, first.origin, first.dt, first.k)
    for (step, a), (_, b) in zip(first._entries, second._entries):
        out._entries.append((step, a - b))
    return out
