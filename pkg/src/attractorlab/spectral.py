"""Dirichlet-Laplacian eigenbasis on the box (0, pi)^n.

Fields are stored as dense coefficient vectors over the modes
``k in {1..kmax}^n`` in lexicographic order. Grid values live on the
interior sine nodes ``x_m = m*pi/(G+1)``, ``m = 1..G`` per axis, where the
type-I DST is exactly orthogonal.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
from scipy.fft import dstn

log = logging.getLogger("attractorlab.spectral")

SINE_AMPLITUDE = math.sqrt(2.0 / math.pi)


class BasisError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EigenBasis:
    n: int
    kmax: int
    grid_size: int
    modes: np.ndarray = dc_field(repr=False)
    eigenvalues: np.ndarray = dc_field(repr=False)

    @property
    def mode_count(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues.min())

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.grid_size,) * self.n

    @property
    def block_shape(self) -> tuple[int, ...]:
        return (self.kmax,) * self.n

    @property
    def weight(self) -> float:
        """Quadrature weight of one collocation node."""
        return (math.pi / (self.grid_size + 1)) ** self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.arange(1, self.grid_size + 1) * math.pi / (self.grid_size + 1)

    def same_as(self, other: EigenBasis) -> bool:
        return self is other or (
            self.n == other.n
            and self.kmax == other.kmax
            and self.grid_size == other.grid_size
        )

    def index_of(self, multi_index: tuple[int, ...]) -> int:
        if len(multi_index) != self.n or not all(1 <= k <= self.kmax for k in multi_index):
            raise BasisError(f"mode {multi_index} not in basis (n={self.n}, kmax={self.kmax})")
        return int(np.ravel_multi_index(tuple(k - 1 for k in multi_index), self.block_shape))

    def zeros(self) -> SpectralField:
        return SpectralField(self, np.zeros(self.mode_count))

    def unit(self, index: int, value: float = 1.0) -> SpectralField:
        coeffs = np.zeros(self.mode_count)
        coeffs[index] = value
        return SpectralField(self, coeffs)

    def field(self, coeffs) -> SpectralField:
        return SpectralField(self, np.asarray(coeffs, dtype=float))


@dataclass(frozen=True, eq=False)
class SpectralField:
    basis: EigenBasis
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.shape != (self.basis.mode_count,):
            raise BasisError(
                f"expected {self.basis.mode_count} coefficients, got shape {coeffs.shape}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise BasisError("non-finite coefficients in field")
        object.__setattr__(self, "coeffs", coeffs)

    def _check(self, other: SpectralField) -> None:
        if not self.basis.same_as(other.basis):
            raise BasisError("fields live in different bases")

    def __add__(self, other: SpectralField) -> SpectralField:
        self._check(other)
        return SpectralField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: SpectralField) -> SpectralField:
        self._check(other)
        return SpectralField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> SpectralField:
        return SpectralField(self.basis, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> SpectralField:
        return SpectralField(self.basis, -self.coeffs)


@dataclass(frozen=True)
class NormBundle:
    l2_sq: float
    h1_sq: float
    laplace_sq: float
    frac_sq: float
    frac1_sq: float
    ht_sq: float
    h1t_sq: float


def build_basis(n: int, kmax: int, grid_size: int | None = None) -> EigenBasis:
    if n < 1:
        raise BasisError(f"dimension must be positive, got {n}")
    if kmax < 1:
        raise BasisError(f"kmax must be positive, got {kmax}")
    if grid_size is None:
        grid_size = 4 * kmax
    if grid_size < kmax:
        raise BasisError(f"grid size {grid_size} < kmax {kmax}: projection would alias")
    if grid_size < 4 * kmax:
        log.warning(
            "grid size %s below 4*kmax=%s; cubic terms may alias", grid_size, 4 * kmax
        )
    modes = np.array(list(itertools.product(range(1, kmax + 1), repeat=n)), dtype=int)
    eigenvalues = (modes**2).sum(axis=1).astype(float)
    return EigenBasis(n=n, kmax=kmax, grid_size=grid_size, modes=modes, eigenvalues=eigenvalues)


def apply_fractional(field: SpectralField, s: float) -> SpectralField:
    return SpectralField(field.basis, field.coeffs * field.basis.eigenvalues**s)


def coefficient_norms(
    eigenvalues: np.ndarray,
    coeffs: np.ndarray,
    eps_abs: float | np.ndarray = 0.0,
    sigma: float | None = None,
) -> dict[str, np.ndarray]:
    """Squared norms of (a stack of) coefficient vectors along the last axis."""
    c2 = np.asarray(coeffs) ** 2
    l2 = c2.sum(axis=-1)
    h1 = (c2 * eigenvalues).sum(axis=-1)
    lap = (c2 * eigenvalues**2).sum(axis=-1)
    out = {
        "l2_sq": l2,
        "h1_sq": h1,
        "laplace_sq": lap,
        "ht_sq": l2 + eps_abs * h1,
        "h1t_sq": h1 + eps_abs * lap,
    }
    if sigma is not None:
        out["frac_sq"] = (c2 * eigenvalues**sigma).sum(axis=-1)
        out["frac1_sq"] = (c2 * eigenvalues ** (1.0 + sigma)).sum(axis=-1)
    return out


def norms(field: SpectralField, eps_abs: float = 0.0, sigma: float = 0.5) -> NormBundle:
    raw = coefficient_norms(field.basis.eigenvalues, field.coeffs, eps_abs, sigma)
    return NormBundle(**{key: float(value) for key, value in raw.items()})


def coeffs_to_grid(basis: EigenBasis, coeffs: np.ndarray) -> np.ndarray:
    padded = np.zeros(basis.grid_shape)
    padded[(slice(0, basis.kmax),) * basis.n] = np.asarray(coeffs).reshape(basis.block_shape)
    return dstn(padded, type=1) * (SINE_AMPLITUDE / 2.0) ** basis.n


def grid_to_coeffs(basis: EigenBasis, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != basis.grid_shape:
        raise BasisError(f"grid shape {values.shape} does not match basis grid {basis.grid_shape}")
    scale = (SINE_AMPLITUDE * math.pi / (basis.grid_size + 1) / 2.0) ** basis.n
    full = dstn(values, type=1) * scale
    return full[(slice(0, basis.kmax),) * basis.n].reshape(-1)


def to_grid(field: SpectralField) -> np.ndarray:
    return coeffs_to_grid(field.basis, field.coeffs)


def from_grid(values: np.ndarray, basis: EigenBasis) -> SpectralField:
    return SpectralField(basis, grid_to_coeffs(basis, values))


def inner_product(u: SpectralField, v: SpectralField) -> float:
    u._check(v)
    return float(np.dot(u.coeffs, v.coeffs))


def random_field(
    basis: EigenBasis,
    rng: np.random.Generator,
    decay: float = 2.0,
    scale: float = 1.0,
) -> SpectralField:
    coeffs = rng.standard_normal(basis.mode_count) * basis.eigenvalues ** (-decay)
    return SpectralField(basis, scale * coeffs)
