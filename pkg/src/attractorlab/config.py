from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Callable

from .history import ConstantHistory, HistoryGenerator, ModalHistory, RandomHistory
from .model import (
    DelayOperator,
    EpsilonProfile,
    Forcing,
    ModelSpec,
    NonlinearitySplit,
    NonlocalCoefficient,
    critical_exponent,
)
from .spectral import EigenBasis, build_basis

log = logging.getLogger("attractorlab.config")

DIVISOR_TOL = 1e-9
DT_MANTISSAS = (5.0, 2.5, 2.0, 1.0)


class ConfigError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    n: int = 3
    kmax: int = 2
    grid: int | None = None
    dt: float = 1e-3
    tau: float = 0.0
    t_end: float = 10.0
    seed: int = 20240601

    epsilon_kind: str = "decreasing"
    epsilon_base: float = 1.0
    epsilon_amplitude: float = 0.5
    epsilon_alpha: float = 0.75
    epsilon_L: float = 1.625

    a_lo: float = 2.5
    a_hi: float = 3.0
    a_m: float = 2.5
    a_M: float = 3.0

    f_kappa: float = 0.5
    f_gamma: float = 1.0
    f_p: float = 2.0

    delay_kind: str = "discrete"
    delay_b: float = 0.1
    delay_k: float = 0.5

    forcing_amplitude: float = 1.0
    forcing_omega: float = 2.0 * math.pi
    forcing_offset: float = 0.25

    sigma: float | None = None
    skip_validation: bool = False

    phi_kind: str = "random"
    phi_scale: float = 1.0
    phi_decay: float = 2.0

    delta: float | None = None
    transient: float | None = None
    workers: int = 1
    t_star: float = 0.0

    notes: tuple[str, ...] = ()

    @property
    def transient_window(self) -> float:
        return 5.0 * self.delay_k if self.transient is None else self.transient


INCREASING_DEFAULTS: dict[str, float] = {
    "epsilon_L": 1.0625,
    "epsilon_amplitude": 0.25,
    "a_m": 2.6,
    "a_lo": 3.6625,
    "a_hi": 4.0,
    "a_M": 4.0,
}


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def _inner(raw: str) -> Any:
        if raw.strip().lower() in ("", "none", "auto"):
            return None
        return parse(raw)

    return _inner


def _choice(*allowed: str) -> Callable[[str], str]:
    def _inner(raw: str) -> str:
        value = raw.strip().lower()
        if value not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}, got {raw!r}")
        return value

    return _inner


def _float(raw: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError(f"not a finite number: {raw!r}")
    return value


# Documented keys: config name -> (RunConfig field, parser).
KEYS: dict[str, tuple[str, Callable[[str], Any]]] = {
    "n": ("n", int),
    "kmax": ("kmax", int),
    "grid": ("grid", _optional(int)),
    "dt": ("dt", _float),
    "tau": ("tau", _float),
    "t_end": ("t_end", _float),
    "seed": ("seed", int),
    "epsilon.kind": ("epsilon_kind", _choice("decreasing", "increasing", "constant")),
    "epsilon.base": ("epsilon_base", _float),
    "epsilon.amplitude": ("epsilon_amplitude", _float),
    "epsilon.alpha": ("epsilon_alpha", _float),
    "epsilon.L": ("epsilon_L", _float),
    "a.lo": ("a_lo", _float),
    "a.hi": ("a_hi", _float),
    "a.m": ("a_m", _float),
    "a.M": ("a_M", _float),
    "f.kappa": ("f_kappa", _float),
    "f.gamma": ("f_gamma", _float),
    "f.p": ("f_p", _float),
    "delay.kind": ("delay_kind", _choice("discrete", "distributed")),
    "delay.b": ("delay_b", _float),
    "delay.k": ("delay_k", _float),
    "forcing.amplitude": ("forcing_amplitude", _float),
    "forcing.omega": ("forcing_omega", _float),
    "forcing.offset": ("forcing_offset", _float),
    "sigma": ("sigma", _optional(_float)),
    "skip_validation": ("skip_validation", _parse_bool),
    "phi.kind": ("phi_kind", _choice("random", "zero", "modal")),
    "phi.scale": ("phi_scale", _float),
    "phi.decay": ("phi_decay", _float),
    "delta": ("delta", _optional(_float)),
    "transient": ("transient", _optional(_float)),
    "workers": ("workers", int),
    "t_star": ("t_star", _float),
}

FIELD_TO_KEY = {name: key for key, (name, _) in KEYS.items()}


def adjust_dt(dt: float, k: float) -> float:
    """Largest step of the form {1, 2, 2.5, 5} * 10^e not above dt that divides k."""
    if dt <= 0.0 or k <= 0.0:
        raise ConfigError(f"dt={dt} and delay.k={k} must be positive")
    ratio = k / dt
    if abs(ratio - round(ratio)) <= DIVISOR_TOL * max(1.0, ratio) and round(ratio) >= 1:
        return dt
    exponent = math.floor(math.log10(dt))
    for e in range(exponent, exponent - 12, -1):
        for mantissa in DT_MANTISSAS:
            candidate = mantissa * 10.0**e
            if candidate > dt * (1 + 1e-12):
                continue
            steps = k / candidate
            if abs(steps - round(steps)) <= DIVISOR_TOL * max(1.0, steps):
                return candidate
    raise ConfigError(f"no step of the form {{1, 2, 2.5, 5}}*10^e divides delay.k={k} below dt={dt}")


def _validate(cfg: RunConfig, lines: dict[str, int]) -> None:
    def fail(message: str, *keys: str) -> None:
        where = max((lines.get(key, 0) for key in keys), default=0)
        prefix = f"line {where}: " if where else ""
        raise ConfigError(f"{prefix}{message}")

    if cfg.n < 1:
        fail(f"n={cfg.n} must be positive", "n")
    if cfg.kmax < 1:
        fail(f"kmax={cfg.kmax} must be positive", "kmax")
    if cfg.grid is not None and cfg.grid < cfg.kmax:
        fail(f"grid={cfg.grid} below kmax={cfg.kmax}", "grid", "kmax")
    if cfg.a_m <= 0.0:
        fail(f"a.m={cfg.a_m} must be positive", "a.m")
    if cfg.a_lo > cfg.a_hi:
        fail(f"a.lo={cfg.a_lo} exceeds a.hi={cfg.a_hi}", "a.lo", "a.hi")
    if cfg.a_hi > cfg.a_M:
        fail(f"a.hi={cfg.a_hi} exceeds a.M={cfg.a_M}", "a.hi", "a.M")
    if cfg.delay_k <= 0.0:
        fail(f"delay.k={cfg.delay_k} must be positive", "delay.k")
    if cfg.delay_b < 0.0:
        fail(f"delay.b={cfg.delay_b} must be nonnegative", "delay.b")
    if cfg.dt <= 0.0:
        fail(f"dt={cfg.dt} must be positive", "dt")
    if cfg.t_end <= cfg.tau:
        fail(f"t_end={cfg.t_end} must exceed tau={cfg.tau}", "t_end", "tau")
    if cfg.workers < 1:
        fail(f"workers={cfg.workers} must be at least 1", "workers")


def _resolve_dt(cfg: RunConfig) -> RunConfig:
    dt = adjust_dt(cfg.dt, cfg.delay_k)
    if dt == cfg.dt:
        return cfg
    note = f"dt adjusted from {cfg.dt:g} to {dt:g} so that it divides delay.k={cfg.delay_k:g}"
    log.warning(note)
    return replace(cfg, dt=dt, notes=cfg.notes + (note,))


def config_from_values(values: dict[str, Any], lines: dict[str, int] | None = None) -> RunConfig:
    """Build a RunConfig from field values; scenario defaults fill what is unset."""
    lines = lines or {}
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    merged = dict(values)
    if merged.get("epsilon_kind") == "increasing":
        for name, default in INCREASING_DEFAULTS.items():
            merged.setdefault(name, default)
    cfg = replace(RunConfig(), **merged)
    _validate(cfg, lines)
    return _resolve_dt(cfg)


def parse_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return config_from_values({})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw_line.strip()!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {number}: unknown key {key!r}")
        name, parse = KEYS[key]
        try:
            values[name] = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"line {number}: cannot parse {key} = {raw!r}: {exc}") from exc
        lines[key] = number
    log.debug("config %s: %s explicit keys", path, len(values))
    return config_from_values(values, lines)


def with_override(cfg: RunConfig, key: str, value: float) -> RunConfig:
    """Copy of cfg with one documented key replaced, dt re-resolved."""
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}")
    name, _ = KEYS[key]
    current = getattr(cfg, name)
    if isinstance(current, int) and not isinstance(current, bool):
        value = int(value)
    updated = replace(cfg, **{name: value})
    _validate(updated, {})
    return _resolve_dt(updated)


def build_config_basis(cfg: RunConfig) -> EigenBasis:
    return build_basis(cfg.n, cfg.kmax, cfg.grid)


def model_from_config(cfg: RunConfig, basis: EigenBasis | None = None) -> ModelSpec:
    basis = basis or build_config_basis(cfg)
    return ModelSpec(
        basis=basis,
        epsilon=EpsilonProfile(
            kind=cfg.epsilon_kind,
            base=cfg.epsilon_base,
            amplitude=cfg.epsilon_amplitude,
            alpha=cfg.epsilon_alpha,
            L=cfg.epsilon_L,
        ),
        coefficient=NonlocalCoefficient(
            a_lo=cfg.a_lo,
            a_hi=cfg.a_hi,
            m=cfg.a_m,
            M=cfg.a_M,
            weight=basis.unit(0),
        ),
        nonlinearity=NonlinearitySplit(
            kappa=cfg.f_kappa,
            gamma=cfg.f_gamma,
            p=critical_exponent(cfg.n, fallback=cfg.f_p),
        ),
        delay=DelayOperator(kind=cfg.delay_kind, b=cfg.delay_b, k=cfg.delay_k),
        forcing=Forcing(
            amplitude=cfg.forcing_amplitude,
            omega=cfg.forcing_omega,
            offset=cfg.forcing_offset,
        ),
        skip_validation=cfg.skip_validation,
    )


def phi_from_config(cfg: RunConfig, basis: EigenBasis, stream: int = 0) -> HistoryGenerator:
    if cfg.phi_kind == "zero":
        return ConstantHistory(basis.zeros())
    if cfg.phi_kind == "modal":
        return ModalHistory(basis, (cfg.phi_scale,))
    return RandomHistory(basis, seed=cfg.seed, stream=stream, decay=cfg.phi_decay, scale=cfg.phi_scale)


def describe(cfg: RunConfig) -> dict[str, Any]:
    """Documented keys with their resolved values, in documented order."""
    return {key: getattr(cfg, name) for key, (name, _) in KEYS.items()}
