"""Static system parameters, named presets and per-segment bit allocation."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np


class ConfigError(ValueError):
    """Raised for inconsistent or infeasible configurations."""


@dataclass(frozen=True)
class SystemConfig:
    """All static parameters of a polar-coded tensor random-access link.

    The instance is immutable; use :meth:`replace` to derive variants.
    """

    T_l: Tuple[int, ...]
    B_p_l: Tuple[int, ...]
    M: int = 50
    T: int = 3200
    B: int = 96
    B_c: int = 107
    B_p: int = 126
    n_list: int = 8
    eps_a: float = 1e-2
    eps_iter: float = 1e-6
    c_K: float = 1.1
    a0: float = 1e-6
    b0: float = 1e-6
    a_lambda: float = 1e-6
    b_lambda: float = 1e-6
    a_gamma: float = 1e-6
    b_gamma: float = 1e-6
    max_vb_iters: int = 200
    max_fb_rounds: int = 10
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "T_l", tuple(int(t) for t in self.T_l))
        object.__setattr__(self, "B_p_l", tuple(int(b) for b in self.B_p_l))
        self.validate()

    @property
    def L(self) -> int:
        return len(self.T_l)

    @property
    def shape(self) -> Tuple[int, ...]:
        """Shape of the received tensor, ``(T_1, ..., T_L, M)``."""
        return self.T_l + (self.M,)

    def validate(self) -> None:
        if self.L < 1:
            raise ConfigError("at least one segment is required")
        if any(t < 2 for t in self.T_l):
            raise ConfigError(f"segment lengths must be >= 2, got {self.T_l}")
        if math.prod(self.T_l) != self.T:
            raise ConfigError(f"prod(T_l)={math.prod(self.T_l)} differs from T={self.T}")
        if len(self.B_p_l) != self.L:
            raise ConfigError("B_p_l must have one entry per segment")
        if sum(self.B_p_l) != self.B_p:
            raise ConfigError(f"sum(B_p_l)={sum(self.B_p_l)} differs from B_p={self.B_p}")
        if not self.B < self.B_c < self.B_p:
            raise ConfigError("need B < B_c < B_p")
        if self.B_c - self.B != 11:
            raise ConfigError("the CRC adds exactly 11 bits: need B_c = B + 11")
        if self.B_p > 128:
            raise ConfigError("B_p above the 128-bit mother code is not supported")
        if self.M < 1:
            raise ConfigError("M must be positive")
        if self.n_list < 1:
            raise ConfigError("n_list must be >= 1")
        if self.eps_a <= 0 or self.eps_iter <= 0:
            raise ConfigError("thresholds must be positive")
        if self.c_K <= 1:
            raise ConfigError("c_K must exceed 1")
        for name in ("a0", "b0", "a_lambda", "b_lambda", "a_gamma", "b_gamma"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_vb_iters < 1 or self.max_fb_rounds < 1:
            raise ConfigError("iteration caps must be >= 1")
        # raises on infeasible per-segment payloads
        integerize_allocation(self)

    def replace(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["T_l"] = list(self.T_l)
        d["B_p_l"] = list(self.B_p_l)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        data = dict(data)
        if "preset" in data:
            base = preset(data.pop("preset")).to_dict()
            base.update(data)
            data = base
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        if "T_l" in data and "T" not in data:
            data["T"] = math.prod(data["T_l"])
        if "T_l" in data and "B_p_l" not in data:
            data["B_p_l"] = allocate_bit_budgets(
                data["T_l"], data.get("B_p", 126))[1]
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def custom(cls, T_l: Sequence[int], M: int, **kwargs) -> "SystemConfig":
        """Build a config for arbitrary segment lengths, budgets from the allocation rule."""
        T_l = tuple(int(t) for t in T_l)
        B_p = kwargs.pop("B_p", 126)
        B_p_l = kwargs.pop("B_p_l", None)
        if B_p_l is None:
            B_p_l = allocate_bit_budgets(T_l, B_p)[1]
        return cls(T_l=T_l, B_p_l=tuple(B_p_l), M=M, T=math.prod(T_l), B_p=B_p, **kwargs)


def load_config(path: str, **overrides) -> SystemConfig:
    """Read a JSON key-value file (optionally naming a ``preset`` to start from)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return SystemConfig.from_dict(data)


_PRESETS: Dict[str, Tuple[Tuple[int, ...], Tuple[int, ...]]] = {
    "3ptura": ((20, 16, 10), (55, 44, 27)),
    "4ptura": ((10, 8, 8, 5), (42, 33, 33, 18)),
    "5ptura": ((8, 5, 5, 4, 4), (42, 24, 24, 18, 18)),
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str) -> SystemConfig:
    """Return one of the named configurations ``3ptura``, ``4ptura``, ``5ptura``."""
    key = str(name).lower().replace("-", "")
    if key not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    T_l, B_p_l = _PRESETS[key]
    return SystemConfig(T_l=T_l, B_p_l=B_p_l, name=key)


def allocate_bit_budgets(T_l: Sequence[int], B_p: int) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Split ``B_p`` coded bits over segments so that the payload share grows with ``T_l - 1``.

    Returns the real-valued budgets and their largest-remainder integer rounding,
    which always sums to ``B_p``.
    """
    T_l = np.asarray(T_l, dtype=float)
    L = T_l.size
    log_T = float(np.sum(np.log2(T_l)))
    if B_p <= log_T:
        raise ConfigError(f"B_p={B_p} does not exceed log2(T)={log_T:.4f}")
    if L == 1:
        return np.array([float(B_p)]), (int(B_p),)
    real = np.log2(T_l) + (B_p - log_T) / (T_l.sum() - L) * (T_l - 1)
    floor = np.floor(real).astype(int)
    short = int(B_p - floor.sum())
    # stable on ties: earlier segment wins
    order = np.argsort(-(real - floor), kind="stable")
    floor[order[:short]] += 1
    return real, tuple(int(b) for b in floor)


@dataclass(frozen=True)
class SegmentAllocation:
    """Bit layout of one Grassmannian segment.

    ``pos_bits`` select the reference position among the first ``2**pos_bits``
    coordinates; ``half_bits[g]`` is the PAM load of half-coordinate ``g``
    (real part of the first non-reference entry, then its imaginary part, ...).
    """

    T: int
    pos_bits: int
    half_bits: Tuple[int, ...]

    @property
    def n_bits(self) -> int:
        return self.pos_bits + sum(self.half_bits)

    @property
    def n_positions(self) -> int:
        return 1 << self.pos_bits

    @property
    def offsets(self) -> np.ndarray:
        """Start index of each half's bit group inside the segment bit string."""
        return self.pos_bits + np.concatenate(([0], np.cumsum(self.half_bits)[:-1])).astype(int)


def segment_allocation(T: int, n_bits: int) -> SegmentAllocation:
    pos_bits = int(math.floor(math.log2(T)))
    payload = n_bits - pos_bits
    if payload < 0:
        raise ConfigError(f"segment of length {T} cannot carry {n_bits} bits")
    n_halves = 2 * (T - 1)
    base, extra = divmod(payload, n_halves)
    half_bits = tuple(base + 1 if g < extra else base for g in range(n_halves))
    return SegmentAllocation(T=int(T), pos_bits=pos_bits, half_bits=half_bits)


def integerize_allocation(config: SystemConfig) -> Tuple[SegmentAllocation, ...]:
    return tuple(segment_allocation(T, b) for T, b in zip(config.T_l, config.B_p_l))


def describe(config: SystemConfig) -> str:
    lines = [f"{config.name}:"]
    for key, value in config.to_dict().items():
        if key != "name":
            lines.append(f"  {key} = {value}")
    return "\n".join(lines)


def resolve(name_or_path: Optional[str] = None, config_path: Optional[str] = None, **overrides) -> SystemConfig:
    """Preset by name, or JSON file, with keyword overrides applied on top."""
    if config_path:
        cfg = load_config(config_path)
    else:
        cfg = preset(name_or_path or "3ptura")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        try:
            cfg = cfg.replace(**overrides)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg
