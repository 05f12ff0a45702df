"""Dimensioned numbers: measurand spaces, dimensions, unit systems, ratios.

Magnitudes are coordinates with respect to a fixed hidden reference basis of
every base line. A unit system records how its chosen base units scale
against that reference, so conversion and ratios never depend on which
system a number was read in.
"""
from __future__ import annotations

import math
import operator
import re
from dataclasses import dataclass
from typing import Sequence

from .errors import (
    DimensionMismatch,
    DimensionOverflow,
    MeasurandSpaceMismatch,
    ParseError,
    ZeroDenominator,
)

_I64_MAX = 2**63 - 1
_I64_MIN = -(2**63)
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def _check_i64(e: int) -> int:
    if e > _I64_MAX or e < _I64_MIN:
        raise DimensionOverflow(f"dimension exponent {e} overflows 64 bits")
    return e


def _checked(exps: tuple) -> tuple:
    if exps and (max(exps) > _I64_MAX or min(exps) < _I64_MIN):
        for e in exps:
            _check_i64(e)
    return exps


@dataclass(frozen=True)
class MeasurandSpace:
    base_names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.base_names)
        object.__setattr__(self, "base_names", names)
        if not names:
            raise ValueError("a measurand space needs at least one base line")
        if len(set(names)) != len(names):
            raise ValueError(f"base names must be distinct: {names}")
        for n in names:
            if not _NAME.fullmatch(n):
                raise ValueError(f"invalid base name {n!r}")

    @property
    def k(self) -> int:
        return len(self.base_names)

    def dimension(self, exponents: Sequence[int]) -> "Dimension":
        return Dimension(self, tuple(exponents))

    def dimensionless(self) -> "Dimension":
        return Dimension(self, (0,) * self.k)

    def parse(self, src: str) -> "Dimension":
        return parse_dimension(src, self)


@dataclass(frozen=True)
class Dimension:
    space: MeasurandSpace
    exponents: tuple[int, ...]

    def __post_init__(self):
        exps = _checked(tuple(map(int, self.exponents)))
        if len(exps) != self.space.k:
            raise ValueError(
                f"dimension has {len(exps)} exponents, space has {self.space.k} base lines"
            )
        object.__setattr__(self, "exponents", exps)

    def _same_space(self, other: "Dimension"):
        if self.space is not other.space and self.space != other.space:
            raise MeasurandSpaceMismatch(
                f"{self.space.base_names} vs {other.space.base_names}"
            )

    def _derived(self, exps: tuple) -> "Dimension":
        # exponents already integral and of the right length; skip revalidation
        d = object.__new__(Dimension)
        object.__setattr__(d, "space", self.space)
        object.__setattr__(d, "exponents", _checked(exps))
        return d

    def __mul__(self, other: "Dimension") -> "Dimension":
        self._same_space(other)
        return self._derived(tuple(map(operator.add, self.exponents, other.exponents)))

    def __truediv__(self, other: "Dimension") -> "Dimension":
        self._same_space(other)
        return self._derived(tuple(map(operator.sub, self.exponents, other.exponents)))

    def __pow__(self, k: int) -> "Dimension":
        k = int(k)
        return self._derived(tuple(a * k for a in self.exponents))

    @property
    def is_dimensionless(self) -> bool:
        return not any(self.exponents)

    def __str__(self):
        return format_dimension(self)


def format_dimension(d: Dimension) -> str:
    """Render in the dimension grammar, e.g. ``P*V/N`` or ``N^-1``."""
    pos, neg = [], []
    for name, e in zip(d.space.base_names, d.exponents):
        if e > 0:
            pos.append(name if e == 1 else f"{name}^{e}")
        elif e < 0:
            neg.append(name if e == -1 else f"{name}^{-e}")
    if not pos:
        return "*".join(
            f"{n}^{e}" for n, e in zip(d.space.base_names, d.exponents) if e
        )
    return "/".join(["*".join(pos)] + neg)


def parse_dimension(src: str, space: MeasurandSpace) -> Dimension:
    """Parse ``atom (('*'|'/') atom)*`` with ``atom := NAME ('^' SIGNED_INT)?``."""
    exps = [0] * space.k
    index = {n: i for i, n in enumerate(space.base_names)}
    pos = 0
    n = len(src)

    def skip():
        nonlocal pos
        while pos < n and src[pos].isspace():
            pos += 1

    skip()
    if pos == n:
        return space.dimensionless()
    sign = 1
    while True:
        skip()
        m = _NAME.match(src, pos)
        if not m:
            raise ParseError("expected a measurand name", pos, src)
        name = m.group()
        if name not in index:
            raise ParseError(f"unknown measurand {name!r}", pos, src)
        pos = m.end()
        skip()
        e = 1
        if pos < n and src[pos] == "^":
            pos += 1
            skip()
            m = re.compile(r"[+-]?\d+").match(src, pos)
            if not m:
                raise ParseError("malformed exponent", pos, src)
            e = int(m.group())
            pos = m.end()
            skip()
        exps[index[name]] = _check_i64(exps[index[name]] + sign * e)
        if pos == n:
            break
        if src[pos] == "*":
            sign = 1
        elif src[pos] == "/":
            sign = -1
        else:
            raise ParseError(f"unexpected character {src[pos]!r}", pos, src)
        pos += 1
    return Dimension(space, tuple(exps))


@dataclass(frozen=True)
class TypedNumber:
    magnitude: float
    dim: Dimension

    def __post_init__(self):
        m = float(self.magnitude)
        if not math.isfinite(m):
            raise ValueError(f"magnitude must be finite, got {m}")
        object.__setattr__(self, "magnitude", m)

    def __mul__(self, other):
        return typed_mul(self, other)

    def __add__(self, other):
        return typed_add(self, other)

    def __neg__(self):
        return TypedNumber(-self.magnitude, self.dim)

    def __sub__(self, other):
        return typed_add(self, -other)

    def __truediv__(self, other):
        return typed_div(self, other)

    def __pow__(self, k: int):
        return TypedNumber(self.magnitude ** int(k), self.dim ** int(k))

    def __str__(self):
        return f"{self.magnitude!r} [{format_dimension(self.dim)}]"


def typed_mul(a: TypedNumber, b: TypedNumber) -> TypedNumber:
    return TypedNumber(a.magnitude * b.magnitude, a.dim * b.dim)


def typed_div(a: TypedNumber, b: TypedNumber) -> TypedNumber:
    if b.magnitude == 0:
        raise ZeroDenominator("division by a zero typed number")
    return TypedNumber(a.magnitude / b.magnitude, a.dim / b.dim)


def typed_add(a: TypedNumber, b: TypedNumber) -> TypedNumber:
    if a.dim.space != b.dim.space:
        raise MeasurandSpaceMismatch("operands live in different measurand spaces")
    if a.dim != b.dim:
        raise DimensionMismatch(
            f"cannot add [{a.dim}] and [{b.dim}]", expected=a.dim, found=b.dim
        )
    return TypedNumber(a.magnitude + b.magnitude, a.dim)


def dimension_of(a: TypedNumber) -> Dimension:
    return a.dim


def ratio(a: TypedNumber, b: TypedNumber) -> float:
    """The real number l with a = l*b in their common line."""
    if a.dim.space != b.dim.space:
        raise MeasurandSpaceMismatch("operands live in different measurand spaces")
    if a.dim != b.dim:
        raise DimensionMismatch(
            f"ratio of [{a.dim}] and [{b.dim}]", expected=a.dim, found=b.dim
        )
    if b.magnitude == 0:
        raise ZeroDenominator("ratio with a zero denominator")
    return a.magnitude / b.magnitude


@dataclass(frozen=True)
class UnitSystem:
    space: MeasurandSpace
    scales: tuple[float, ...]
    unit_names: tuple[str, ...] = ()
    name: str = ""

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        if len(scales) != self.space.k:
            raise ValueError("one scale per base line is required")
        if any(s == 0 or not math.isfinite(s) for s in scales):
            raise ValueError(f"unit scales must be finite and nonzero: {scales}")
        object.__setattr__(self, "scales", scales)
        names = tuple(self.unit_names) or self.space.base_names
        if len(names) != self.space.k:
            raise ValueError("one unit name per base line is required")
        object.__setattr__(self, "unit_names", names)


def induced_unit_scale(u: UnitSystem, d: Dimension) -> float:
    if d.space != u.space:
        raise MeasurandSpaceMismatch("dimension and unit system use different spaces")
    return math.prod(s**e for s, e in zip(u.scales, d.exponents))


def convert(a: TypedNumber, src: UnitSystem, dst: UnitSystem) -> TypedNumber:
    """Re-express a magnitude read in ``src`` units as one read in ``dst`` units."""
    if not (a.dim.space == src.space == dst.space):
        raise MeasurandSpaceMismatch("conversion across different measurand spaces")
    factor = math.prod(
        (s / t) ** e for s, t, e in zip(src.scales, dst.scales, a.dim.exponents)
    )
    return TypedNumber(a.magnitude * factor, a.dim)
