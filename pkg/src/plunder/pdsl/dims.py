"""Physical dimensions over the base quantities length and time."""
from __future__ import annotations

import re
from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class Dimension:
    """Integer exponents of length (m) and time (s)."""

    length: int = 0
    time: int = 0

    def __mul__(self, other: Dimension) -> Dimension:
        return Dimension(self.length + other.length, self.time + other.time)

    def __truediv__(self, other: Dimension) -> Dimension:
        return Dimension(self.length - other.length, self.time - other.time)

    def inverse(self) -> Dimension:
        return Dimension(-self.length, -self.time)

    @property
    def is_dimensionless(self) -> bool:
        return self.length == 0 and self.time == 0

    def __str__(self) -> str:
        if self.is_dimensionless:
            return "1"
        num, den = [], []
        for sym, exp in (("m", self.length), ("s", self.time)):
            if exp == 0:
                continue
            part = sym if abs(exp) == 1 else f"{sym}^{abs(exp)}"
            (num if exp > 0 else den).append(part)
        text = "*".join(num) if num else "1"
        if den:
            text += "/" + "/".join(den)
        return text


DIMENSIONLESS = Dimension()
LENGTH = Dimension(1, 0)
TIME = Dimension(0, 1)
VELOCITY = Dimension(1, -1)
ACCELERATION = Dimension(1, -2)

_UNIT_TOKEN = re.compile(r"([ms])(?:\^(-?\d+))?")


def parse_unit(text: str) -> Dimension:
    """Parse unit strings such as ``m``, ``m/s^2``, ``s`` or ``1``."""
    text = text.strip()
    if text in ("", "1"):
        return DIMENSIONLESS
    dim = DIMENSIONLESS
    parts = text.split("/")
    for i, part in enumerate(parts):
        sign = 1 if i == 0 else -1
        for factor in part.split("*"):
            factor = factor.strip()
            if factor == "1" and i == 0:
                continue
            m = _UNIT_TOKEN.fullmatch(factor)
            if m is None:
                raise ValueError(f"bad unit {text!r}")
            exp = sign * int(m.group(2) or 1)
            base = LENGTH if m.group(1) == "m" else TIME
            dim = dim * Dimension(base.length * exp, base.time * exp)
    return dim


class DimensionError(ValueError):
    """Raised when a feature combines incompatible physical dimensions."""

    def __init__(self, message: str, subtree=None, operands=()):
        super().__init__(message)
        self.subtree = subtree
        self.operands = tuple(operands)
