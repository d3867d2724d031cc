"""Forward-mode dual numbers for exact derivatives of branchy geometry code.

A Dual carries a value and a vector of partial derivatives with respect to
a fixed set of seed variables.  Arithmetic propagates partials by the chain
rule; comparisons and branch decisions use the value only, which matches
the piecewise definition of clipping/min/max code away from its kinks.
"""

from __future__ import annotations

import math

import numpy as np


class Dual:
    __slots__ = ("value", "partials")

    def __init__(self, value: float, partials: np.ndarray):
        self.value = float(value)
        self.partials = np.asarray(partials, dtype=np.float64)

    @staticmethod
    def seed(values) -> list["Dual"]:
        """One Dual per value, with identity partials (d value_i / d value_j)."""
        n = len(values)
        eye = np.eye(n)
        return [Dual(v, eye[i]) for i, v in enumerate(values)]

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.partials + other.partials)
        return Dual(self.value + other, self.partials)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.partials - other.partials)
        return Dual(self.value - other, self.partials)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.partials)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.value * other.value,
                self.partials * other.value + other.partials * self.value,
            )
        return Dual(self.value * other, self.partials * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.value
            return Dual(
                self.value * inv,
                (self.partials - self.value * inv * other.partials) * inv,
            )
        return Dual(self.value / other, self.partials / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        return Dual(other * inv, -other * inv * inv * self.partials)

    def __neg__(self):
        return Dual(-self.value, -self.partials)

    def __lt__(self, other):
        return self.value < value_of(other)

    def __le__(self, other):
        return self.value <= value_of(other)

    def __gt__(self, other):
        return self.value > value_of(other)

    def __ge__(self, other):
        return self.value >= value_of(other)

    def __repr__(self):
        return f"Dual({self.value!r}, {self.partials!r})"


def value_of(x) -> float:
    return x.value if isinstance(x, Dual) else float(x)


def dsin(x):
    if isinstance(x, Dual):
        return Dual(math.sin(x.value), math.cos(x.value) * x.partials)
    return math.sin(x)


def dcos(x):
    if isinstance(x, Dual):
        return Dual(math.cos(x.value), -math.sin(x.value) * x.partials)
    return math.cos(x)


def dmin(a, b):
    return a if value_of(a) <= value_of(b) else b


def dmax(a, b):
    return a if value_of(a) >= value_of(b) else b
