"""Forward-mode automatic differentiation over a small, fixed parameter set.

A :class:`Dual` carries a value and a tangent vector with one slot per
seeded parameter.  Propagating tangents forward costs O(P) per primitive
with O(1) memory, which is the right trade for long rollouts over at most
a handful of decision parameters (no tape over the horizon).
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass
from typing import Callable, Sequence, Union

_add = operator.add
_sub = operator.sub
_neg = operator.neg

Scalar = Union[float, "Dual"]

# Shared zero-tangent tuples, keyed by length; coercion of plain numbers
# into an active computation reuses these.
_ZEROS: dict[int, tuple[float, ...]] = {}


def _zeros(n: int) -> tuple[float, ...]:
    z = _ZEROS.get(n)
    if z is None:
        z = (0.0,) * n
        _ZEROS[n] = z
    return z


class TangentMismatchError(ValueError):
    """Two duals from computations with different parameter counts were mixed."""


class NonFiniteEvaluationError(ArithmeticError):
    """A function evaluation produced NaN/Inf where a finite value was required."""


class Dual:
    """Value plus tangent vector; one tangent slot per seeded parameter."""

    __slots__ = ("value", "tangents")

    def __init__(self, value: float, tangents: tuple[float, ...]):
        self.value = value
        self.tangents = tangents

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.tangents!r})"

    # -- arithmetic ----------------------------------------------------

    def _match(self, other: "Dual") -> None:
        if len(self.tangents) != len(other.tangents):
            raise TangentMismatchError(
                f"tangent lengths differ: {len(self.tangents)} vs {len(other.tangents)}"
            )

    def __add__(self, other):
        if isinstance(other, Dual):
            self._match(other)
            return Dual(self.value + other.value,
                        tuple(map(_add, self.tangents, other.tangents)))
        return Dual(self.value + other, self.tangents)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            self._match(other)
            return Dual(self.value - other.value,
                        tuple(map(_sub, self.tangents, other.tangents)))
        return Dual(self.value - other, self.tangents)

    def __rsub__(self, other):
        return Dual(other - self.value, tuple(map(_neg, self.tangents)))

    def __mul__(self, other):
        if isinstance(other, Dual):
            self._match(other)
            sv, ov = self.value, other.value
            return Dual(sv * ov,
                        tuple(a * ov + sv * b for a, b in zip(self.tangents, other.tangents)))
        return Dual(self.value * other, tuple(map(other.__mul__, self.tangents))
                    if type(other) is float else tuple(a * other for a in self.tangents))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            self._match(other)
            ov = other.value
            if ov == 0.0:
                raise ZeroDivisionError("dual division by zero value")
            inv = 1.0 / ov
            sv = self.value * inv
            return Dual(sv, tuple((a - sv * b) * inv
                                  for a, b in zip(self.tangents, other.tangents)))
        if other == 0.0:
            raise ZeroDivisionError("dual division by zero value")
        inv = 1.0 / other
        return Dual(self.value * inv, tuple(a * inv for a in self.tangents))

    def __rtruediv__(self, other):
        if self.value == 0.0:
            raise ZeroDivisionError("dual division by zero value")
        inv = 1.0 / self.value
        ov = other * inv
        return Dual(ov, tuple(-ov * inv * a for a in self.tangents))

    def __neg__(self):
        return Dual(-self.value, tuple(map(_neg, self.tangents)))

    def __pos__(self):
        return self

    def __abs__(self):
        # abs'(0) := 0 (midpoint subgradient), keeping velocity-loss
        # gradients defined when the tracked speed is hit exactly.
        if self.value > 0.0:
            return self
        if self.value < 0.0:
            return Dual(-self.value, tuple(-a for a in self.tangents))
        return Dual(0.0, _zeros(len(self.tangents)))

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            return NotImplemented
        v = self.value
        val = v ** exponent
        if exponent == 2:
            d = 2.0 * v
        elif exponent == 1:
            d = 1.0
        else:
            d = exponent * v ** (exponent - 1)
        return Dual(val, tuple(d * a for a in self.tangents))


def constant(value: float, n: int) -> Dual:
    """A dual with zero tangents, for mixing plain numbers into seeded math."""
    return Dual(float(value), _zeros(n))


def value_of(x: Scalar) -> float:
    """The primal value of a float or Dual."""
    return x.value if isinstance(x, Dual) else float(x)


def tangents_of(x: Scalar, n: int) -> tuple[float, ...]:
    return x.tangents if isinstance(x, Dual) else _zeros(n)


# -- seeding -----------------------------------------------------------


@dataclass(frozen=True)
class ParamSeed:
    """Ordered parameter names and their values; the differentiation basis."""

    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) == 0:
            raise ValueError("empty parameter list")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate parameter names in {self.names}")
        if len(self.names) != len(self.values):
            raise ValueError("names and values length mismatch")

    @classmethod
    def from_dict(cls, params: dict[str, float]) -> "ParamSeed":
        return cls(tuple(params.keys()), tuple(float(v) for v in params.values()))


def seed(params: ParamSeed) -> list[Dual]:
    """Duals for each parameter, the i-th carrying unit tangent e_i."""
    n = len(params.names)
    out = []
    for i, v in enumerate(params.values):
        tang = [0.0] * n
        tang[i] = 1.0
        out.append(Dual(float(v), tuple(tang)))
    return out


# -- elementary functions ----------------------------------------------
#
# Each dispatches on Dual vs plain number so simulation code is written
# once and runs seeded or unseeded.


def sin(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        c = math.cos(x.value)
        return Dual(math.sin(x.value), tuple(c * a for a in x.tangents))
    return math.sin(x)


def cos(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        s = -math.sin(x.value)
        return Dual(math.cos(x.value), tuple(s * a for a in x.tangents))
    return math.cos(x)


def tan(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        t = math.tan(x.value)
        d = 1.0 + t * t
        return Dual(t, tuple(d * a for a in x.tangents))
    return math.tan(x)


def atan(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        d = 1.0 / (1.0 + x.value * x.value)
        return Dual(math.atan(x.value), tuple(d * a for a in x.tangents))
    return math.atan(x)


def atan2(y: Scalar, x: Scalar) -> Scalar:
    yd, xd = isinstance(y, Dual), isinstance(x, Dual)
    if not (yd or xd):
        return math.atan2(y, x)
    n = len(y.tangents) if yd else len(x.tangents)
    yv = y.value if yd else float(y)
    xv = x.value if xd else float(x)
    r2 = xv * xv + yv * yv
    if r2 == 0.0:
        raise ZeroDivisionError("atan2 derivative undefined at the origin")
    gy, gx = xv / r2, -yv / r2
    yt = tangents_of(y, n)
    xt = tangents_of(x, n)
    return Dual(math.atan2(yv, xv), tuple(gy * a + gx * b for a, b in zip(yt, xt)))


def sqrt(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        if x.value < 0.0:
            raise ValueError(f"sqrt of negative value {x.value}")
        if x.value == 0.0:
            if any(a != 0.0 for a in x.tangents):
                raise ValueError("sqrt derivative is infinite at 0")
            return Dual(0.0, x.tangents)
        s = math.sqrt(x.value)
        d = 0.5 / s
        return Dual(s, tuple(d * a for a in x.tangents))
    if x < 0.0:
        raise ValueError(f"sqrt of negative value {x}")
    return math.sqrt(x)


def exp(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        e = math.exp(x.value)
        return Dual(e, tuple(e * a for a in x.tangents))
    return math.exp(x)


def log(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        if x.value <= 0.0:
            raise ValueError(f"log of non-positive value {x.value}")
        d = 1.0 / x.value
        return Dual(math.log(x.value), tuple(d * a for a in x.tangents))
    if x <= 0.0:
        raise ValueError(f"log of non-positive value {x}")
    return math.log(x)


def absolute(x: Scalar) -> Scalar:
    if isinstance(x, Dual):
        return abs(x)
    return abs(x)


def hypot(x: Scalar, y: Scalar) -> Scalar:
    return sqrt(x * x + y * y)


def clip(x: Scalar, lo: float, hi: float) -> Scalar:
    """Clamp to [lo, hi].

    Derivative is 0 strictly outside and 1 inside; at a boundary value the
    derivative is 1 (continuous toward the interior), so identification
    gradients stay alive when a command grazes the limit.
    """
    if isinstance(x, Dual):
        if x.value < lo:
            return Dual(lo, _zeros(len(x.tangents)))
        if x.value > hi:
            return Dual(hi, _zeros(len(x.tangents)))
        return x
    return lo if x < lo else hi if x > hi else x


def minimum(a: Scalar, b: Scalar) -> Scalar:
    """Value-ordered minimum; ties keep the first argument (gradient follows it)."""
    return b if value_of(b) < value_of(a) else a


# -- gradient checking --------------------------------------------------


@dataclass(frozen=True)
class GradientCheckReport:
    """Analytic vs central-difference gradients of a scalar function."""

    analytic: tuple[float, ...]
    numeric: tuple[float, ...]
    max_rel_err: float

    def to_dict(self) -> dict:
        return {
            "analytic": list(self.analytic),
            "numeric": list(self.numeric),
            "max_rel_err": self.max_rel_err,
        }


def check_gradient(
    f: Callable[[Sequence[Scalar]], Scalar],
    at: Sequence[float],
    h: float = 1e-5,
    names: Sequence[str] | None = None,
) -> GradientCheckReport:
    """Compare the forward-mode gradient of ``f`` against central differences.

    ``f`` takes a vector of scalars (plain or dual) and returns a scalar.
    Relative error is taken over components with |analytic| > 1e-12.
    Non-finite evaluations raise, naming the offending probe.
    """
    at = [float(v) for v in at]
    n = len(at)
    if names is None:
        names = [f"p[{i}]" for i in range(n)]

    duals = seed(ParamSeed(tuple(names), tuple(at)))
    out = f(duals)
    if isinstance(out, Dual):
        analytic = out.tangents
        out_value = out.value
    else:
        analytic = _zeros(n)
        out_value = float(out)
    if not math.isfinite(out_value) or any(not math.isfinite(a) for a in analytic):
        raise NonFiniteEvaluationError(f"non-finite seeded evaluation at {at}")

    def probe(point: list[float], label: str) -> float:
        y = value_of(f(point))
        if not math.isfinite(y):
            raise NonFiniteEvaluationError(f"non-finite evaluation at probe {label}")
        return y

    numeric = []
    for i in range(n):
        up = list(at)
        dn = list(at)
        up[i] += h
        dn[i] -= h
        fu = probe(up, f"{names[i]} + h")
        fd = probe(dn, f"{names[i]} - h")
        numeric.append((fu - fd) / (2.0 * h))

    max_rel = 0.0
    for a, g in zip(analytic, numeric):
        if abs(a) > 1e-12:
            max_rel = max(max_rel, abs(a - g) / abs(a))
    return GradientCheckReport(tuple(analytic), tuple(numeric), max_rel)
