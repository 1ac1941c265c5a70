"""Lateral lane-keeping control for the single-track plant.

Covers the linear error-dynamics model in (e1, e1_dot, e2, e2_dot), a
differentiable single-input pole placement (Ackermann's formula, composed
entirely of scalar primitives so gains differentiate with respect to the
vehicle parameters), the steering feedback law, and extraction of the
error state relative to a circular reference.

Sign conventions: yaw and steering are positive counterclockwise; e1 is
the lateral offset of the CG from the lane centerline, positive to the
LEFT of the direction of travel (for a counterclockwise circle that is
radially inward).  e2 = psi - psi_des wrapped to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import fwddiff as fd
from .fwddiff import Dual, Scalar, value_of

Matrix = tuple[tuple[Scalar, ...], ...]
Vector = tuple[Scalar, ...]

CONDITION_LIMIT = 1e12


class PlacementError(ValueError):
    """Pole placement could not be carried out (controllability/pole issues)."""


@dataclass(frozen=True)
class LateralModel:
    """Error dynamics x_dot = A x + b1 * steer + b2 * psi_dot_des."""

    A: Matrix
    b1: Vector
    b2: Vector
    vx: float


@dataclass(frozen=True)
class ErrorState:
    """Lateral tracking errors: offset e1 (m), heading error e2 (rad), rates."""

    e1: Scalar = 0.0
    e1_dot: Scalar = 0.0
    e2: Scalar = 0.0
    e2_dot: Scalar = 0.0

    @classmethod
    def zero(cls) -> "ErrorState":
        return cls()

    def as_tuple(self) -> tuple[Scalar, ...]:
        return (self.e1, self.e1_dot, self.e2, self.e2_dot)

    def values(self) -> tuple[float, ...]:
        return tuple(value_of(c) for c in self.as_tuple())


@dataclass(frozen=True)
class GainVector:
    """Full-state feedback gains for steer = -(k1 e1 + k2 e1_dot + k3 e2 + k4 e2_dot)."""

    k1: Scalar
    k2: Scalar
    k3: Scalar
    k4: Scalar

    def as_tuple(self) -> tuple[Scalar, ...]:
        return (self.k1, self.k2, self.k3, self.k4)

    def values(self) -> tuple[float, ...]:
        return tuple(value_of(k) for k in self.as_tuple())


@dataclass(frozen=True)
class ReferenceCircle:
    """Circular centerline; direction is the travel sense along it."""

    cx: float
    cy: float
    radius: float
    direction: str = "ccw"

    def __post_init__(self):
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        if self.direction not in ("ccw", "cw"):
            raise ValueError(f"direction must be 'ccw' or 'cw', got {self.direction!r}")

    def yaw_rate_desired(self, vx: float) -> float:
        rate = vx / self.radius
        return rate if self.direction == "ccw" else -rate


def build_lateral_model(c_af: Scalar, c_ar: Scalar, mass: Scalar, iz: Scalar,
                        lf: Scalar, lr: Scalar, vx: float) -> LateralModel:
    """Assemble the constant-speed error-dynamics matrices.

    c_af, c_ar are dimensional axle cornering stiffnesses in N/rad
    (see :func:`steerid.dynamics.axle_cornering_stiffness`).
    """
    if value_of(vx) <= 0.0:
        raise ValueError("vx must be positive")
    sum_c = 2.0 * c_af + 2.0 * c_ar
    diff_cl = 2.0 * c_af * lf - 2.0 * c_ar * lr
    sum_cl2 = 2.0 * c_af * lf * lf + 2.0 * c_ar * lr * lr

    zero = 0.0
    A = (
        (zero, 1.0, zero, zero),
        (zero, -sum_c / (mass * vx), sum_c / mass, -diff_cl / (mass * vx)),
        (zero, zero, zero, 1.0),
        (zero, -diff_cl / (iz * vx), diff_cl / iz, -sum_cl2 / (iz * vx)),
    )
    b1 = (zero, 2.0 * c_af / mass, zero, 2.0 * c_af * lf / iz)
    b2 = (zero, -vx - diff_cl / (mass * vx), zero, -sum_cl2 / (iz * vx))
    return LateralModel(A=A, b1=b1, b2=b2, vx=float(vx))


# -- pole set validation -------------------------------------------------


def validate_poles(poles: Sequence[complex]) -> tuple[complex, ...]:
    """Check conjugate closure and strict left-half-plane location."""
    ps = tuple(complex(p) for p in poles)
    for p in ps:
        if p.real >= 0.0:
            raise PlacementError(f"pole {p} has non-negative real part")
    remaining = list(ps)
    while remaining:
        p = remaining.pop()
        if abs(p.imag) < 1e-12:
            continue
        conj = p.conjugate()
        for i, q in enumerate(remaining):
            if abs(q - conj) < 1e-9 * max(1.0, abs(p)):
                remaining.pop(i)
                break
        else:
            raise PlacementError(f"pole set not closed under conjugation: {ps}")
    return ps


def characteristic_coefficients(poles: Sequence[complex]) -> list[float]:
    """Real monic polynomial coefficients [1, c_{n-1}, ..., c_0] from its roots."""
    coeffs = [complex(1.0)]
    for p in poles:
        nxt = [complex(0.0)] * (len(coeffs) + 1)
        for i, c in enumerate(coeffs):
            nxt[i] += c
            nxt[i + 1] -= c * p
        coeffs = nxt
    worst = max(abs(c.imag) for c in coeffs)
    if worst > 1e-9 * max(1.0, max(abs(c) for c in coeffs)):
        raise PlacementError("complex characteristic polynomial; poles not conjugate-closed")
    return [c.real for c in coeffs]


# -- small dense linear algebra over the scalar layer ---------------------
#
# n <= 4 throughout; written over fwddiff scalars so placement stays
# differentiable with respect to seeded model parameters.


def _mat_vec(A: Matrix, x: Vector) -> Vector:
    return tuple(sum_product(row, x) for row in A)


def sum_product(row: Sequence[Scalar], x: Sequence[Scalar]) -> Scalar:
    acc = row[0] * x[0]
    for a, b in zip(row[1:], x[1:]):
        acc = acc + a * b
    return acc


def _mat_mul(A: Matrix, B: Matrix) -> Matrix:
    n = len(A)
    cols = list(zip(*B))
    return tuple(tuple(sum_product(A[i], cols[j]) for j in range(n)) for i in range(n))


def _identity(n: int) -> Matrix:
    return tuple(tuple(1.0 if i == j else 0.0 for j in range(n)) for i in range(n))


def _mat_add_scaled(A: Matrix, B: Matrix, s: float) -> Matrix:
    return tuple(tuple(a + s * b for a, b in zip(ra, rb)) for ra, rb in zip(A, B))


def _one_norm(A: Matrix) -> float:
    return max(sum(abs(value_of(A[i][j])) for i in range(len(A)))
               for j in range(len(A)))


def _solve(A: Matrix, rhs: Sequence[Vector]) -> list[Vector]:
    """Gaussian elimination with partial pivoting; pivots chosen by value."""
    n = len(A)
    aug = [list(A[i]) + [r[i] for r in rhs] for i in range(n)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(value_of(aug[r][col])))
        if abs(value_of(aug[piv][col])) == 0.0:
            raise PlacementError("singular matrix in placement solve")
        if piv != col:
            aug[col], aug[piv] = aug[piv], aug[col]
        inv = 1.0 / aug[col][col]
        aug[col] = [e * inv for e in aug[col]]
        for r in range(n):
            if r != col:
                f = aug[r][col]
                if value_of(f) != 0.0:
                    aug[r] = [e - f * g for e, g in zip(aug[r], aug[col])]
    return [tuple(aug[i][n + k] for i in range(n)) for k in range(len(rhs))]


def _charpoly(M: Matrix) -> list[Scalar]:
    """Coefficients [c_{n-1}, ..., c_0] of det(sI - M) = s^n + c_{n-1}
    s^{n-1} + ... + c_0, by Faddeev-LeVerrier over the scalar layer.
    """
    n = len(M)
    coeffs = []
    Mk = M
    for k in range(1, n + 1):
        tr = Mk[0][0]
        for i in range(1, n):
            tr = tr + Mk[i][i]
        ck = -tr / k
        coeffs.append(ck)
        if k < n:
            # M_{k+1} = M (M_k + c_k I)
            Mk = _mat_mul(M, _shift_diag(Mk, ck))
    return coeffs


def _shift_diag(A: Matrix, c: Scalar) -> Matrix:
    n = len(A)
    return tuple(tuple(A[i][j] + c if i == j else A[i][j] for j in range(n))
                 for i in range(n))


def ackermann_gains(A: Matrix, b: Vector, poles: Sequence[complex]) -> Vector:
    """Single-input pole placement K = e_n^T C^-1 phi(A).

    C is the controllability matrix [b, Ab, ..., A^{n-1} b] and phi the
    desired characteristic polynomial (real for conjugate-closed poles).
    Raises when C is numerically singular (1-norm condition estimate
    above 1e12).
    """
    n = len(A)
    ps = validate_poles(poles)
    if len(ps) != n:
        raise PlacementError(f"need {n} poles, got {len(ps)}")
    coeffs = characteristic_coefficients(ps)

    cols = [b]
    for _ in range(n - 1):
        cols.append(_mat_vec(A, cols[-1]))
    ctrb = tuple(tuple(cols[j][i] for j in range(n)) for i in range(n))

    # Condition estimate on values only; the guard is a feasibility check.
    vals = np.array([[value_of(e) for e in row] for row in ctrb])
    try:
        inv_vals = np.linalg.inv(vals)
    except np.linalg.LinAlgError as err:
        raise PlacementError(f"controllability matrix singular: {err}") from err
    cond = np.linalg.norm(vals, 1) * np.linalg.norm(inv_vals, 1)
    if cond > CONDITION_LIMIT:
        raise PlacementError(
            f"controllability matrix ill-conditioned (cond ~ {cond:.3e})")

    # phi(A) by Horner: phi = A^n + c_{n-1} A^{n-1} + ... + c_0 I.
    phi = _identity(n)
    for c in coeffs[1:]:
        phi = _mat_add_scaled(_mat_mul(phi, A), _identity(n), c)

    unit_rows = [tuple(1.0 if i == r else 0.0 for i in range(n)) for r in range(n)]
    # last row of C^-1: solve C^T y = e_n
    ct = tuple(tuple(ctrb[j][i] for j in range(n)) for i in range(n))
    (y,) = _solve(ct, [unit_rows[n - 1]])
    gains = tuple(sum_product(y, tuple(phi[i][j] for i in range(n)))
                  for j in range(n))
    return _exact_value_refine(A, b, gains, coeffs[1:])


def _exact_value_refine(A: Matrix, b: Vector, gains: Vector,
                        desired: Sequence[float]) -> Vector:
    """Polish the gain values in exact rational arithmetic.

    The coefficients of det(sI - A + bK) are exactly affine in K
    (rank-one update identity), so the placement is the solution of a
    linear system; solving it over Fractions removes the rounding that
    phi(A) accumulates on poorly conditioned systems.  Tangents keep
    their Ackermann values (the polish touches the value channel only).
    """
    n = len(A)
    Fa = [[Fraction(value_of(e)) for e in row] for row in A]
    Fb = [Fraction(value_of(e)) for e in b]

    def charpoly_exact(M):
        coeffs = []
        Mk = [row[:] for row in M]
        for k in range(1, n + 1):
            tr = sum(Mk[i][i] for i in range(n))
            ck = -tr / k
            coeffs.append(ck)
            if k < n:
                shifted = [[Mk[i][j] + ck if i == j else Mk[i][j]
                            for j in range(n)] for i in range(n)]
                Mk = [[sum(M[i][l] * shifted[l][j] for l in range(n))
                       for j in range(n)] for i in range(n)]
        return coeffs

    base = charpoly_exact(Fa)
    cols = []
    for j in range(n):
        bumped = [[Fa[i][k] - (Fb[i] if k == j else 0) for k in range(n)]
                  for i in range(n)]
        cols.append([c - c0 for c, c0 in zip(charpoly_exact(bumped), base)])
    rhs = [Fraction(float(d)) - c0 for d, c0 in zip(desired, base)]

    # exact Gaussian elimination on the affine system M K = rhs
    aug = [[cols[j][i] for j in range(n)] + [rhs[i]] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if aug[r][col] != 0), None)
        if piv is None:
            return gains
        if piv != col:
            aug[col], aug[piv] = aug[piv], aug[col]
        inv = aug[col][col]
        aug[col] = [e / inv for e in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [e - f * g for e, g in zip(aug[r], aug[col])]
    exact = [float(aug[i][n]) for i in range(n)]

    out = []
    for g, v in zip(gains, exact):
        out.append(Dual(v, g.tangents) if isinstance(g, Dual) else v)
    return tuple(out)


def place_poles(model: LateralModel, poles: Sequence[complex]) -> GainVector:
    """Feedback gains making eig(A - b1 K) equal the requested pole set."""
    k = ackermann_gains(model.A, model.b1, poles)
    return GainVector(*k)


def closed_loop_eigs(model: LateralModel, gains: GainVector) -> np.ndarray:
    """Eigenvalues of A - b1 K (verification utility, values only)."""
    A = np.array([[value_of(e) for e in row] for row in model.A])
    b = np.array([value_of(e) for e in model.b1]).reshape(-1, 1)
    k = np.array(gains.values()).reshape(1, -1)
    eigs = np.linalg.eigvals(A - b @ k)
    return np.sort_complex(eigs)


def control_law(gains: GainVector, x: ErrorState, max_steer: float) -> Scalar:
    """Saturated full-state feedback steering command."""
    raw = -(gains.k1 * x.e1 + gains.k2 * x.e1_dot
            + gains.k3 * x.e2 + gains.k4 * x.e2_dot)
    return fd.clip(raw, -max_steer, max_steer)


# -- error extraction -----------------------------------------------------


def wrap_angle(x: Scalar) -> Scalar:
    """Principal value in (-pi, pi]; the wrap offset is locally constant."""
    v = value_of(x)
    w = math.remainder(v, math.tau)
    if w <= -math.pi:
        w += math.tau
    elif w > math.pi:
        w -= math.tau
    return x + (w - v)


def compute_errors(pose, ref: ReferenceCircle, vx: float, prev: ErrorState,
                   alpha: float, dt: float,
                   scale_derivative_by_dt: bool = False) -> ErrorState:
    """Error state of a pose relative to a circular centerline.

    e1 is signed left-of-travel (see module docstring); the desired
    heading is the travel-direction tangent at the projection of the CG
    onto the circle.  Error rates are exponential moving averages of the
    raw sample-to-sample increments,

        e_dot[t] = (1 - alpha) e_dot[t-1] + alpha (e[t] - e[t-1]),

    which carry an implicit 1/dt factor absorbed into the gains; set
    ``scale_derivative_by_dt`` to divide increments by dt instead.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    rx = pose.s_x - ref.cx
    ry = pose.s_y - ref.cy
    dist = fd.hypot(rx, ry)
    if value_of(dist) == 0.0:
        raise ValueError("pose at circle center: projection undefined")

    # Left-of-travel is radially inward on a ccw circle, outward on cw.
    sign = -1.0 if ref.direction == "ccw" else 1.0
    e1 = sign * (dist - ref.radius)

    radial_angle = fd.atan2(ry, rx)
    quarter = math.pi / 2.0
    psi_des = radial_angle + (quarter if ref.direction == "ccw" else -quarter)
    e2 = wrap_angle(pose.psi - psi_des)

    scale = alpha / dt if scale_derivative_by_dt else alpha
    e1_dot = (1.0 - alpha) * prev.e1_dot + scale * (e1 - prev.e1)
    e2_dot = (1.0 - alpha) * prev.e2_dot + scale * (e2 - prev.e2)
    return ErrorState(e1=e1, e1_dot=e1_dot, e2=e2, e2_dot=e2_dot)
